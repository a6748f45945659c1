//! Structure-level and member-level differences between two profiles.
//!
//! Members are matched by identity `(name, ordinal among members of the same
//! name)`, with ordinals taken in canonical `(offset, name)` order, so several
//! `UnNamed` members remain distinguishable.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AnalysisError, StoreError};
use crate::profile::{MemberRecord, Profile, StructureRecord};

pub const DIFF_SCHEMA: &str = "structdrift-diff/1";

/// A member present on both sides whose offset moved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberChange {
    #[serde(rename = "member")]
    pub member_name: String,
    #[serde(rename = "old")]
    pub old_offset: u64,
    #[serde(rename = "new")]
    pub new_offset: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureDiff {
    pub name: String,
    pub old_size: u64,
    pub new_size: u64,
    pub member_additions: Vec<MemberRecord>,
    pub member_removals: Vec<MemberRecord>,
    pub offset_changes: Vec<MemberChange>,
}

impl StructureDiff {
    pub fn is_empty(&self) -> bool {
        self.old_size == self.new_size
            && self.member_additions.is_empty()
            && self.member_removals.is_empty()
            && self.offset_changes.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiffReport {
    pub from_label: String,
    pub to_label: String,
    pub added_structures: Vec<String>,
    pub removed_structures: Vec<String>,
    pub modified: Vec<StructureDiff>,
    pub unchanged_count: usize,
}

/// Change totals for one transition. `total_impact` leaves out structure
/// additions and size-only changes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChangeCounts {
    pub offset_changes: u64,
    pub member_additions: u64,
    pub member_removals: u64,
    pub structure_removals: u64,
    pub structure_additions: u64,
    pub total_impact: u64,
}

impl ChangeCounts {
    fn finish(mut self) -> Self {
        self.total_impact =
            self.offset_changes + self.member_additions + self.member_removals + self.structure_removals;
        self
    }

    /// Column-wise sum.
    pub fn sum<'a>(rows: impl IntoIterator<Item = &'a ChangeCounts>) -> ChangeCounts {
        rows.into_iter()
            .fold(ChangeCounts::default(), |acc, r| ChangeCounts {
                offset_changes: acc.offset_changes + r.offset_changes,
                member_additions: acc.member_additions + r.member_additions,
                member_removals: acc.member_removals + r.member_removals,
                structure_removals: acc.structure_removals + r.structure_removals,
                structure_additions: acc.structure_additions + r.structure_additions,
                total_impact: 0,
            })
            .finish()
    }
}

pub type MemberIdentity<'a> = (&'a str, usize);

/// Members keyed by identity, in canonical order.
pub fn member_identities(record: &StructureRecord) -> Vec<(MemberIdentity<'_>, &MemberRecord)> {
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    record
        .members
        .iter()
        .map(|m| {
            let ordinal = seen.entry(m.name.as_str()).or_insert(0);
            let id = (m.name.as_str(), *ordinal);
            *ordinal += 1;
            (id, m)
        })
        .collect()
}

pub fn diff_structure(old: &StructureRecord, new: &StructureRecord) -> Result<StructureDiff, AnalysisError> {
    if old.name != new.name {
        return Err(AnalysisError::NameMismatch {
            old: old.name.clone(),
            new: new.name.clone(),
        });
    }
    let old_ids = member_identities(old);
    let new_ids = member_identities(new);
    let new_by_id: BTreeMap<_, _> = new_ids.iter().map(|(id, m)| (*id, *m)).collect();
    let old_by_id: BTreeMap<_, _> = old_ids.iter().map(|(id, m)| (*id, *m)).collect();

    let mut diff = StructureDiff {
        name: old.name.clone(),
        old_size: old.size,
        new_size: new.size,
        member_additions: Vec::new(),
        member_removals: Vec::new(),
        offset_changes: Vec::new(),
    };
    for (id, member) in &old_ids {
        match new_by_id.get(id) {
            None => diff.member_removals.push((*member).clone()),
            Some(moved) if moved.offset != member.offset => diff.offset_changes.push(MemberChange {
                member_name: member.name.clone(),
                old_offset: member.offset,
                new_offset: moved.offset,
            }),
            Some(_) => {}
        }
    }
    diff.member_additions = new_ids
        .iter()
        .filter(|(id, _)| !old_by_id.contains_key(id))
        .map(|(_, m)| (*m).clone())
        .collect();
    Ok(diff)
}

/// Compares two catalogs, optionally restricted to the names in `scope`.
pub fn diff_profiles(old: &Profile, new: &Profile, scope: Option<&[String]>) -> DiffReport {
    let scope: Option<BTreeSet<&str>> = scope.map(|s| s.iter().map(String::as_str).collect());
    let in_scope = |name: &str| scope.as_ref().is_none_or(|s| s.contains(name));

    let mut report = DiffReport {
        from_label: old.meta.platform_version.clone(),
        to_label: new.meta.platform_version.clone(),
        added_structures: Vec::new(),
        removed_structures: Vec::new(),
        modified: Vec::new(),
        unchanged_count: 0,
    };
    for (name, old_record) in old.structures.iter().filter(|(n, _)| in_scope(n)) {
        match new.structures.get(name) {
            None => report.removed_structures.push(name.clone()),
            Some(new_record) => {
                let diff = diff_structure(old_record, new_record).expect("catalog keys match names");
                if diff.is_empty() {
                    report.unchanged_count += 1;
                } else {
                    report.modified.push(diff);
                }
            }
        }
    }
    report.added_structures = new
        .structures
        .keys()
        .filter(|n| in_scope(n) && !old.structures.contains_key(*n))
        .cloned()
        .collect();
    report
}

pub fn summarize_diff(report: &DiffReport) -> ChangeCounts {
    let mut counts = ChangeCounts {
        structure_removals: report.removed_structures.len() as u64,
        structure_additions: report.added_structures.len() as u64,
        ..ChangeCounts::default()
    };
    for diff in &report.modified {
        counts.offset_changes += diff.offset_changes.len() as u64;
        counts.member_additions += diff.member_additions.len() as u64;
        counts.member_removals += diff.member_removals.len() as u64;
    }
    counts.finish()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiffFile {
    schema: String,
    from: String,
    to: String,
    added_structures: Vec<String>,
    removed_structures: Vec<String>,
    modified: Vec<StructureDiff>,
    unchanged_count: usize,
}

impl DiffReport {
    pub fn to_canonical_json(&self) -> String {
        crate::report::canonical_json(&DiffFile {
            schema: DIFF_SCHEMA.to_owned(),
            from: self.from_label.clone(),
            to: self.to_label.clone(),
            added_structures: self.added_structures.clone(),
            removed_structures: self.removed_structures.clone(),
            modified: self.modified.clone(),
            unchanged_count: self.unchanged_count,
        })
    }

    pub fn from_json_str(text: &str, origin: &str) -> Result<DiffReport, StoreError> {
        let file: DiffFile =
            serde_json::from_str(text).map_err(|e| StoreError::schema(origin, e.to_string()))?;
        if file.schema != DIFF_SCHEMA {
            return Err(StoreError::schema(
                origin,
                format!("expected schema {DIFF_SCHEMA:?}, found {:?}", file.schema),
            ));
        }
        Ok(DiffReport {
            from_label: file.from,
            to_label: file.to,
            added_structures: file.added_structures,
            removed_structures: file.removed_structures,
            modified: file.modified,
            unchanged_count: file.unchanged_count,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.added_structures.is_empty() && self.removed_structures.is_empty() && self.modified.is_empty()
    }
}

pub fn read_diff(source: &Path) -> Result<DiffReport, StoreError> {
    let text = fs::read_to_string(source).map_err(|e| StoreError::Io {
        path: source.to_owned(),
        source: e,
    })?;
    DiffReport::from_json_str(&text, &source.display().to_string())
}
