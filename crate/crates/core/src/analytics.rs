//! Analyses over a single diff or an ordered sequence of profiles.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diff::{diff_profiles, diff_structure, member_identities, summarize_diff, ChangeCounts, StructureDiff};
use crate::error::{AnalysisError, ExtractError};
use crate::extract::{extract_profile, ExtractionHints};
use crate::profile::Profile;
use crate::version::compare_versions;

/// A pair of consecutive versions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transition {
    pub from: String,
    pub to: String,
}

impl Transition {
    pub fn new(from: impl Into<String>, to: impl Into<String>) -> Self {
        Transition {
            from: from.into(),
            to: to.into(),
        }
    }

    pub fn between(old: &Profile, new: &Profile) -> Self {
        Transition::new(old.version(), new.version())
    }
}

impl fmt::Display for Transition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.from, self.to)
    }
}

/// Sorts a sequence by version and checks that it is usable: at least
/// `required` profiles, one architecture, no repeated version.
pub fn ordered_sequence(profiles: &[Profile], required: usize) -> Result<Vec<&Profile>, AnalysisError> {
    if profiles.len() < required {
        return Err(AnalysisError::SequenceTooShort {
            required,
            actual: profiles.len(),
        });
    }
    let mut seq: Vec<&Profile> = profiles.iter().collect();
    seq.sort_by(|a, b| compare_versions(a.version(), b.version()));
    if let Some(first) = seq.first() {
        if let Some(other) = seq.iter().find(|p| p.meta.architecture != first.meta.architecture) {
            return Err(AnalysisError::MixedArchitectures {
                first: first.meta.architecture.to_string(),
                other: other.meta.architecture.to_string(),
            });
        }
    }
    if let Some(w) = seq
        .windows(2)
        .find(|w| compare_versions(w[0].version(), w[1].version()) == Ordering::Equal)
    {
        return Err(AnalysisError::DuplicateVersion(w[0].version().to_owned()));
    }
    Ok(seq)
}

/// Structure names to analyse: the watchlist, or every name in the sequence.
fn scope_names(seq: &[&Profile], watchlist: Option<&[String]>) -> Vec<String> {
    match watchlist {
        Some(list) => list.to_vec(),
        None => seq
            .iter()
            .flat_map(|p| p.structures.keys().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    }
}

// --- impact scores -------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpactFactors {
    /// Moved members over members present on both sides.
    pub offset_fraction: f64,
    /// Added plus removed members over the old member count.
    pub churn_ratio: f64,
    /// Absolute size change over the old size.
    pub size_delta_fraction: f64,
}

/// Weights of the three impact factors. Churn and size factors are capped at
/// 1 before weighting and the weighted sum is clamped to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpactWeights {
    pub offset: f64,
    pub churn: f64,
    pub size: f64,
}

impl Default for ImpactWeights {
    fn default() -> Self {
        ImpactWeights {
            offset: 0.5,
            churn: 0.3,
            size: 0.2,
        }
    }
}

impl ImpactWeights {
    /// All weights must be finite and strictly positive so that a zero score
    /// means no change at all.
    pub fn new(offset: f64, churn: f64, size: f64) -> Option<Self> {
        [offset, churn, size]
            .iter()
            .all(|w| w.is_finite() && *w > 0.0)
            .then_some(ImpactWeights { offset, churn, size })
    }

    pub fn combine(&self, f: &ImpactFactors) -> f64 {
        let raw = self.offset * f.offset_fraction.min(1.0)
            + self.churn * f.churn_ratio.min(1.0)
            + self.size * f.size_delta_fraction.min(1.0);
        raw.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpactScore {
    pub structure: String,
    pub transition: Transition,
    pub score: f64,
    pub factors: ImpactFactors,
}

pub fn impact_factors(diff: &StructureDiff, old_member_count: usize) -> ImpactFactors {
    let removed = diff.member_removals.len();
    let shared = old_member_count.saturating_sub(removed);
    let churn = diff.member_additions.len() + removed;
    ImpactFactors {
        offset_fraction: diff.offset_changes.len() as f64 / shared.max(1) as f64,
        churn_ratio: churn as f64 / old_member_count.max(1) as f64,
        size_delta_fraction: diff.old_size.abs_diff(diff.new_size) as f64 / diff.old_size.max(1) as f64,
    }
}

/// Scores one structure's change. `old_member_count` is the member count of
/// the older record, which the diff alone does not carry.
pub fn impact_score_with(
    diff: &StructureDiff,
    old_member_count: usize,
    transition: Transition,
    weights: &ImpactWeights,
) -> ImpactScore {
    let factors = impact_factors(diff, old_member_count);
    ImpactScore {
        structure: diff.name.clone(),
        transition,
        score: weights.combine(&factors),
        factors,
    }
}

pub fn impact_score(diff: &StructureDiff, old_member_count: usize, transition: Transition) -> ImpactScore {
    impact_score_with(diff, old_member_count, transition, &ImpactWeights::default())
}

/// Structure × transition scores; `None` where the structure is missing on
/// either side of the transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpactMatrix {
    pub structures: Vec<String>,
    pub transitions: Vec<Transition>,
    pub cells: Vec<Vec<Option<ImpactScore>>>,
}

impl ImpactMatrix {
    pub fn get(&self, structure: &str, transition: usize) -> Option<&ImpactScore> {
        let row = self.structures.iter().position(|s| s == structure)?;
        self.cells[row][transition].as_ref()
    }
}

pub fn impact_matrix_with(
    profiles: &[Profile],
    watchlist: &[String],
    weights: &ImpactWeights,
) -> Result<ImpactMatrix, AnalysisError> {
    let seq = ordered_sequence(profiles, 2)?;
    let transitions: Vec<Transition> = seq.windows(2).map(|w| Transition::between(w[0], w[1])).collect();
    let cells = watchlist
        .iter()
        .map(|name| {
            seq.windows(2)
                .zip(&transitions)
                .map(|(w, t)| {
                    let old = w[0].get(name)?;
                    let new = w[1].get(name)?;
                    let diff = diff_structure(old, new).ok()?;
                    Some(impact_score_with(&diff, old.members.len(), t.clone(), weights))
                })
                .collect()
        })
        .collect();
    Ok(ImpactMatrix {
        structures: watchlist.to_vec(),
        transitions,
        cells,
    })
}

pub fn impact_matrix(profiles: &[Profile], watchlist: &[String]) -> Result<ImpactMatrix, AnalysisError> {
    impact_matrix_with(profiles, watchlist, &ImpactWeights::default())
}

// --- timelines -----------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimelinePoint {
    pub version: String,
    /// `None` marks a version where the subject does not exist.
    pub value: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimelineReport {
    pub structure: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub member: Option<String>,
    pub points: Vec<TimelinePoint>,
}

impl TimelineReport {
    pub fn values(&self) -> Vec<Option<u64>> {
        self.points.iter().map(|p| p.value).collect()
    }
}

pub fn size_timeline(profiles: &[Profile], structure: &str) -> Result<TimelineReport, AnalysisError> {
    let seq = ordered_sequence(profiles, 0)?;
    Ok(TimelineReport {
        structure: structure.to_owned(),
        member: None,
        points: seq
            .iter()
            .map(|p| TimelinePoint {
                version: p.version().to_owned(),
                value: p.get(structure).map(|r| r.size),
            })
            .collect(),
    })
}

/// Offset of the `ordinal`-th member called `member` in each version.
pub fn member_offset_timeline_at(
    profiles: &[Profile],
    structure: &str,
    member: &str,
    ordinal: usize,
) -> Result<TimelineReport, AnalysisError> {
    let seq = ordered_sequence(profiles, 0)?;
    Ok(TimelineReport {
        structure: structure.to_owned(),
        member: Some(member.to_owned()),
        points: seq
            .iter()
            .map(|p| TimelinePoint {
                version: p.version().to_owned(),
                value: p.get(structure).and_then(|r| {
                    member_identities(r)
                        .into_iter()
                        .find(|(id, _)| *id == (member, ordinal))
                        .map(|(_, m)| m.offset)
                }),
            })
            .collect(),
    })
}

pub fn member_offset_timeline(
    profiles: &[Profile],
    structure: &str,
    member: &str,
) -> Result<TimelineReport, AnalysisError> {
    member_offset_timeline_at(profiles, structure, member, 0)
}

// --- volatility ----------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureVolatility {
    pub surviving_members: u64,
    pub members_with_offset_change: u64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolatilityStats {
    pub per_structure: BTreeMap<String, StructureVolatility>,
    pub surviving_members: u64,
    pub members_with_offset_change: u64,
    /// Pooled over all structures, not the mean of per-structure rates.
    pub overall_rate: f64,
}

fn rate(numerator: u64, denominator: u64) -> f64 {
    if denominator == 0 {
        0.0
    } else {
        numerator as f64 / denominator as f64
    }
}

/// Share of surviving members that moved at least once. A member survives a
/// transition when it exists on both sides; each member identity is counted
/// once over the whole sequence. `watchlist = None` covers all structures.
pub fn volatility_stats(profiles: &[Profile], watchlist: Option<&[String]>) -> Result<VolatilityStats, AnalysisError> {
    let seq = ordered_sequence(profiles, 2)?;
    let mut per_structure = BTreeMap::new();
    for name in scope_names(&seq, watchlist) {
        if !seq.iter().any(|p| p.get(&name).is_some()) {
            continue;
        }
        let mut surviving: BTreeSet<(String, usize)> = BTreeSet::new();
        let mut moved: BTreeSet<(String, usize)> = BTreeSet::new();
        for w in seq.windows(2) {
            let (Some(old), Some(new)) = (w[0].get(&name), w[1].get(&name)) else {
                continue;
            };
            let new_ids: BTreeMap<_, _> = member_identities(new).into_iter().collect();
            for (id, member) in member_identities(old) {
                if let Some(after) = new_ids.get(&id) {
                    let key = (id.0.to_owned(), id.1);
                    if after.offset != member.offset {
                        moved.insert(key.clone());
                    }
                    surviving.insert(key);
                }
            }
        }
        let (s, m) = (surviving.len() as u64, moved.len() as u64);
        per_structure.insert(
            name,
            StructureVolatility {
                surviving_members: s,
                members_with_offset_change: m,
                rate: rate(m, s),
            },
        );
    }
    let surviving: u64 = per_structure.values().map(|v| v.surviving_members).sum();
    let moved: u64 = per_structure.values().map(|v| v.members_with_offset_change).sum();
    Ok(VolatilityStats {
        per_structure,
        surviving_members: surviving,
        members_with_offset_change: moved,
        overall_rate: rate(moved, surviving),
    })
}

// --- binary statistics ---------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinaryStats {
    pub platform_version: String,
    pub architecture: String,
    pub binary_size_bytes: u64,
    /// Bytes / 1,000,000, rounded to two decimals.
    pub binary_size_mb: f64,
    /// Class/structure DIEs, declarations and duplicates included.
    pub symbol_count: u64,
    /// Distinct structure names in the catalog.
    pub unique_structure_count: u64,
    pub dwarf_versions: BTreeSet<u16>,
}

pub fn size_in_mb(bytes: u64) -> f64 {
    (bytes as f64 / 10_000.0).round() / 100.0
}

pub fn binary_stats_of_profile(profile: &Profile) -> BinaryStats {
    BinaryStats {
        platform_version: profile.meta.platform_version.clone(),
        architecture: profile.meta.architecture.to_string(),
        binary_size_bytes: profile.meta.binary_size_bytes,
        binary_size_mb: size_in_mb(profile.meta.binary_size_bytes),
        symbol_count: profile.meta.raw_type_die_count,
        unique_structure_count: profile.len() as u64,
        dwarf_versions: profile.meta.dwarf_versions_seen.clone(),
    }
}

pub fn binary_stats_of_binary(binary: &Path, hints: &ExtractionHints) -> Result<BinaryStats, ExtractError> {
    let extraction = extract_profile(binary, hints)?;
    Ok(binary_stats_of_profile(&extraction.profile))
}

// --- aggregates ----------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregateRow {
    pub transition: Transition,
    pub counts: ChangeCounts,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregateReport {
    /// Label of the structure scope the rows were computed over.
    pub scope: String,
    pub rows: Vec<AggregateRow>,
    pub total: ChangeCounts,
}

pub fn aggregate_transitions(
    profiles: &[Profile],
    watchlist: Option<&[String]>,
    scope_label: &str,
) -> Result<AggregateReport, AnalysisError> {
    let seq = ordered_sequence(profiles, 2)?;
    let rows: Vec<AggregateRow> = seq
        .windows(2)
        .map(|w| AggregateRow {
            transition: Transition::between(w[0], w[1]),
            counts: summarize_diff(&diff_profiles(w[0], w[1], watchlist)),
        })
        .collect();
    let total = ChangeCounts::sum(rows.iter().map(|r| &r.counts));
    Ok(AggregateReport {
        scope: scope_label.to_owned(),
        rows,
        total,
    })
}
