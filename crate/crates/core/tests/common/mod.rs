#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use proptest::prelude::*;
use structdrift::diff::{DiffReport, MemberChange};
use structdrift::{Architecture, MemberRecord, Profile, ProfileMeta, StructureRecord};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// (binary, record-layout dump) pairs; the dump is the compiler's own view of
/// every record in the source the binary was built from.
pub const LAYOUT_PAIRS: [(&str, &str); 7] = [
    ("three_x86_64_dw4.so", "three_x86_64.layout.txt"),
    ("three_x86_32_dw5.so", "three_x86_32.layout.txt"),
    ("three_arm32_dw4.so", "three_arm32.layout.txt"),
    ("runtime_arm64_dw5.so", "runtime_arm64.layout.txt"),
    ("runtime_arm32_dw4.so", "runtime_arm32.layout.txt"),
    ("runtime_x86_32_dw4.so", "runtime_x86_32.layout.txt"),
    ("runtime_x86_64_dw5.so", "runtime_x86_64.layout.txt"),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleRecord {
    pub size: u64,
    /// Direct fields as (name, byte offset). A vtable pointer is recorded as
    /// `vptr:<Class>`, an anonymous union as `UnNamed`.
    pub fields: Vec<(String, u64)>,
}

fn unqualify(name: &str) -> String {
    let head_end = name.find('<').unwrap_or(name.len());
    let start = name[..head_end].rfind("::").map_or(0, |i| i + 2);
    name[start..].replace("_Bool", "bool")
}

/// Parses the AST record layouts out of a clang `-fdump-record-layouts` dump.
/// Unions and anonymous records are skipped; duplicate dumps of the same
/// record are collapsed.
pub fn parse_layout_dump(text: &str) -> BTreeMap<String, OracleRecord> {
    let mut out = BTreeMap::new();
    let mut lines = text.lines().peekable();
    while let Some(line) = lines.next() {
        if line.trim() != "*** Dumping AST Record Layout" {
            continue;
        }
        let header = lines.next().expect("record header");
        let (_, decl) = header.split_once('|').expect("header column");
        let decl = decl.trim();
        let (kind, name) = decl.split_once(' ').expect("record kind");
        let mut fields = Vec::new();
        let mut size = None;
        while let Some(line) = lines.peek() {
            if line.trim().is_empty() || line.starts_with("***") {
                break;
            }
            let line = lines.next().unwrap();
            let (offset, rest) = line.split_once('|').expect("offset column");
            if let Some(i) = rest.find("[sizeof=") {
                let tail = &rest[i + 8..];
                let end = tail.find(',').unwrap();
                size = Some(tail[..end].parse::<u64>().unwrap());
                continue;
            }
            let offset = offset.trim();
            if offset.is_empty() {
                continue;
            }
            let indent = rest.len() - rest.trim_start().len();
            if indent != 3 {
                continue;
            }
            let field = rest.trim();
            if field.contains("(base)") || field.contains("(primary base)") || field.contains("(virtual base)") {
                continue;
            }
            let byte = offset.split(':').next().unwrap().parse::<u64>().unwrap();
            let field_name = if let Some(class) = field.strip_suffix(" vtable pointer)") {
                format!("vptr:{}", class.trim_start_matches('('))
            } else if field.ends_with(')') {
                "UnNamed".to_owned()
            } else {
                field.rsplit(' ').next().unwrap().to_owned()
            };
            fields.push((field_name, byte));
        }
        if kind == "union" || name.contains("(anonymous") || name.contains("(unnamed") {
            continue;
        }
        out.insert(
            unqualify(name),
            OracleRecord {
                size: size.expect("sizeof line"),
                fields,
            },
        );
    }
    out
}

/// Maps extracted member names onto the oracle's naming: compilers spell the
/// vtable pointer `_vptr.X` or `_vptr$X`.
pub fn oracle_view(record: &StructureRecord) -> OracleRecord {
    let mut fields: Vec<(String, u64)> = record
        .members
        .iter()
        .map(|m| {
            let name = match m.name.strip_prefix("_vptr") {
                Some(rest) if rest.starts_with(['.', '$']) => format!("vptr:{}", &rest[1..]),
                _ => m.name.clone(),
            };
            (name, m.offset)
        })
        .collect();
    fields.sort();
    OracleRecord {
        size: record.size,
        fields,
    }
}

pub fn sorted(mut record: OracleRecord) -> OracleRecord {
    record.fields.sort();
    record
}

/// DWARF versions declared by the unit headers in `.debug_info`, read with a
/// hand-rolled ELF section table walk.
pub fn raw_unit_versions(data: &[u8]) -> BTreeSet<u16> {
    assert_eq!(&data[..4], b"\x7fELF");
    let is64 = data[4] == 2;
    let little = data[5] == 1;
    let u16_at = |o: usize| {
        let b = [data[o], data[o + 1]];
        if little {
            u16::from_le_bytes(b)
        } else {
            u16::from_be_bytes(b)
        }
    };
    let u32_at = |o: usize| {
        let b: [u8; 4] = data[o..o + 4].try_into().unwrap();
        if little {
            u32::from_le_bytes(b)
        } else {
            u32::from_be_bytes(b)
        }
    };
    let u64_at = |o: usize| {
        let b: [u8; 8] = data[o..o + 8].try_into().unwrap();
        if little {
            u64::from_le_bytes(b)
        } else {
            u64::from_be_bytes(b)
        }
    };
    let (shoff, shentsize, shnum, shstrndx) = if is64 {
        (u64_at(0x28) as usize, u16_at(0x3a) as usize, u16_at(0x3c) as usize, u16_at(0x3e) as usize)
    } else {
        (u32_at(0x20) as usize, u16_at(0x2e) as usize, u16_at(0x30) as usize, u16_at(0x32) as usize)
    };
    let section = |i: usize| {
        let base = shoff + i * shentsize;
        if is64 {
            (u32_at(base) as usize, u64_at(base + 0x18) as usize, u64_at(base + 0x20) as usize)
        } else {
            (u32_at(base) as usize, u32_at(base + 0x10) as usize, u32_at(base + 0x14) as usize)
        }
    };
    let (_, strtab, _) = section(shstrndx);
    let mut versions = BTreeSet::new();
    for i in 0..shnum {
        let (name_off, offset, size) = section(i);
        let name_start = strtab + name_off;
        let name_end = name_start + data[name_start..].iter().position(|b| *b == 0).unwrap();
        if &data[name_start..name_end] != b".debug_info" {
            continue;
        }
        let mut pos = offset;
        while pos < offset + size {
            let mut length = u32_at(pos) as u64;
            let mut header = 4;
            if length == 0xffff_ffff {
                length = u64_at(pos + 4);
                header = 12;
            }
            versions.insert(u16_at(pos + header));
            pos += header + length as usize;
        }
    }
    versions
}

/// Versions listed in a `readelf --debug-dump=info` excerpt.
pub fn readelf_versions(text: &str) -> BTreeSet<u16> {
    text.lines()
        .filter_map(|l| l.trim().strip_prefix("Version:"))
        .map(|v| v.trim().parse().unwrap())
        .collect()
}

// --- generated profiles --------------------------------------------------

pub fn profile_from(version: &str, records: Vec<StructureRecord>) -> Profile {
    let mut p = Profile::new(ProfileMeta::new(version, Architecture::X86_64));
    for r in records {
        p.insert(r).unwrap();
    }
    p
}

/// Names drawn from a small pool so that independently generated profiles
/// overlap and repeated member names occur.
pub fn arb_record(name: String) -> impl Strategy<Value = StructureRecord> {
    (0u64..64, prop::collection::vec((0usize..6, 0u64..64), 0..=8)).prop_map(move |(extra, raw)| {
        let members: Vec<MemberRecord> = raw
            .into_iter()
            .map(|(n, o)| MemberRecord::new(format!("m{n}"), o))
            .collect();
        let size = members.iter().map(|m| m.offset).max().unwrap_or(0) + extra;
        StructureRecord::new(name.clone(), size, members)
    })
}

pub fn arb_records() -> impl Strategy<Value = Vec<StructureRecord>> {
    prop::collection::btree_set(0usize..14, 0..=10).prop_flat_map(|names| {
        names
            .into_iter()
            .map(|i| arb_record(format!("S{i}")))
            .collect::<Vec<_>>()
    })
}

pub fn arb_profile(version: &'static str) -> impl Strategy<Value = Profile> {
    arb_records().prop_map(move |r| profile_from(version, r))
}

/// A profile pair where the second is a perturbation of the first, so that
/// moves, additions and removals all occur often.
pub fn arb_related_pair() -> impl Strategy<Value = (Profile, Profile)> {
    (arb_records(), prop::collection::vec((any::<u8>(), 0u64..64, 0usize..6), 0..12), arb_records()).prop_map(
        |(base, edits, extra)| {
            let old = profile_from("1", base.clone());
            let mut new_records: BTreeMap<String, StructureRecord> =
                base.into_iter().map(|r| (r.name.clone(), r)).collect();
            for (k, value, m) in edits {
                let keys: Vec<String> = new_records.keys().cloned().collect();
                if keys.is_empty() {
                    break;
                }
                let key = &keys[k as usize % keys.len()];
                let rec = new_records.get_mut(key).unwrap();
                match k % 4 {
                    0 => {
                        new_records.remove(key);
                    }
                    1 if !rec.members.is_empty() => {
                        let i = value as usize % rec.members.len();
                        rec.members[i].offset = value;
                    }
                    2 if !rec.members.is_empty() => {
                        let i = value as usize % rec.members.len();
                        rec.members.remove(i);
                    }
                    _ if rec.members.len() < 8 => rec.members.push(MemberRecord::new(format!("m{m}"), value)),
                    _ => {}
                }
                let rec = new_records.get(key).cloned();
                if let Some(rec) = rec {
                    let size = rec.members.iter().map(|m| m.offset).max().unwrap_or(0).max(rec.size);
                    new_records.insert(key.clone(), StructureRecord::new(rec.name, size, rec.members));
                }
            }
            for r in extra.into_iter().filter(|r| r.name.ends_with('3') || r.name.ends_with('7')) {
                if new_records.len() < 10 {
                    new_records.entry(r.name.clone()).or_insert(r);
                }
            }
            (old, profile_from("2", new_records.into_values().collect()))
        },
    )
}

// --- brute-force diff oracle ---------------------------------------------

/// Diff computed by plain set operations over (structure, member, ordinal)
/// keys, with no shared code with the library's diff.
#[derive(Debug, Default, PartialEq, Eq)]
pub struct OracleDiff {
    pub added_structures: BTreeSet<String>,
    pub removed_structures: BTreeSet<String>,
    pub size_changes: BTreeSet<(String, u64, u64)>,
    pub member_additions: BTreeSet<(String, String, u64)>,
    pub member_removals: BTreeSet<(String, String, u64)>,
    pub offset_changes: BTreeSet<(String, String, u64, u64)>,
}

fn keyed_members(r: &StructureRecord) -> BTreeMap<(String, usize), u64> {
    let mut members: Vec<&MemberRecord> = r.members.iter().collect();
    members.sort_by(|a, b| (a.offset, &a.name).cmp(&(b.offset, &b.name)));
    let mut count: BTreeMap<&str, usize> = BTreeMap::new();
    let mut out = BTreeMap::new();
    for m in members {
        let c = count.entry(&m.name).or_default();
        out.insert((m.name.clone(), *c), m.offset);
        *c += 1;
    }
    out
}

pub fn oracle_diff(old: &Profile, new: &Profile) -> OracleDiff {
    let old_names: BTreeSet<&String> = old.structures.keys().collect();
    let new_names: BTreeSet<&String> = new.structures.keys().collect();
    let mut d = OracleDiff {
        added_structures: new_names.difference(&old_names).map(|s| (*s).clone()).collect(),
        removed_structures: old_names.difference(&new_names).map(|s| (*s).clone()).collect(),
        ..OracleDiff::default()
    };
    for name in old_names.intersection(&new_names) {
        let (a, b) = (&old.structures[*name], &new.structures[*name]);
        if a.size != b.size {
            d.size_changes.insert(((*name).clone(), a.size, b.size));
        }
        let (ka, kb) = (keyed_members(a), keyed_members(b));
        let sa: BTreeSet<&(String, usize)> = ka.keys().collect();
        let sb: BTreeSet<&(String, usize)> = kb.keys().collect();
        for k in sb.difference(&sa) {
            d.member_additions.insert(((*name).clone(), k.0.clone(), kb[*k]));
        }
        for k in sa.difference(&sb) {
            d.member_removals.insert(((*name).clone(), k.0.clone(), ka[*k]));
        }
        for k in sa.intersection(&sb) {
            if ka[*k] != kb[*k] {
                d.offset_changes.insert(((*name).clone(), k.0.clone(), ka[*k], kb[*k]));
            }
        }
    }
    d
}

/// The library diff flattened into the oracle's shape.
pub fn flatten(report: &DiffReport) -> OracleDiff {
    let mut d = OracleDiff {
        added_structures: report.added_structures.iter().cloned().collect(),
        removed_structures: report.removed_structures.iter().cloned().collect(),
        ..OracleDiff::default()
    };
    for s in &report.modified {
        if s.old_size != s.new_size {
            d.size_changes.insert((s.name.clone(), s.old_size, s.new_size));
        }
        for m in &s.member_additions {
            d.member_additions.insert((s.name.clone(), m.name.clone(), m.offset));
        }
        for m in &s.member_removals {
            d.member_removals.insert((s.name.clone(), m.name.clone(), m.offset));
        }
        for MemberChange {
            member_name,
            old_offset,
            new_offset,
        } in &s.offset_changes
        {
            d.offset_changes
                .insert((s.name.clone(), member_name.clone(), *old_offset, *new_offset));
        }
    }
    d
}

/// The same diff seen from the other direction.
pub fn reversed(d: &OracleDiff) -> OracleDiff {
    OracleDiff {
        added_structures: d.removed_structures.clone(),
        removed_structures: d.added_structures.clone(),
        size_changes: d.size_changes.iter().map(|(n, a, b)| (n.clone(), *b, *a)).collect(),
        member_additions: d.member_removals.clone(),
        member_removals: d.member_additions.clone(),
        offset_changes: d
            .offset_changes
            .iter()
            .map(|(n, m, a, b)| (n.clone(), m.clone(), *b, *a))
            .collect(),
    }
}

/// `profile` with one chain step knocked out: the structure removed, or just
/// the member.
pub fn without_structure(profile: &Profile, structure: &str) -> Profile {
    let mut p = profile.clone();
    p.structures.remove(structure);
    p
}

pub fn without_member(profile: &Profile, structure: &str, member: &str) -> Profile {
    let mut p = profile.clone();
    if let Some(r) = p.structures.get_mut(structure) {
        r.members.retain(|m| m.name != member);
    }
    p
}

/// A profile in which every step of every given chain resolves, with distinct
/// offsets per step.
pub fn profile_satisfying(version: &str, chains: &[structdrift::forensic::ChainSpec]) -> Profile {
    let mut members: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for chain in chains {
        for step in &chain.steps {
            members.entry(step.structure.clone()).or_default().insert(step.member.clone());
        }
    }
    let records = members
        .into_iter()
        .map(|(name, names)| {
            let count = names.len() as u64;
            StructureRecord::new(
                name,
                count * 8 + 8,
                names
                    .into_iter()
                    .enumerate()
                    .map(|(i, n)| MemberRecord::new(n, 8 + i as u64 * 8))
                    .collect(),
            )
        })
        .collect();
    profile_from(version, records)
}
