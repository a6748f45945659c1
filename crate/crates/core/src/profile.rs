//! Profiles: one binary's structure catalog, its canonical JSON file format
//! and the on-disk repository layout `<root>/<version>/<arch>/<stem>.profile.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::{self, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{InvariantViolation, StoreError};
use crate::version::compare_versions;

pub const PROFILE_SCHEMA: &str = "structdrift-profile/1";
pub const PROFILE_SUFFIX: &str = ".profile.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "arm32")]
    Arm32,
    #[serde(rename = "arm64")]
    Arm64,
    #[serde(rename = "x86_32")]
    X86_32,
    #[serde(rename = "x86_64")]
    X86_64,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::Arm64,
        Architecture::X86_64,
        Architecture::Arm32,
        Architecture::X86_32,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::Arm32 => "arm32",
            Architecture::Arm64 => "arm64",
            Architecture::X86_32 => "x86_32",
            Architecture::X86_64 => "x86_64",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "arm32" => Ok(Architecture::Arm32),
            "arm64" => Ok(Architecture::Arm64),
            "x86_32" => Ok(Architecture::X86_32),
            "x86_64" => Ok(Architecture::X86_64),
            other => Err(format!(
                "unknown architecture {other:?} (expected arm32, arm64, x86_32 or x86_64)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileMeta {
    pub platform_version: String,
    pub architecture: Architecture,
    pub build_variant: String,
    pub binary_size_bytes: u64,
    pub dwarf_versions_seen: BTreeSet<u16>,
    pub raw_type_die_count: u64,
    pub extraction_tool_version: String,
}

impl ProfileMeta {
    pub fn new(platform_version: impl Into<String>, architecture: Architecture) -> Self {
        ProfileMeta {
            platform_version: platform_version.into(),
            architecture,
            build_variant: "eng".to_owned(),
            binary_size_bytes: 0,
            dwarf_versions_seen: BTreeSet::new(),
            raw_type_die_count: 0,
            extraction_tool_version: crate::TOOL_VERSION.to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberRecord {
    pub name: String,
    pub offset: u64,
}

impl MemberRecord {
    pub fn new(name: impl Into<String>, offset: u64) -> Self {
        MemberRecord {
            name: name.into(),
            offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructureRecord {
    pub name: String,
    pub size: u64,
    /// Sorted by `(offset, name)`.
    pub members: Vec<MemberRecord>,
}

impl StructureRecord {
    /// Builds a record with members put into canonical order.
    pub fn new(name: impl Into<String>, size: u64, mut members: Vec<MemberRecord>) -> Self {
        sort_members(&mut members);
        StructureRecord {
            name: name.into(),
            size,
            members,
        }
    }

    /// First member with this name, if any.
    pub fn member(&self, name: &str) -> Option<&MemberRecord> {
        self.members.iter().find(|m| m.name == name)
    }

    pub fn validate(&self) -> Result<(), InvariantViolation> {
        if self.name.is_empty() {
            return Err(InvariantViolation::EmptyStructureName);
        }
        if self.members.iter().any(|m| m.name.is_empty()) {
            return Err(InvariantViolation::EmptyMemberName(self.name.clone()));
        }
        if !self
            .members
            .windows(2)
            .all(|w| member_order(&w[0], &w[1]) != std::cmp::Ordering::Greater)
        {
            return Err(InvariantViolation::UnsortedMembers(self.name.clone()));
        }
        // Zero-sized trailing members (flexible arrays) sit at offset == size.
        if self.size > 0 {
            if let Some(m) = self.members.iter().find(|m| m.offset > self.size) {
                return Err(InvariantViolation::MemberOutOfBounds {
                    structure: self.name.clone(),
                    member: m.name.clone(),
                    offset: m.offset,
                    size: self.size,
                });
            }
        }
        Ok(())
    }
}

fn member_order(a: &MemberRecord, b: &MemberRecord) -> std::cmp::Ordering {
    (a.offset, &a.name).cmp(&(b.offset, &b.name))
}

/// Sorts members into the canonical `(offset, name)` order.
pub fn sort_members(members: &mut [MemberRecord]) {
    members.sort_by(member_order);
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Profile {
    pub meta: ProfileMeta,
    pub structures: BTreeMap<String, StructureRecord>,
}

impl Profile {
    pub fn new(meta: ProfileMeta) -> Self {
        Profile {
            meta,
            structures: BTreeMap::new(),
        }
    }

    /// Adds a structure; the name must not already be present.
    pub fn insert(&mut self, record: StructureRecord) -> Result<(), InvariantViolation> {
        if self.structures.contains_key(&record.name) {
            return Err(InvariantViolation::DuplicateStructure(record.name));
        }
        self.structures.insert(record.name.clone(), record);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&StructureRecord> {
        self.structures.get(name)
    }

    pub fn len(&self) -> usize {
        self.structures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.structures.is_empty()
    }

    pub fn version(&self) -> &str {
        &self.meta.platform_version
    }

    pub fn validate(&self) -> Result<(), InvariantViolation> {
        if let Some(&v) = self
            .meta
            .dwarf_versions_seen
            .iter()
            .find(|v| !(2..=5).contains(*v))
        {
            return Err(InvariantViolation::UnsupportedDwarfVersion(v));
        }
        for (key, record) in &self.structures {
            if *key != record.name {
                return Err(InvariantViolation::KeyMismatch {
                    key: key.clone(),
                    name: record.name.clone(),
                });
            }
            record.validate()?;
        }
        Ok(())
    }

    /// Serializes to the canonical file text (pretty JSON, trailing newline).
    pub fn to_canonical_json(&self) -> Result<String, InvariantViolation> {
        self.validate()?;
        Ok(crate::report::canonical_json(&ProfileFileRef {
            schema: PROFILE_SCHEMA,
            meta: &self.meta,
            structures: StructureMapRef(&self.structures),
        }))
    }

    /// Parses and validates canonical file text. `origin` labels errors.
    pub fn from_json_str(text: &str, origin: &str) -> Result<Profile, StoreError> {
        let file: ProfileFile =
            serde_json::from_str(text).map_err(|e| StoreError::schema(origin, e.to_string()))?;
        if file.schema != PROFILE_SCHEMA {
            return Err(StoreError::schema(
                origin,
                format!("expected schema {PROFILE_SCHEMA:?}, found {:?}", file.schema),
            ));
        }
        let mut profile = Profile::new(file.meta);
        for (name, wire) in file.structures.0 {
            let record = StructureRecord {
                name,
                size: wire.size,
                members: wire.members,
            };
            profile.insert(record).map_err(|violation| StoreError::Invariant {
                origin: origin.to_owned(),
                violation,
            })?;
        }
        profile.validate().map_err(|violation| StoreError::Invariant {
            origin: origin.to_owned(),
            violation,
        })?;
        Ok(profile)
    }
}

#[derive(Serialize)]
struct ProfileFileRef<'a> {
    schema: &'a str,
    meta: &'a ProfileMeta,
    structures: StructureMapRef<'a>,
}

struct StructureMapRef<'a>(&'a BTreeMap<String, StructureRecord>);

#[derive(Serialize)]
struct WireStructureRef<'a> {
    size: u64,
    members: &'a [MemberRecord],
}

impl Serialize for StructureMapRef<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.0.len()))?;
        for (name, record) in self.0 {
            map.serialize_entry(
                name,
                &WireStructureRef {
                    size: record.size,
                    members: &record.members,
                },
            )?;
        }
        map.end()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileFile {
    schema: String,
    meta: ProfileMeta,
    structures: StructureEntries,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireStructure {
    size: u64,
    members: Vec<MemberRecord>,
}

/// Structure map in file order; rejects repeated keys, which a plain map
/// deserializer would silently collapse.
struct StructureEntries(Vec<(String, WireStructure)>);

impl<'de> Deserialize<'de> for StructureEntries {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct EntriesVisitor;

        impl<'de> Visitor<'de> for EntriesVisitor {
            type Value = StructureEntries;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a map of structure name to layout")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
                let mut seen = BTreeSet::new();
                let mut entries = Vec::new();
                while let Some(name) = map.next_key::<String>()? {
                    if !seen.insert(name.clone()) {
                        return Err(de::Error::custom(format!(
                            "duplicate structure key {name:?}"
                        )));
                    }
                    let value: WireStructure = map.next_value()?;
                    entries.push((name, value));
                }
                Ok(StructureEntries(entries))
            }
        }

        deserializer.deserialize_map(EntriesVisitor)
    }
}

/// Writes `profile` to `destination` in canonical form.
pub fn write_profile(profile: &Profile, destination: &Path) -> Result<(), StoreError> {
    let text = profile
        .to_canonical_json()
        .map_err(|violation| StoreError::Invariant {
            origin: destination.display().to_string(),
            violation,
        })?;
    fs::write(destination, text).map_err(|source| StoreError::Io {
        path: destination.to_owned(),
        source,
    })
}

pub fn read_profile(source: &Path) -> Result<Profile, StoreError> {
    let bytes = fs::read(source).map_err(|source_err| StoreError::Io {
        path: source.to_owned(),
        source: source_err,
    })?;
    let origin = source.display().to_string();
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| StoreError::schema(&origin, format!("invalid UTF-8: {e}")))?;
    Profile::from_json_str(text, &origin)
}

/// Path of a profile inside a repository.
pub fn repository_path(
    root: &Path,
    platform_version: &str,
    architecture: Architecture,
    binary_stem: &str,
) -> PathBuf {
    root.join(platform_version)
        .join(architecture.as_str())
        .join(format!("{binary_stem}{PROFILE_SUFFIX}"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexEntry {
    pub platform_version: String,
    pub architecture: Architecture,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkippedEntry {
    pub path: PathBuf,
    pub reason: String,
}

/// Profiles found under a repository root, ordered by version then
/// architecture then path.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepositoryIndex {
    pub entries: Vec<IndexEntry>,
    pub skipped: Vec<SkippedEntry>,
}

impl RepositoryIndex {
    pub fn lookup(&self, platform_version: &str, architecture: Architecture) -> Option<&Path> {
        self.entries
            .iter()
            .find(|e| e.platform_version == platform_version && e.architecture == architecture)
            .map(|e| e.path.as_path())
    }

    /// Entries for one architecture in ascending version order.
    pub fn sequence(&self, architecture: Architecture) -> Vec<&IndexEntry> {
        self.entries
            .iter()
            .filter(|e| e.architecture == architecture)
            .collect()
    }

    pub fn architectures(&self) -> BTreeSet<Architecture> {
        self.entries.iter().map(|e| e.architecture).collect()
    }
}

#[derive(Deserialize)]
struct MetaOnly {
    meta: ProfileMeta,
}

fn sorted_dir(path: &Path) -> Result<Vec<PathBuf>, StoreError> {
    let read = fs::read_dir(path).map_err(|source| StoreError::Io {
        path: path.to_owned(),
        source,
    })?;
    let mut out = Vec::new();
    for entry in read {
        let entry = entry.map_err(|source| StoreError::Io {
            path: path.to_owned(),
            source,
        })?;
        out.push(entry.path());
    }
    out.sort();
    Ok(out)
}

fn file_name(path: &Path) -> &str {
    path.file_name().and_then(|n| n.to_str()).unwrap_or("")
}

/// Catalogs every `<root>/<version>/<arch>/<stem>.profile.json`. Files whose
/// metadata cannot be parsed, or disagrees with the directory they live in,
/// are reported in `skipped`.
pub fn index_repository(root: &Path) -> Result<RepositoryIndex, StoreError> {
    if !root.is_dir() {
        return Err(StoreError::RootMissing(root.to_owned()));
    }
    let mut index = RepositoryIndex::default();
    for version_dir in sorted_dir(root)?.into_iter().filter(|p| p.is_dir()) {
        let version = file_name(&version_dir).to_owned();
        for arch_dir in sorted_dir(&version_dir)?.into_iter().filter(|p| p.is_dir()) {
            let arch_name = file_name(&arch_dir).to_owned();
            for file in sorted_dir(&arch_dir)? {
                if !file.is_file() || !file_name(&file).ends_with(PROFILE_SUFFIX) {
                    continue;
                }
                let arch = match arch_name.parse::<Architecture>() {
                    Ok(arch) => arch,
                    Err(reason) => {
                        index.skipped.push(SkippedEntry { path: file, reason });
                        continue;
                    }
                };
                match read_meta(&file) {
                    Ok(meta) if meta.platform_version != version || meta.architecture != arch => {
                        index.skipped.push(SkippedEntry {
                            reason: format!(
                                "metadata says {}/{} but file is stored under {}/{}",
                                meta.platform_version, meta.architecture, version, arch
                            ),
                            path: file,
                        });
                    }
                    Ok(_) => index.entries.push(IndexEntry {
                        platform_version: version.clone(),
                        architecture: arch,
                        path: file,
                    }),
                    Err(reason) => index.skipped.push(SkippedEntry { path: file, reason }),
                }
            }
        }
    }
    index.entries.sort_by(|a, b| {
        compare_versions(&a.platform_version, &b.platform_version)
            .then_with(|| a.architecture.cmp(&b.architecture))
            .then_with(|| a.path.cmp(&b.path))
    });
    Ok(index)
}

fn read_meta(path: &Path) -> Result<ProfileMeta, String> {
    let bytes = fs::read(path).map_err(|e| e.to_string())?;
    let parsed: MetaOnly = serde_json::from_slice(&bytes).map_err(|e| e.to_string())?;
    Ok(parsed.meta)
}
