//! Forensic watchlists and traversal chains.
//!
//! A chain is the ordered list of `(structure, member)` hops a memory
//! forensics tool follows to reach its evidence, e.g. `Runtime.thread_list_`
//! then `ThreadList.list_` to enumerate threads. Resolving a chain against a
//! profile only checks that every hop still exists and records its offset;
//! nothing is dereferenced.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analytics::{ordered_sequence, Transition};
use crate::error::{AnalysisError, StoreError};
use crate::profile::Profile;
use crate::version::VersionRange;

pub const CHAINS_SCHEMA: &str = "structdrift-chains/1";
pub const WATCHLIST_SCHEMA: &str = "structdrift-watchlist/1";

const SHIPPED_CHAINS: &str = include_str!("../data/chains.json");

/// Structures the runtime's forensic tooling is known to depend on.
pub const CORE_WATCHLIST: [&str; 17] = [
    "Runtime",
    "Thread",
    "ThreadList",
    "Heap",
    "RegionSpace",
    "Region",
    "Object",
    "Class",
    "DexFile",
    "DexCache",
    "OatFileManager",
    "JitCodeCache",
    "ProfilingInfo",
    "ArtMethod",
    "Monitor",
    "MemMap",
    "tls_32bit_sized_values",
];

/// Additional runtime structures chosen to pad the default watchlist to 34
/// entries: thread-local storage blocks, allocation spaces, class linking
/// and locking.
pub const SUPPLEMENTAL_WATCHLIST: [&str; 17] = [
    "tls_64bit_sized_values",
    "tls_ptr_sized_values",
    "OatFile",
    "ClassLinker",
    "JavaVMExt",
    "MonitorList",
    "MonitorPool",
    "Space",
    "ContinuousSpace",
    "MallocSpace",
    "RosAllocSpace",
    "RosAlloc",
    "LargeObjectSpace",
    "ImageSpace",
    "ConcurrentCopying",
    "Mutex",
    "ThreadPool",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WatchlistSpec {
    pub name: String,
    pub structures: Vec<String>,
}

impl WatchlistSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.structures.is_empty() {
            return Err(format!("watchlist {:?} is empty", self.name));
        }
        let mut seen = BTreeSet::new();
        if let Some(dup) = self.structures.iter().find(|s| !seen.insert(s.as_str())) {
            return Err(format!("watchlist {:?} lists {dup:?} twice", self.name));
        }
        Ok(())
    }

    /// Human-readable scope label used in reports.
    pub fn label(&self) -> String {
        if *self == default_watchlist() {
            format!(
                "default ({} core + {} supplemental structures)",
                CORE_WATCHLIST.len(),
                SUPPLEMENTAL_WATCHLIST.len()
            )
        } else {
            format!("{} ({} structures)", self.name, self.structures.len())
        }
    }

    pub fn to_canonical_json(&self) -> String {
        crate::report::canonical_json(&WatchlistFile {
            schema: WATCHLIST_SCHEMA.to_owned(),
            name: self.name.clone(),
            structures: self.structures.clone(),
        })
    }

    pub fn from_json_str(text: &str, origin: &str) -> Result<WatchlistSpec, StoreError> {
        let file: WatchlistFile =
            serde_json::from_str(text).map_err(|e| StoreError::schema(origin, e.to_string()))?;
        if file.schema != WATCHLIST_SCHEMA {
            return Err(StoreError::schema(
                origin,
                format!("expected schema {WATCHLIST_SCHEMA:?}, found {:?}", file.schema),
            ));
        }
        let spec = WatchlistSpec {
            name: file.name,
            structures: file.structures,
        };
        spec.validate().map_err(|m| StoreError::schema(origin, m))?;
        Ok(spec)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WatchlistFile {
    schema: String,
    name: String,
    structures: Vec<String>,
}

/// The built-in 34-structure watchlist: [`CORE_WATCHLIST`] followed by
/// [`SUPPLEMENTAL_WATCHLIST`].
pub fn default_watchlist() -> WatchlistSpec {
    WatchlistSpec {
        name: "default".to_owned(),
        structures: CORE_WATCHLIST
            .iter()
            .chain(SUPPLEMENTAL_WATCHLIST.iter())
            .map(|s| (*s).to_owned())
            .collect(),
    }
}

pub fn read_watchlist(path: &Path) -> Result<WatchlistSpec, StoreError> {
    let text = read_text(path)?;
    WatchlistSpec::from_json_str(&text, &path.display().to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    ThreadEnumeration,
    HeapAnalysis,
    ObjectReconstruction,
    DexRecovery,
}

impl Capability {
    pub fn as_str(self) -> &'static str {
        match self {
            Capability::ThreadEnumeration => "thread_enumeration",
            Capability::HeapAnalysis => "heap_analysis",
            Capability::ObjectReconstruction => "object_reconstruction",
            Capability::DexRecovery => "dex_recovery",
        }
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainStep {
    pub structure: String,
    pub member: String,
}

impl ChainStep {
    pub fn new(structure: impl Into<String>, member: impl Into<String>) -> Self {
        ChainStep {
            structure: structure.into(),
            member: member.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    pub id: String,
    pub capability: Capability,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub applicable_versions: Option<VersionRange>,
    pub steps: Vec<ChainStep>,
}

impl ChainSpec {
    pub fn applies_to(&self, version: &str) -> bool {
        self.applicable_versions
            .as_ref()
            .is_none_or(|r| r.contains(version))
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.steps.is_empty() {
            return Err(format!("chain {:?} has no steps", self.id));
        }
        if let Some(range) = &self.applicable_versions {
            if !range.is_well_ordered() {
                return Err(format!("chain {:?} has an inverted version range", self.id));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainsFile {
    schema: String,
    chains: Vec<ChainSpec>,
}

pub fn chains_to_json(chains: &[ChainSpec]) -> String {
    crate::report::canonical_json(&ChainsFile {
        schema: CHAINS_SCHEMA.to_owned(),
        chains: chains.to_vec(),
    })
}

pub fn chains_from_json_str(text: &str, origin: &str) -> Result<Vec<ChainSpec>, StoreError> {
    let file: ChainsFile =
        serde_json::from_str(text).map_err(|e| StoreError::schema(origin, e.to_string()))?;
    if file.schema != CHAINS_SCHEMA {
        return Err(StoreError::schema(
            origin,
            format!("expected schema {CHAINS_SCHEMA:?}, found {:?}", file.schema),
        ));
    }
    let mut ids = BTreeSet::new();
    for chain in &file.chains {
        chain.validate().map_err(|m| StoreError::schema(origin, m))?;
        if !ids.insert(chain.id.as_str()) {
            return Err(StoreError::schema(origin, format!("duplicate chain id {:?}", chain.id)));
        }
    }
    Ok(file.chains)
}

pub fn read_chains(path: &Path) -> Result<Vec<ChainSpec>, StoreError> {
    let text = read_text(path)?;
    chains_from_json_str(&text, &path.display().to_string())
}

/// Chain definitions bundled with the crate.
pub fn default_chains() -> Vec<ChainSpec> {
    chains_from_json_str(SHIPPED_CHAINS, "built-in chains").expect("bundled chain file is valid")
}

fn read_text(path: &Path) -> Result<String, StoreError> {
    let bytes = fs::read(path).map_err(|source| StoreError::Io {
        path: path.to_owned(),
        source,
    })?;
    String::from_utf8(bytes).map_err(|e| StoreError::schema(path.display().to_string(), format!("invalid UTF-8: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureReason {
    StructureMissing,
    MemberMissing,
    ChainNotApplicable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepFailure {
    pub step: usize,
    pub reason: FailureReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolvedStep {
    pub structure: String,
    pub member: String,
    pub offset: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainStatus {
    Resolved,
    Broken,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainReport {
    pub chain_id: String,
    pub capability: Capability,
    pub status: ChainStatus,
    pub resolved_steps: Vec<ResolvedStep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_failure: Option<StepFailure>,
}

impl ChainReport {
    pub fn is_resolved(&self) -> bool {
        self.status == ChainStatus::Resolved
    }

    /// Broken because a structure or member disappeared, as opposed to the
    /// chain not applying to this version.
    pub fn is_breakage(&self) -> bool {
        matches!(
            self.first_failure,
            Some(StepFailure {
                reason: FailureReason::StructureMissing | FailureReason::MemberMissing,
                ..
            })
        )
    }
}

pub fn resolve_chain(profile: &Profile, chain: &ChainSpec) -> ChainReport {
    let mut report = ChainReport {
        chain_id: chain.id.clone(),
        capability: chain.capability,
        status: ChainStatus::Broken,
        resolved_steps: Vec::new(),
        first_failure: None,
    };
    if !chain.applies_to(profile.version()) {
        report.first_failure = Some(StepFailure {
            step: 0,
            reason: FailureReason::ChainNotApplicable,
        });
        return report;
    }
    for (index, step) in chain.steps.iter().enumerate() {
        let Some(record) = profile.get(&step.structure) else {
            report.first_failure = Some(StepFailure {
                step: index,
                reason: FailureReason::StructureMissing,
            });
            return report;
        };
        let Some(member) = record.member(&step.member) else {
            report.first_failure = Some(StepFailure {
                step: index,
                reason: FailureReason::MemberMissing,
            });
            return report;
        };
        report.resolved_steps.push(ResolvedStep {
            structure: step.structure.clone(),
            member: step.member.clone(),
            offset: member.offset,
        });
    }
    report.status = ChainStatus::Resolved;
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CapabilityStatus {
    Resolved,
    Broken,
    /// No chain for the capability applies to this version.
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VersionAssessment {
    pub version: String,
    pub capabilities: BTreeMap<Capability, CapabilityStatus>,
    pub chains: Vec<ChainReport>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Annotation {
    /// A capability's status differs across a transition.
    CapabilityFlip {
        transition: Transition,
        capability: Capability,
        from: CapabilityStatus,
        to: CapabilityStatus,
    },
    /// A chain resolved on both sides but a hop moved: still usable after
    /// updating the offset.
    MaintenanceRequired {
        transition: Transition,
        chain_id: String,
        step: usize,
        structure: String,
        member: String,
        old_offset: u64,
        new_offset: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapabilityAssessment {
    pub versions: Vec<VersionAssessment>,
    pub annotations: Vec<Annotation>,
}

impl CapabilityAssessment {
    pub fn status(&self, version: &str, capability: Capability) -> Option<CapabilityStatus> {
        self.versions
            .iter()
            .find(|v| v.version == version)
            .and_then(|v| v.capabilities.get(&capability).copied())
    }

    pub fn flips(&self) -> impl Iterator<Item = &Annotation> {
        self.annotations
            .iter()
            .filter(|a| matches!(a, Annotation::CapabilityFlip { .. }))
    }

    /// Any chain broken by a missing structure or member in any version.
    pub fn has_breakage(&self) -> bool {
        self.versions
            .iter()
            .flat_map(|v| &v.chains)
            .any(ChainReport::is_breakage)
    }
}

fn assess_version(profile: &Profile, chains: &[ChainSpec]) -> VersionAssessment {
    let reports: Vec<ChainReport> = chains.iter().map(|c| resolve_chain(profile, c)).collect();
    let mut capabilities = BTreeMap::new();
    for chain in chains {
        capabilities.entry(chain.capability).or_insert(CapabilityStatus::NotApplicable);
    }
    for report in &reports {
        let status = capabilities.get_mut(&report.capability).expect("inserted above");
        let applicable = !matches!(
            report.first_failure,
            Some(StepFailure {
                reason: FailureReason::ChainNotApplicable,
                ..
            })
        );
        if report.is_resolved() {
            *status = CapabilityStatus::Resolved;
        } else if applicable && *status == CapabilityStatus::NotApplicable {
            *status = CapabilityStatus::Broken;
        }
    }
    VersionAssessment {
        version: profile.version().to_owned(),
        capabilities,
        chains: reports,
    }
}

/// Per-version capability status plus annotations for every transition where
/// a capability flips or a resolved chain's offsets move.
pub fn assess_capabilities(profiles: &[Profile], chains: &[ChainSpec]) -> Result<CapabilityAssessment, AnalysisError> {
    let seq = ordered_sequence(profiles, 1)?;
    let versions: Vec<VersionAssessment> = seq.iter().map(|p| assess_version(p, chains)).collect();
    let mut annotations = Vec::new();
    for pair in versions.windows(2) {
        let (old, new) = (&pair[0], &pair[1]);
        let transition = Transition::new(old.version.clone(), new.version.clone());
        for (capability, from) in &old.capabilities {
            let to = new.capabilities[capability];
            if *from != to {
                annotations.push(Annotation::CapabilityFlip {
                    transition: transition.clone(),
                    capability: *capability,
                    from: *from,
                    to,
                });
            }
        }
        for (before, after) in old.chains.iter().zip(&new.chains) {
            if !(before.is_resolved() && after.is_resolved()) {
                continue;
            }
            for (step, (a, b)) in before.resolved_steps.iter().zip(&after.resolved_steps).enumerate() {
                if a.offset != b.offset {
                    annotations.push(Annotation::MaintenanceRequired {
                        transition: transition.clone(),
                        chain_id: before.chain_id.clone(),
                        step,
                        structure: a.structure.clone(),
                        member: a.member.clone(),
                        old_offset: a.offset,
                        new_offset: b.offset,
                    });
                }
            }
        }
    }
    Ok(CapabilityAssessment { versions, annotations })
}
