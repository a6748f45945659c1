use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Failures while reading an ELF binary's debug information.
#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}: not an ELF file (byte offset {offset})", path.display())]
    NotElf { path: PathBuf, offset: u64 },
    #[error("{}: unsupported machine type {machine}", path.display())]
    UnknownArchitecture { path: PathBuf, machine: String },
    #[error("{}: no DWARF debug sections present", path.display())]
    NoDebugInfo { path: PathBuf },
    #[error("{}: malformed DWARF in {section} at byte offset {offset:#x}: {message}", path.display())]
    MalformedDwarf {
        path: PathBuf,
        section: &'static str,
        offset: u64,
        message: String,
    },
}

/// A profile that breaks one of the catalog invariants.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InvariantViolation {
    #[error("duplicate structure name {0:?}")]
    DuplicateStructure(String),
    #[error("structure stored under key {key:?} is named {name:?}")]
    KeyMismatch { key: String, name: String },
    #[error("empty structure name")]
    EmptyStructureName,
    #[error("structure {0:?} has a member with an empty name")]
    EmptyMemberName(String),
    #[error("members of {0:?} are not sorted by (offset, name)")]
    UnsortedMembers(String),
    #[error("member {member:?} of {structure:?} at offset {offset} lies beyond size {size}")]
    MemberOutOfBounds {
        structure: String,
        member: String,
        offset: u64,
        size: u64,
    },
    #[error("unsupported DWARF version {0}")]
    UnsupportedDwarfVersion(u16),
}

/// Failures reading or writing the canonical JSON files.
#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{origin}: schema violation: {message}")]
    Schema { origin: String, message: String },
    #[error("{origin}: {violation}")]
    Invariant {
        origin: String,
        violation: InvariantViolation,
    },
    #[error("repository root {} does not exist", .0.display())]
    RootMissing(PathBuf),
}

impl StoreError {
    pub(crate) fn schema(origin: impl Into<String>, message: impl Into<String>) -> Self {
        StoreError::Schema {
            origin: origin.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("need at least {required} profiles, got {actual}")]
    SequenceTooShort { required: usize, actual: usize },
    #[error("profiles mix architectures {first} and {other}")]
    MixedArchitectures { first: String, other: String },
    #[error("platform version {0:?} appears more than once in the sequence")]
    DuplicateVersion(String),
    #[error("cannot compare structure {old:?} with {new:?}")]
    NameMismatch { old: String, new: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("format {format} is not supported for {report} reports")]
pub struct RenderError {
    pub format: &'static str,
    pub report: &'static str,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Render(#[from] RenderError),
}
