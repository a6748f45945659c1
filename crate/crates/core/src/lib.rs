//! Structure-layout extraction from DWARF debug information, cross-version
//! layout diffing, and the evolution analytics built on top of them.
//!
//! The pipeline is:
//!
//! 1. [`extract`] walks the compilation units of an ELF binary and produces a
//!    [`Profile`]: every class/structure name with its byte size and member
//!    offsets.
//! 2. [`profile`] stores profiles in a canonical JSON file format and indexes
//!    a `<root>/<version>/<arch>/` repository of them.
//! 3. [`diff`] classifies the differences between two profiles.
//! 4. [`analytics`] computes impact scores, size/offset timelines, volatility
//!    rates and per-transition aggregates over a version sequence.
//! 5. [`forensic`] checks whether structure traversal chains used by memory
//!    forensics tools still resolve in each version.
//!
//! [`report`] renders any of the reports as JSON, CSV or a fixed-width table
//! and [`cli`] wires everything into the `structdrift` command.

pub mod analytics;
pub mod cli;
pub mod diff;
pub mod error;
pub mod extract;
pub mod forensic;
pub mod profile;
pub mod report;
pub mod version;

pub use error::Error;
pub use profile::{Architecture, MemberRecord, Profile, ProfileMeta, StructureRecord};

/// Version string recorded in `extraction_tool_version` of every profile
/// produced by this crate.
pub const TOOL_VERSION: &str = concat!("structdrift ", env!("CARGO_PKG_VERSION"));
