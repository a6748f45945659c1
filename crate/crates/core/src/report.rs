//! Rendering of analysis results as canonical JSON, CSV or fixed-width text.

use std::fmt::Write as _;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::analytics::{AggregateReport, BinaryStats, ImpactMatrix, TimelineReport, VolatilityStats};
use crate::diff::{summarize_diff, DiffReport};
use crate::error::{RenderError, StoreError};
use crate::forensic::{Annotation, Capability, CapabilityAssessment, CapabilityStatus};
use crate::profile::RepositoryIndex;

pub const AGGREGATE_CSV_HEADER: &str =
    "transition,offset_changes,member_additions,member_removals,structure_removals,total_impact";

/// Pretty-printed JSON with a trailing newline. Field order follows the
/// type definitions, so equal values always serialize to equal bytes.
pub(crate) fn canonical_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("report types serialize infallibly");
    text.push('\n');
    text
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Table,
}

impl Format {
    pub fn as_str(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
            Format::Table => "table",
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Envelope<T> {
    schema: String,
    report: T,
}

pub trait Render: Sized {
    /// Short name used in schema identifiers and error messages.
    const KIND: &'static str;

    fn to_json(&self) -> String;
    fn from_json(text: &str, origin: &str) -> Result<Self, StoreError>;
    fn to_table(&self) -> String;

    fn to_csv(&self) -> Option<String> {
        None
    }
}

pub fn schema_of(kind: &str) -> String {
    format!("structdrift-{kind}/1")
}

fn envelope_json<T: Serialize>(kind: &str, report: &T) -> String {
    canonical_json(&Envelope {
        schema: schema_of(kind),
        report,
    })
}

fn envelope_parse<T: DeserializeOwned>(kind: &str, text: &str, origin: &str) -> Result<T, StoreError> {
    let env: Envelope<T> = serde_json::from_str(text).map_err(|e| StoreError::schema(origin, e.to_string()))?;
    let expected = schema_of(kind);
    if env.schema != expected {
        return Err(StoreError::schema(
            origin,
            format!("expected schema {expected:?}, found {:?}", env.schema),
        ));
    }
    Ok(env.report)
}

pub fn render_report<R: Render>(report: &R, format: Format) -> Result<String, RenderError> {
    match format {
        Format::Json => Ok(report.to_json()),
        Format::Table => Ok(report.to_table()),
        Format::Csv => report.to_csv().ok_or(RenderError {
            format: format.as_str(),
            report: R::KIND,
        }),
    }
}

fn real(value: f64) -> String {
    format!("{value:.3}")
}

fn opt_u64(value: Option<u64>, absent: &str) -> String {
    value.map_or_else(|| absent.to_owned(), |v| v.to_string())
}

/// Fixed-width text table: first column left-aligned, the rest right-aligned.
fn text_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |cells: &mut dyn Iterator<Item = &str>| {
        let mut text = String::new();
        for (i, cell) in cells.enumerate() {
            if i == 0 {
                let _ = write!(text, "{cell:<w$}", w = widths[0]);
            } else {
                let _ = write!(text, "  {cell:>w$}", w = widths[i]);
            }
        }
        out.push_str(text.trim_end());
        out.push('\n');
    };
    line(&mut header.iter().copied());
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    line(&mut rule.iter().map(String::as_str));
    for row in rows {
        line(&mut row.iter().map(String::as_str));
    }
    out
}

fn csv_field(text: &str) -> String {
    if text.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", text.replace('"', "\"\""))
    } else {
        text.to_owned()
    }
}

fn csv_line(out: &mut String, cells: impl IntoIterator<Item = String>) {
    let cells: Vec<String> = cells.into_iter().map(|c| csv_field(&c)).collect();
    out.push_str(&cells.join(","));
    out.push('\n');
}

impl Render for DiffReport {
    const KIND: &'static str = "diff";

    fn to_json(&self) -> String {
        self.to_canonical_json()
    }

    fn from_json(text: &str, origin: &str) -> Result<Self, StoreError> {
        DiffReport::from_json_str(text, origin)
    }

    fn to_table(&self) -> String {
        let mut rows = Vec::new();
        for name in &self.added_structures {
            rows.push(vec![name.clone(), "structure-added".into(), String::new(), String::new(), String::new()]);
        }
        for name in &self.removed_structures {
            rows.push(vec![name.clone(), "structure-removed".into(), String::new(), String::new(), String::new()]);
        }
        for s in &self.modified {
            if s.old_size != s.new_size {
                rows.push(vec![
                    s.name.clone(),
                    "size".into(),
                    String::new(),
                    s.old_size.to_string(),
                    s.new_size.to_string(),
                ]);
            }
            for m in &s.offset_changes {
                rows.push(vec![
                    s.name.clone(),
                    "offset".into(),
                    m.member_name.clone(),
                    m.old_offset.to_string(),
                    m.new_offset.to_string(),
                ]);
            }
            for m in &s.member_additions {
                rows.push(vec![s.name.clone(), "member-added".into(), m.name.clone(), String::new(), m.offset.to_string()]);
            }
            for m in &s.member_removals {
                rows.push(vec![s.name.clone(), "member-removed".into(), m.name.clone(), m.offset.to_string(), String::new()]);
            }
        }
        let c = summarize_diff(self);
        let mut out = format!("{} -> {}\n", self.from_label, self.to_label);
        out.push_str(&text_table(&["structure", "change", "member", "old", "new"], &rows));
        let _ = writeln!(
            out,
            "offset_changes={} member_additions={} member_removals={} structure_removals={} structure_additions={} total_impact={} unchanged={}",
            c.offset_changes,
            c.member_additions,
            c.member_removals,
            c.structure_removals,
            c.structure_additions,
            c.total_impact,
            self.unchanged_count
        );
        out
    }
}

impl Render for ImpactMatrix {
    const KIND: &'static str = "matrix";

    fn to_json(&self) -> String {
        envelope_json(Self::KIND, self)
    }

    fn from_json(text: &str, origin: &str) -> Result<Self, StoreError> {
        envelope_parse(Self::KIND, text, origin)
    }

    fn to_csv(&self) -> Option<String> {
        let mut out = String::new();
        csv_line(
            &mut out,
            std::iter::once("structure".to_owned()).chain(self.transitions.iter().map(|t| t.to_string())),
        );
        for (name, row) in self.structures.iter().zip(&self.cells) {
            csv_line(
                &mut out,
                std::iter::once(name.clone())
                    .chain(row.iter().map(|c| c.as_ref().map_or_else(String::new, |s| real(s.score)))),
            );
        }
        Some(out)
    }

    fn to_table(&self) -> String {
        let labels: Vec<String> = self.transitions.iter().map(|t| t.to_string()).collect();
        let mut header = vec!["structure"];
        header.extend(labels.iter().map(String::as_str));
        let rows: Vec<Vec<String>> = self
            .structures
            .iter()
            .zip(&self.cells)
            .map(|(name, row)| {
                std::iter::once(name.clone())
                    .chain(row.iter().map(|c| c.as_ref().map_or_else(|| "-".to_owned(), |s| real(s.score))))
                    .collect()
            })
            .collect();
        text_table(&header, &rows)
    }
}

fn count_cells(c: &crate::diff::ChangeCounts) -> [String; 5] {
    [
        c.offset_changes.to_string(),
        c.member_additions.to_string(),
        c.member_removals.to_string(),
        c.structure_removals.to_string(),
        c.total_impact.to_string(),
    ]
}

impl Render for AggregateReport {
    const KIND: &'static str = "aggregate";

    fn to_json(&self) -> String {
        envelope_json(Self::KIND, self)
    }

    fn from_json(text: &str, origin: &str) -> Result<Self, StoreError> {
        envelope_parse(Self::KIND, text, origin)
    }

    fn to_csv(&self) -> Option<String> {
        let mut out = String::new();
        out.push_str(AGGREGATE_CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            csv_line(&mut out, std::iter::once(row.transition.to_string()).chain(count_cells(&row.counts)));
        }
        csv_line(&mut out, std::iter::once("Total".to_owned()).chain(count_cells(&self.total)));
        Some(out)
    }

    fn to_table(&self) -> String {
        let mut rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| std::iter::once(r.transition.to_string()).chain(count_cells(&r.counts)).collect())
            .collect();
        rows.push(std::iter::once("Total".to_owned()).chain(count_cells(&self.total)).collect());
        let mut out = format!("scope: {}\n", self.scope);
        out.push_str(&text_table(
            &[
                "transition",
                "offset changes",
                "member additions",
                "member removals",
                "structure removals",
                "total impact",
            ],
            &rows,
        ));
        out
    }
}

impl TimelineReport {
    fn subject(&self) -> String {
        match &self.member {
            Some(m) => format!("{}.{}", self.structure, m),
            None => format!("{}.size", self.structure),
        }
    }
}

impl Render for TimelineReport {
    const KIND: &'static str = "timeline";

    fn to_json(&self) -> String {
        envelope_json(Self::KIND, self)
    }

    fn from_json(text: &str, origin: &str) -> Result<Self, StoreError> {
        envelope_parse(Self::KIND, text, origin)
    }

    fn to_csv(&self) -> Option<String> {
        let mut out = String::new();
        csv_line(&mut out, ["version".to_owned(), self.subject()]);
        for p in &self.points {
            csv_line(&mut out, [p.version.clone(), opt_u64(p.value, "")]);
        }
        Some(out)
    }

    fn to_table(&self) -> String {
        let subject = self.subject();
        let rows: Vec<Vec<String>> = self
            .points
            .iter()
            .map(|p| vec![p.version.clone(), opt_u64(p.value, "-")])
            .collect();
        text_table(&["version", &subject], &rows)
    }
}

impl Render for VolatilityStats {
    const KIND: &'static str = "volatility";

    fn to_json(&self) -> String {
        envelope_json(Self::KIND, self)
    }

    fn from_json(text: &str, origin: &str) -> Result<Self, StoreError> {
        envelope_parse(Self::KIND, text, origin)
    }

    fn to_table(&self) -> String {
        let mut rows: Vec<Vec<String>> = self
            .per_structure
            .iter()
            .map(|(name, v)| {
                vec![
                    name.clone(),
                    v.surviving_members.to_string(),
                    v.members_with_offset_change.to_string(),
                    real(v.rate),
                ]
            })
            .collect();
        rows.push(vec![
            "Overall".into(),
            self.surviving_members.to_string(),
            self.members_with_offset_change.to_string(),
            real(self.overall_rate),
        ]);
        text_table(&["structure", "surviving", "moved", "rate"], &rows)
    }
}

/// Binary statistics for one or more profiles, in version order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsReport {
    pub binaries: Vec<BinaryStats>,
}

impl Render for StatsReport {
    const KIND: &'static str = "stats";

    fn to_json(&self) -> String {
        envelope_json(Self::KIND, self)
    }

    fn from_json(text: &str, origin: &str) -> Result<Self, StoreError> {
        envelope_parse(Self::KIND, text, origin)
    }

    fn to_table(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .binaries
            .iter()
            .map(|b| {
                vec![
                    b.platform_version.clone(),
                    b.architecture.clone(),
                    format!("{:.2}", b.binary_size_mb),
                    b.binary_size_bytes.to_string(),
                    b.symbol_count.to_string(),
                    b.unique_structure_count.to_string(),
                    b.dwarf_versions.iter().map(u16::to_string).collect::<Vec<_>>().join("/"),
                ]
            })
            .collect();
        text_table(
            &["version", "arch", "size (MB)", "bytes", "symbols", "structures", "dwarf"],
            &rows,
        )
    }
}

fn status_label(status: CapabilityStatus) -> &'static str {
    match status {
        CapabilityStatus::Resolved => "resolved",
        CapabilityStatus::Broken => "BROKEN",
        CapabilityStatus::NotApplicable => "n/a",
    }
}

impl Render for CapabilityAssessment {
    const KIND: &'static str = "capabilities";

    fn to_json(&self) -> String {
        envelope_json(Self::KIND, self)
    }

    fn from_json(text: &str, origin: &str) -> Result<Self, StoreError> {
        envelope_parse(Self::KIND, text, origin)
    }

    fn to_table(&self) -> String {
        let capabilities: Vec<Capability> = self
            .versions
            .iter()
            .flat_map(|v| v.capabilities.keys().copied())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut header = vec!["version"];
        header.extend(capabilities.iter().map(|c| c.as_str()));
        let rows: Vec<Vec<String>> = self
            .versions
            .iter()
            .map(|v| {
                std::iter::once(v.version.clone())
                    .chain(capabilities.iter().map(|c| {
                        v.capabilities.get(c).map_or("-", |s| status_label(*s)).to_owned()
                    }))
                    .collect()
            })
            .collect();
        let mut out = text_table(&header, &rows);
        for v in &self.versions {
            for chain in v.chains.iter().filter(|c| c.is_breakage()) {
                let failure = chain.first_failure.expect("breakage has a failure");
                let _ = writeln!(
                    out,
                    "{}: chain {} broken at step {} ({})",
                    v.version,
                    chain.chain_id,
                    failure.step,
                    match failure.reason {
                        crate::forensic::FailureReason::StructureMissing => "structure missing",
                        crate::forensic::FailureReason::MemberMissing => "member missing",
                        crate::forensic::FailureReason::ChainNotApplicable => "not applicable",
                    }
                );
            }
        }
        for a in &self.annotations {
            match a {
                Annotation::CapabilityFlip {
                    transition,
                    capability,
                    from,
                    to,
                } => {
                    let _ = writeln!(
                        out,
                        "{transition}: {capability} {} -> {}",
                        status_label(*from),
                        status_label(*to)
                    );
                }
                Annotation::MaintenanceRequired {
                    transition,
                    chain_id,
                    structure,
                    member,
                    old_offset,
                    new_offset,
                    ..
                } => {
                    let _ = writeln!(
                        out,
                        "{transition}: maintenance required, {chain_id} {structure}.{member} moved {old_offset} -> {new_offset}"
                    );
                }
            }
        }
        out
    }
}

impl Render for RepositoryIndex {
    const KIND: &'static str = "index";

    fn to_json(&self) -> String {
        envelope_json(Self::KIND, self)
    }

    fn from_json(text: &str, origin: &str) -> Result<Self, StoreError> {
        envelope_parse(Self::KIND, text, origin)
    }

    fn to_table(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .entries
            .iter()
            .map(|e| vec![e.platform_version.clone(), e.architecture.to_string(), e.path.display().to_string()])
            .collect();
        let mut out = text_table(&["version", "arch", "path"], &rows);
        for s in &self.skipped {
            let _ = writeln!(out, "skipped {}: {}", s.path.display(), s.reason);
        }
        out
    }
}
