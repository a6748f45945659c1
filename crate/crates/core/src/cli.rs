//! The `structdrift` command line.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::analytics::{
    aggregate_transitions, binary_stats_of_binary, binary_stats_of_profile, impact_matrix, member_offset_timeline,
    size_timeline, volatility_stats,
};
use crate::diff::{diff_profiles, summarize_diff};
use crate::error::{AnalysisError, Error, StoreError};
use crate::extract::{extract_profile, ExtractionHints};
use crate::forensic::{
    assess_capabilities, default_chains, default_watchlist, read_chains, read_watchlist, ChainSpec,
};
use crate::profile::{index_repository, read_profile, repository_path, write_profile, Architecture, Profile};
use crate::report::{render_report, Format, Render, StatsReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success,
    /// `--fail-on-break` was given and the analysis found a breaking change.
    BreakingChange,
    Usage,
    Input,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            ExitStatus::Success => 0,
            ExitStatus::BreakingChange => 1,
            ExitStatus::Usage => 2,
            ExitStatus::Input => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "structdrift", about = "Track structure layouts across versions of an ELF binary")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Output {
    /// Write the report here instead of standard output.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Debug, Args)]
struct Sequence {
    /// Profile files. When omitted, profiles are read from the repository.
    profiles: Vec<PathBuf>,
    /// Repository root laid out as `<version>/<arch>/<name>.profile.json`.
    #[arg(long, env = "STRUCTDRIFT_REPO", value_name = "ROOT")]
    repo: Option<PathBuf>,
    /// Architecture to select from the repository.
    #[arg(long)]
    arch: Option<Architecture>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract a structure profile from an ELF binary's DWARF data.
    Extract {
        binary: PathBuf,
        /// Platform version label recorded in the profile.
        #[arg(long)]
        version: String,
        /// Overrides the architecture inferred from the ELF header.
        #[arg(long)]
        arch: Option<Architecture>,
        #[arg(long)]
        variant: Option<String>,
        /// Write to the profile's repository location under ROOT.
        #[arg(long, env = "STRUCTDRIFT_REPO", value_name = "ROOT", conflicts_with = "out")]
        repo: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Compare two profiles.
    Diff {
        old: PathBuf,
        new: PathBuf,
        /// Watchlist file, `default`, or `all` (the default).
        #[arg(long)]
        scope: Option<String>,
        /// Exit with status 1 when anything was moved or removed.
        #[arg(long)]
        fail_on_break: bool,
        #[command(flatten)]
        output: Output,
    },
    /// Impact score of each watched structure across each transition.
    Score {
        #[command(flatten)]
        sequence: Sequence,
        /// Watchlist file, `default` (the default) or `all`.
        #[arg(long)]
        scope: Option<String>,
        #[command(flatten)]
        output: Output,
    },
    /// Size, symbol count and DWARF versions of profiles or binaries.
    Stats {
        /// Profile files or ELF binaries.
        inputs: Vec<PathBuf>,
        #[arg(long, env = "STRUCTDRIFT_REPO", value_name = "ROOT")]
        repo: Option<PathBuf>,
        #[arg(long)]
        arch: Option<Architecture>,
        /// Version label for ELF inputs; defaults to the file stem.
        #[arg(long)]
        version: Option<String>,
        #[command(flatten)]
        output: Output,
    },
    /// Change counts per transition with a total row.
    Aggregate {
        #[command(flatten)]
        sequence: Sequence,
        /// Watchlist file, `default` (the default) or `all`.
        #[arg(long)]
        scope: Option<String>,
        #[command(flatten)]
        output: Output,
    },
    /// Size of a structure, or offset of one of its members, per version.
    Timeline {
        structure: String,
        #[arg(long)]
        member: Option<String>,
        #[command(flatten)]
        sequence: Sequence,
        #[command(flatten)]
        output: Output,
    },
    /// Share of surviving members whose offset changed.
    Volatility {
        #[command(flatten)]
        sequence: Sequence,
        /// Watchlist file, `default` (the default) or `all`.
        #[arg(long)]
        scope: Option<String>,
        #[command(flatten)]
        output: Output,
    },
    /// Resolve forensic traversal chains in each version.
    Chains {
        #[command(flatten)]
        sequence: Sequence,
        /// Chain file or `default`.
        #[arg(long, default_value = "default")]
        chains: String,
        /// Exit with status 1 when a chain loses a structure or member.
        #[arg(long)]
        fail_on_break: bool,
        #[command(flatten)]
        output: Output,
    },
    /// List the profiles stored in a repository.
    Index {
        #[arg(long, env = "STRUCTDRIFT_REPO", value_name = "ROOT")]
        repo: PathBuf,
        #[command(flatten)]
        output: Output,
    },
}

#[derive(Debug, thiserror::Error)]
enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Lib(#[from] Error),
    #[error("{}: {source}", path.display())]
    Write { path: PathBuf, source: io::Error },
}

impl Failure {
    fn status(&self) -> ExitStatus {
        match self {
            Failure::Usage(_) => ExitStatus::Usage,
            Failure::Lib(Error::Render(_)) => ExitStatus::Usage,
            Failure::Lib(Error::Analysis(AnalysisError::SequenceTooShort { .. })) => ExitStatus::Usage,
            Failure::Lib(_) | Failure::Write { .. } => ExitStatus::Input,
        }
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        Failure::Lib(e.into())
    }
}

impl From<AnalysisError> for Failure {
    fn from(e: AnalysisError) -> Self {
        Failure::Lib(e.into())
    }
}

impl From<crate::error::ExtractError> for Failure {
    fn from(e: crate::error::ExtractError) -> Self {
        Failure::Lib(e.into())
    }
}

impl From<crate::error::RenderError> for Failure {
    fn from(e: crate::error::RenderError) -> Self {
        Failure::Lib(e.into())
    }
}

/// Runs one invocation, writing reports to standard output and diagnostics
/// to standard error.
pub fn run<I, T>(argv: I) -> ExitStatus
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let stdout = io::stdout();
    let stderr = io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_with<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> ExitStatus
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{}", e.render());
                    ExitStatus::Success
                }
                _ => {
                    let _ = write!(stderr, "{}", e.render());
                    ExitStatus::Usage
                }
            };
        }
    };
    match dispatch(cli.command, stdout, stderr) {
        Ok(status) => status,
        Err(failure) => {
            let _ = writeln!(stderr, "error: {failure}");
            failure.status()
        }
    }
}

fn emit(text: &str, out: Option<&Path>, stdout: &mut dyn Write) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, text).map_err(|source| Failure::Write {
            path: path.to_owned(),
            source,
        }),
        None => stdout.write_all(text.as_bytes()).map_err(|source| Failure::Write {
            path: PathBuf::from("<stdout>"),
            source,
        }),
    }
}

fn emit_report<R: Render>(report: &R, output: &Output, stdout: &mut dyn Write) -> Result<(), Failure> {
    let text = render_report(report, output.format)?;
    emit(&text, output.out.as_deref(), stdout)
}

/// Resolved `--scope`: the structure names, or `None` for all structures,
/// plus a label for reports.
fn resolve_scope(scope: Option<&str>, default_all: bool) -> Result<(Option<Vec<String>>, String), Failure> {
    match scope {
        None if default_all => Ok((None, "all structures".to_owned())),
        Some("all") => Ok((None, "all structures".to_owned())),
        None | Some("default") => {
            let w = default_watchlist();
            let label = w.label();
            Ok((Some(w.structures), label))
        }
        Some(path) => {
            let w = read_watchlist(Path::new(path))?;
            let label = w.label();
            Ok((Some(w.structures), label))
        }
    }
}

fn resolve_chains(spec: &str) -> Result<Vec<ChainSpec>, Failure> {
    if spec == "default" {
        Ok(default_chains())
    } else {
        Ok(read_chains(Path::new(spec))?)
    }
}

fn load_sequence(sequence: &Sequence) -> Result<Vec<Profile>, Failure> {
    if !sequence.profiles.is_empty() {
        let profiles = sequence
            .profiles
            .iter()
            .map(|p| read_profile(p))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(arch) = sequence.arch {
            return Ok(profiles.into_iter().filter(|p| p.meta.architecture == arch).collect());
        }
        return Ok(profiles);
    }
    let Some(root) = &sequence.repo else {
        return Err(Failure::Usage(
            "no profiles given; pass profile files or --repo (or set STRUCTDRIFT_REPO)".into(),
        ));
    };
    let index = index_repository(root)?;
    let arch = match sequence.arch {
        Some(arch) => arch,
        None => {
            let archs = index.architectures();
            match archs.len() {
                1 => *archs.iter().next().expect("one element"),
                0 => return Err(Failure::Usage(format!("no profiles found under {}", root.display()))),
                _ => {
                    let names: Vec<&str> = archs.iter().map(|a| a.as_str()).collect();
                    return Err(Failure::Usage(format!(
                        "repository holds several architectures ({}); pick one with --arch",
                        names.join(", ")
                    )));
                }
            }
        }
    };
    Ok(index
        .sequence(arch)
        .iter()
        .map(|e| read_profile(&e.path))
        .collect::<Result<Vec<_>, _>>()?)
}

fn is_elf(path: &Path) -> Result<bool, Failure> {
    let mut magic = [0u8; 4];
    let mut file = fs::File::open(path).map_err(|source| StoreError::Io {
        path: path.to_owned(),
        source,
    })?;
    let n = io::Read::read(&mut file, &mut magic).map_err(|source| StoreError::Io {
        path: path.to_owned(),
        source,
    })?;
    Ok(n == 4 && magic == *b"\x7fELF")
}

fn dispatch(command: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<ExitStatus, Failure> {
    match command {
        Command::Extract {
            binary,
            version,
            arch,
            variant,
            repo,
            out,
        } => {
            let hints = ExtractionHints {
                platform_version: version,
                architecture: arch,
                build_variant: variant,
            };
            let extraction = extract_profile(&binary, &hints)?;
            let m = &extraction.meta;
            let _ = writeln!(
                stderr,
                "{}: {} structures from {} compilation units ({} type entries, {} member locations skipped)",
                binary.display(),
                m.unique_structure_count,
                m.compilation_unit_count,
                m.raw_type_die_count,
                m.skipped_member_locations
            );
            for name in &m.merge_conflicts {
                let _ = writeln!(stderr, "warning: conflicting definitions of {name}; kept the most complete one");
            }
            match (repo, out) {
                (Some(root), _) => {
                    let stem = binary
                        .file_stem()
                        .and_then(|s| s.to_str())
                        .filter(|s| !s.is_empty())
                        .unwrap_or("binary");
                    let profile = &extraction.profile;
                    let path = repository_path(&root, profile.version(), profile.meta.architecture, stem);
                    if let Some(dir) = path.parent() {
                        fs::create_dir_all(dir).map_err(|source| Failure::Write {
                            path: dir.to_owned(),
                            source,
                        })?;
                    }
                    write_profile(profile, &path)?;
                    let _ = writeln!(stderr, "wrote {}", path.display());
                }
                (None, Some(path)) => write_profile(&extraction.profile, &path)?,
                (None, None) => {
                    let text = extraction
                        .profile
                        .to_canonical_json()
                        .map_err(|violation| StoreError::Invariant {
                            origin: binary.display().to_string(),
                            violation,
                        })?;
                    emit(&text, None, stdout)?;
                }
            }
            Ok(ExitStatus::Success)
        }
        Command::Diff {
            old,
            new,
            scope,
            fail_on_break,
            output,
        } => {
            let (names, _) = resolve_scope(scope.as_deref(), true)?;
            let old = read_profile(&old)?;
            let new = read_profile(&new)?;
            let report = diff_profiles(&old, &new, names.as_deref());
            emit_report(&report, &output, stdout)?;
            if fail_on_break && summarize_diff(&report).total_impact > 0 {
                return Ok(ExitStatus::BreakingChange);
            }
            Ok(ExitStatus::Success)
        }
        Command::Score {
            sequence,
            scope,
            output,
        } => {
            let (names, _) = resolve_scope(scope.as_deref(), false)?;
            let profiles = load_sequence(&sequence)?;
            let names = match names {
                Some(n) => n,
                None => {
                    let all: std::collections::BTreeSet<String> =
                        profiles.iter().flat_map(|p| p.structures.keys().cloned()).collect();
                    all.into_iter().collect()
                }
            };
            let matrix = impact_matrix(&profiles, &names)?;
            emit_report(&matrix, &output, stdout)?;
            Ok(ExitStatus::Success)
        }
        Command::Stats {
            inputs,
            repo,
            arch,
            version,
            output,
        } => {
            let mut binaries = Vec::new();
            if inputs.is_empty() {
                let profiles = load_sequence(&Sequence {
                    profiles: Vec::new(),
                    repo,
                    arch,
                })?;
                binaries.extend(profiles.iter().map(binary_stats_of_profile));
            }
            for input in &inputs {
                if is_elf(input)? {
                    let label = version.clone().unwrap_or_else(|| {
                        input
                            .file_stem()
                            .map(|s| s.to_string_lossy().into_owned())
                            .unwrap_or_default()
                    });
                    let hints = ExtractionHints {
                        platform_version: label,
                        architecture: arch,
                        build_variant: None,
                    };
                    binaries.push(binary_stats_of_binary(input, &hints)?);
                } else {
                    binaries.push(binary_stats_of_profile(&read_profile(input)?));
                }
            }
            binaries.sort_by(|a, b| {
                crate::version::compare_versions(&a.platform_version, &b.platform_version)
                    .then_with(|| a.architecture.cmp(&b.architecture))
            });
            emit_report(&StatsReport { binaries }, &output, stdout)?;
            Ok(ExitStatus::Success)
        }
        Command::Aggregate {
            sequence,
            scope,
            output,
        } => {
            let (names, label) = resolve_scope(scope.as_deref(), false)?;
            let profiles = load_sequence(&sequence)?;
            let report = aggregate_transitions(&profiles, names.as_deref(), &label)?;
            emit_report(&report, &output, stdout)?;
            Ok(ExitStatus::Success)
        }
        Command::Timeline {
            structure,
            member,
            sequence,
            output,
        } => {
            let profiles = load_sequence(&sequence)?;
            let report = match member {
                Some(member) => member_offset_timeline(&profiles, &structure, &member)?,
                None => size_timeline(&profiles, &structure)?,
            };
            emit_report(&report, &output, stdout)?;
            Ok(ExitStatus::Success)
        }
        Command::Volatility {
            sequence,
            scope,
            output,
        } => {
            let (names, _) = resolve_scope(scope.as_deref(), false)?;
            let profiles = load_sequence(&sequence)?;
            let stats = volatility_stats(&profiles, names.as_deref())?;
            emit_report(&stats, &output, stdout)?;
            Ok(ExitStatus::Success)
        }
        Command::Chains {
            sequence,
            chains,
            fail_on_break,
            output,
        } => {
            let chains = resolve_chains(&chains)?;
            let profiles = load_sequence(&sequence)?;
            let assessment = assess_capabilities(&profiles, &chains)?;
            emit_report(&assessment, &output, stdout)?;
            if fail_on_break && assessment.has_breakage() {
                return Ok(ExitStatus::BreakingChange);
            }
            Ok(ExitStatus::Success)
        }
        Command::Index { repo, output } => {
            let index = index_repository(&repo)?;
            emit_report(&index, &output, stdout)?;
            Ok(ExitStatus::Success)
        }
    }
}
