//! One line per acceptance criterion: `PASS`, `FAIL` or `SKIP`, with the
//! measured runtime against its limit.

mod common;

use std::cell::Cell;
use std::collections::BTreeSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use common::{
    arb_profile, arb_related_pair, fixture, flatten, oracle_diff, oracle_view, parse_layout_dump,
    profile_satisfying, reversed, sorted, without_member, without_structure, LAYOUT_PAIRS,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use structdrift::analytics::{
    aggregate_transitions, impact_score, member_offset_timeline, size_timeline, volatility_stats, ImpactFactors,
    ImpactWeights, Transition,
};
use structdrift::diff::{diff_profiles, diff_structure};
use structdrift::error::StoreError;
use structdrift::extract::{extract_profile, ExtractionHints};
use structdrift::forensic::{
    assess_capabilities, default_chains, default_watchlist, read_watchlist, resolve_chain, Annotation, Capability,
    CapabilityStatus, FailureReason,
};
use structdrift::profile::{index_repository, read_profile};
use structdrift::{Architecture, Profile};

enum Verdict {
    Pass(String),
    Skip(String),
}

type Outcome = Result<Verdict, String>;

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn within(elapsed: Duration, limit_secs: u64) -> Result<(), String> {
    if elapsed <= Duration::from_secs(limit_secs) {
        Ok(())
    } else {
        Err(format!("took {:.2}s, limit {limit_secs}s", elapsed.as_secs_f64()))
    }
}

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

fn extractor_fidelity() -> Outcome {
    let start = Instant::now();
    let mut versions = BTreeSet::new();
    let mut widths = BTreeSet::new();
    let mut compared = 0;
    for (binary, dump) in LAYOUT_PAIRS {
        let oracle = parse_layout_dump(&fs::read_to_string(fixture(dump)).map_err(|e| e.to_string())?);
        let hints = ExtractionHints {
            platform_version: "1".into(),
            ..ExtractionHints::default()
        };
        let profile = extract_profile(&fixture(binary), &hints).map_err(|e| e.to_string())?.profile;
        versions.extend(profile.meta.dwarf_versions_seen.iter().copied());
        widths.insert(matches!(profile.meta.architecture, Architecture::Arm64 | Architecture::X86_64));
        let got: Vec<&String> = profile.structures.keys().collect();
        let want: Vec<&String> = oracle.keys().collect();
        check(got == want, || format!("{binary}: structures {got:?} != {want:?}"))?;
        for (name, expected) in oracle {
            let actual = oracle_view(profile.get(&name).expect("checked above"));
            let expected = sorted(expected);
            check(actual == expected, || format!("{binary}: {name}: {actual:?} != {expected:?}"))?;
            compared += 1;
        }
    }
    check(versions.is_superset(&[4, 5].into()), || format!("DWARF versions covered: {versions:?}"))?;
    check(widths.len() == 2, || "need 32- and 64-bit fixtures".into())?;
    let elapsed = start.elapsed();
    within(elapsed, 5)?;
    Ok(Verdict::Pass(format!(
        "{} binaries, {compared} records exact, {:.2}s < 5s",
        LAYOUT_PAIRS.len(),
        elapsed.as_secs_f64()
    )))
}

fn diff_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut r = runner(1000);
    r
        .run(&arb_related_pair(), |(old, new)| {
            prop_assert!(old.len() <= 10 && new.len() <= 10);
            let widest = old.structures.values().chain(new.structures.values()).map(|r| r.members.len()).max();
            prop_assert!(widest.unwrap_or(0) <= 8);
            let forward = flatten(&diff_profiles(&old, &new, None));
            prop_assert_eq!(&forward, &oracle_diff(&old, &new));
            let backward = flatten(&diff_profiles(&new, &old, None));
            prop_assert_eq!(reversed(&forward), backward);
            for p in [&old, &new] {
                let id = diff_profiles(p, p, None);
                prop_assert!(id.is_identity());
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    within(elapsed, 30)?;
    Ok(Verdict::Pass(format!(
        "1000 pairs match brute force, antisymmetric, identity holds, {:.2}s < 30s",
        elapsed.as_secs_f64()
    )))
}

fn impact_score_properties() -> Outcome {
    let start = Instant::now();
    let weights = ImpactWeights::default();
    let factor = || prop_oneof![0.0..=1.0f64, 0.0..=20.0f64, Just(0.0), Just(1.0)];
    let mut r = runner(10_000);
    r
        .run(&(factor(), factor(), factor(), 0.0..=5.0f64), |(o, c, s, bump)| {
            let base = ImpactFactors {
                offset_fraction: o,
                churn_ratio: c,
                size_delta_fraction: s,
            };
            let score = weights.combine(&base);
            prop_assert!((0.0..=1.0).contains(&score));
            for which in 0..3 {
                let mut up = base;
                match which {
                    0 => up.offset_fraction += bump,
                    1 => up.churn_ratio += bump,
                    _ => up.size_delta_fraction += bump,
                }
                prop_assert!(weights.combine(&up) >= score);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let mut r = runner(200);
    r
        .run(&arb_profile("1"), |p| {
            for r in p.structures.values() {
                let d = diff_structure(r, r).unwrap();
                let s = impact_score(&d, r.members.len(), Transition::new("1", "1"));
                prop_assert_eq!(s.score, 0.0);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    within(elapsed, 5)?;
    Ok(Verdict::Pass(format!(
        "10000 triples bounded and monotone, identical structures score 0, {:.2}s < 5s",
        elapsed.as_secs_f64()
    )))
}

fn canonical_fixture_paths() -> Vec<PathBuf> {
    ["9", "10", "11", "12"]
        .iter()
        .map(|v| fixture(&format!("repo/{v}/x86_64/libart.profile.json")))
        .collect()
}

fn round_trip_stability() -> Outcome {
    let mut r = runner(500);
    r
        .run(&arb_profile("3"), |p| {
            let text = p.to_canonical_json().unwrap();
            let back = Profile::from_json_str(&text, "generated").unwrap();
            prop_assert_eq!(&back, &p);
            prop_assert_eq!(back.to_canonical_json().unwrap(), text);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let paths = canonical_fixture_paths();
    let texts: Vec<String> = paths.iter().map(|p| fs::read_to_string(p).unwrap()).collect();
    for (path, text) in paths.iter().zip(&texts) {
        let p = Profile::from_json_str(text, "fixture").map_err(|e| e.to_string())?;
        check(p.to_canonical_json().unwrap() == *text, || format!("{} not a fixed point", path.display()))?;
    }
    let fuzzed = Cell::new(0);
    let mut r = runner(2000);
    r
        .run(
            &(
                0..texts.len(),
                prop::collection::vec((any::<prop::sample::Index>(), any::<u8>()), 1..6),
                any::<prop::sample::Index>(),
            ),
            |(i, edits, cut)| {
                let mut bytes = texts[i].as_bytes().to_vec();
                for (at, b) in edits {
                    let k = at.index(bytes.len());
                    bytes[k] = b;
                }
                let candidates: [String; 2] = [
                    String::from_utf8_lossy(&bytes).into_owned(),
                    texts[i][..cut.index(texts[i].len() - 2)].to_owned(),
                ];
                for text in candidates {
                    let result = catch_unwind(|| Profile::from_json_str(&text, "fuzz"));
                    prop_assert!(result.is_ok(), "parser panicked");
                    if let Err(e) = result.unwrap() {
                        prop_assert!(
                            matches!(e, StoreError::Schema { .. } | StoreError::Invariant { .. }),
                            "unexpected error kind {}",
                            e
                        );
                    }
                }
                fuzzed.set(fuzzed.get() + 2);
                Ok(())
            },
        )
        .map_err(|e| e.to_string())?;
    Ok(Verdict::Pass(format!(
        "500 generated profiles and {} fixtures round-trip; {fuzzed} malformed files rejected cleanly",
        texts.len(),
        fuzzed = fuzzed.get()
    )))
}

fn dataset_reproduction() -> Outcome {
    let Some(root) = std::env::var_os("STRUCTDRIFT_DATASET") else {
        return Ok(Verdict::Skip("STRUCTDRIFT_DATASET not set".into()));
    };
    let start = Instant::now();
    let root = PathBuf::from(root);
    let index = index_repository(&root).map_err(|e| e.to_string())?;
    let seq: Vec<Profile> = index
        .sequence(Architecture::X86_64)
        .iter()
        .map(|e| read_profile(&e.path))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let versions: Vec<&str> = seq.iter().map(|p| p.version()).collect();
    check(versions == ["9", "10", "11", "12", "13", "14"], || format!("versions {versions:?}"))?;
    let watchlist = match std::env::var_os("STRUCTDRIFT_WATCHLIST") {
        Some(path) => read_watchlist(&PathBuf::from(path)).map_err(|e| e.to_string())?,
        None => default_watchlist(),
    };
    let names = &watchlist.structures;
    check(names.len() == 34, || format!("watchlist has {} structures", names.len()))?;

    let agg = aggregate_transitions(&seq, Some(names), "dataset").map_err(|e| e.to_string())?;
    let t = &agg.total;
    let total = (t.offset_changes, t.member_additions, t.member_removals, t.structure_removals, t.total_impact);
    check(total == (956, 68, 39, 4, 1067), || format!("totals {total:?}"))?;
    let r = &agg.rows[0].counts;
    let first = (r.offset_changes, r.member_additions, r.member_removals, r.structure_removals, r.total_impact);
    check(first == (312, 24, 19, 1, 356), || format!("9-10 row {first:?}"))?;

    let tl = member_offset_timeline(&seq, "Runtime", "thread_list_").map_err(|e| e.to_string())?.values();
    let want: Vec<Option<u64>> = [512, 464, 456, 480, 576, 584].map(Some).to_vec();
    check(tl == want, || format!("thread_list_ timeline {tl:?}"))?;
    let heap = member_offset_timeline(&seq, "Runtime", "heap_").map_err(|e| e.to_string())?.values();
    let want: Vec<Option<u64>> = [448, 400, 392, 416, 512, 512].map(Some).to_vec();
    check(heap == want, || format!("heap_ timeline {heap:?}"))?;
    let sizes = size_timeline(&seq, "Thread").map_err(|e| e.to_string())?.values();
    check(sizes[..2] == [Some(2584), Some(6768)], || format!("Thread sizes {sizes:?}"))?;

    let v = volatility_stats(&seq, Some(names)).map_err(|e| e.to_string())?;
    check((v.overall_rate - 0.732).abs() <= 0.005, || format!("overall rate {}", v.overall_rate))?;
    let runtime = v.per_structure.get("Runtime").map(|s| s.rate).unwrap_or(f64::NAN);
    check((runtime - 0.894).abs() <= 0.005, || format!("Runtime rate {runtime}"))?;

    let a = assess_capabilities(&seq, &default_chains()).map_err(|e| e.to_string())?;
    let flipped = a.annotations.iter().any(|x| {
        matches!(x, Annotation::CapabilityFlip { transition, capability: Capability::ObjectReconstruction, to: CapabilityStatus::Broken, .. }
            if transition.from == "12" && transition.to == "13")
    });
    check(flipped, || "object_reconstruction does not break at 12-13".into())?;
    let elapsed = start.elapsed();
    within(elapsed, 10)?;
    Ok(Verdict::Pass(format!("all dataset figures reproduced, {:.2}s < 10s", elapsed.as_secs_f64())))
}

fn chain_resolution_consistency() -> Outcome {
    let chains = default_chains();
    let mut mutations = 0;
    for chain in &chains {
        let version = match &chain.applicable_versions {
            Some(r) => r.min.clone().or_else(|| r.max.clone()).unwrap(),
            None => "9".into(),
        };
        let full = profile_satisfying(&version, std::slice::from_ref(chain));
        check(resolve_chain(&full, chain).is_resolved(), || format!("{} does not resolve", chain.id))?;
        for (index, step) in chain.steps.iter().enumerate() {
            let first_use = chain.steps.iter().position(|s| s.structure == step.structure).unwrap();
            let r = resolve_chain(&without_structure(&full, &step.structure), chain);
            let f = r.first_failure.ok_or_else(|| format!("{} resolved without {}", chain.id, step.structure))?;
            check(f.step == first_use && f.reason == FailureReason::StructureMissing, || {
                format!("{} minus {}: {f:?}", chain.id, step.structure)
            })?;
            let r = resolve_chain(&without_member(&full, &step.structure, &step.member), chain);
            let f = r.first_failure.ok_or_else(|| format!("{} resolved without {}", chain.id, step.member))?;
            check(f.step == index && f.reason == FailureReason::MemberMissing, || {
                format!("{} minus {}.{}: {f:?}", chain.id, step.structure, step.member)
            })?;
            mutations += 2;
        }
    }
    Ok(Verdict::Pass(format!(
        "{} shipped chains, {mutations} mutations each broken at the mutated step",
        chains.len()
    )))
}

type Criterion = (&'static str, fn() -> Outcome);

#[test]
fn acceptance() {
    let criteria: [Criterion; 6] = [
        ("extractor fidelity", extractor_fidelity),
        ("diff oracle equivalence", diff_oracle_equivalence),
        ("impact-score properties", impact_score_properties),
        ("round-trip stability", round_trip_stability),
        ("dataset reproduction", dataset_reproduction),
        ("chain-resolution consistency", chain_resolution_consistency),
    ];
    let mut failures = Vec::new();
    for (name, criterion) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(criterion)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| (*s).to_owned()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        match outcome {
            Ok(Verdict::Pass(detail)) => println!("PASS  {name}: {detail}"),
            Ok(Verdict::Skip(reason)) => println!("SKIP  {name}: {reason}"),
            Err(reason) => {
                println!("FAIL  {name}: {reason}");
                failures.push(name);
            }
        }
    }
    assert!(failures.is_empty(), "failed criteria: {failures:?}");
}
