//! End-to-end acceptance run. Prints one line per criterion and exits
//! non-zero if any of them fails.

mod common;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use msign::capacity::{embedding_timer, epoch_timer, StopReason};
use msign::cli::report::median;
use msign::cli::scenarios::build_scheme;
use msign::cli::selfcheck::{gradient_error, GRADIENT_TOLERANCE};
use msign::cli::{execute, Results, ScenarioConfig};
use msign::crypto::{build_merkle, hash0, verify_membership, Digest};
use msign::model::{make_synthetic_task, make_task, train, ArchKind, Dataset, ToyModel};
use msign::prf::Seed;
use msign::watermark::trigger::TriggerParams;
use msign::watermark::weight::WeightMarkParams;
use msign::watermark::{Scheme, SchemeId};
use rand::Rng;

use common::{leaf_sha, recovery_trial, reference_root};

type Outcome = (bool, String);
type Criterion = (&'static str, fn() -> Outcome);

fn config(name: &str) -> ScenarioConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(format!("{name}.json"));
    ScenarioConfig::load(&path).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn secs(start: Instant) -> f64 {
    start.elapsed().as_secs_f64()
}

fn protocol_round_trip() -> Outcome {
    let c = config("fl-centralized");
    assert_eq!((c.k, c.fl.rounds), (4, 20));
    let start = Instant::now();
    let Ok((Results::FlCentralized(runs), _)) = execute(&c) else {
        return (false, "scenario did not run".into());
    };
    let took = secs(start) / runs.len() as f64;
    let proofs: Vec<_> = runs.iter().flat_map(|r| &r.proofs).collect();
    let accepted = proofs
        .iter()
        .filter(|p| p.verdict.accepted && p.verdict.votes_for == 7)
        .count();
    let worst = runs.iter().map(|r| r.accuracy_drop).fold(f64::NEG_INFINITY, f64::max);
    let ok = accepted == proofs.len() && worst <= 0.031 && took < 120.0;
    (
        ok,
        format!(
            "{} runs, {accepted}/{} proofs accepted 7-0 (4 authors + aggregator per run), worst accuracy drop {worst:.4} (limit 0.031), {took:.1} s per run (limit 120)",
            runs.len(),
            proofs.len()
        ),
    )
}

fn capacity_convention() -> Outcome {
    let c = config("capacity");
    let start = Instant::now();
    let Ok((Results::Capacity(runs), _)) = execute(&c) else {
        return (false, "scenario did not run".into());
    };
    let took = secs(start);
    let rechecked = runs.iter().filter(|r| r.recheck).count();
    // The step past q must have failed one of the two conditions.
    let bounded = runs
        .iter()
        .filter(|r| {
            let rep = &r.report;
            match rep.stop {
                StopReason::AccuracyDrop => rep
                    .accuracy_curve
                    .get(rep.q + 1)
                    .is_some_and(|&(i, acc)| i == rep.q + 1 && acc < rep.clean_accuracy() - rep.delta),
                StopReason::VerifyFailed { .. } | StopReason::EmbedFailed => true,
                StopReason::CapReached => false,
            }
        })
        .count();
    let q_median = |scheme: SchemeId, arch: ArchKind| {
        let q: Vec<f64> = runs
            .iter()
            .filter(|r| r.report.scheme_id == scheme && r.arch_kind == arch)
            .map(|r| r.report.q as f64)
            .collect();
        median(&q).unwrap_or(f64::NAN)
    };
    let mut trend = Vec::new();
    let mut deeper = true;
    for scheme in [SchemeId::WeightMark, SchemeId::TriggerMark] {
        let (shallow, deep) = (q_median(scheme, ArchKind::Default), q_median(scheme, ArchKind::Deep));
        deeper &= deep >= shallow;
        trend.push(format!("{} q {shallow} -> {deep}", scheme.name()));
    }
    let ok = rechecked == runs.len() && bounded == runs.len() && deeper && took < 600.0;
    (
        ok,
        format!(
            "{rechecked}/{} hold at q, {bounded}/{} fail at q+1, median shallow -> deep: {}, {took:.0} s (limit 600)",
            runs.len(),
            runs.len(),
            trend.join(", ")
        ),
    )
}

fn spoil_synchronism() -> Outcome {
    let mut c = config("spoil-bench");
    c.k_values = vec![8];
    let Ok((Results::SpoilBench(records), _)) = execute(&c) else {
        return (false, "scenario did not run".into());
    };
    let stats = |scheme: SchemeId| {
        let rs: Vec<_> = records.iter().filter(|r| r.scheme == scheme).collect();
        let surviving: Vec<f64> = rs.iter().filter_map(|r| r.surviving).collect();
        (median(&surviving).unwrap_or(f64::NAN), rs.len() - surviving.len())
    };
    let (w, wf) = stats(SchemeId::WeightMark);
    let (t, tf) = stats(SchemeId::TriggerMark);
    let (a, af) = stats(SchemeId::AtgfMark);
    let ok = w == 1.0 && wf == 0 && a >= t;
    (
        ok,
        format!(
            "K=8, {} seeds, median surviving: weightmark {w} (need 1.0), atgf {a:.4} vs random trigger {t:.4} (need atgf >= trigger); runs without a result: weightmark {wf}, trigger {tf}, atgf {af}",
            c.runs
        ),
    )
}

fn piracy_fuzz() -> Outcome {
    let c = config("pirate-fuzz");
    let start = Instant::now();
    let Ok((Results::PirateFuzz(runs), _)) = execute(&c) else {
        return (false, "scenario did not run".into());
    };
    let took = secs(start);
    let per: Vec<String> = runs
        .iter()
        .flat_map(|r| &r.reports)
        .map(|r| format!("{} {}/{}", r.strategy.name(), r.accepted, r.trials))
        .collect();
    let reports: Vec<_> = runs.iter().flat_map(|r| &r.reports).collect();
    let ok = reports.len() == 3
        && reports.iter().all(|r| r.trials >= 10_000 && r.accepted == 0)
        && runs.iter().all(|r| r.genuine_proofs.iter().all(|p| p.verdict.accepted))
        && took < 300.0;
    (
        ok,
        format!("accepted forgeries: {}, {took:.0} s (limit 300)", per.join(", ")),
    )
}

fn traitor_tracing() -> Outcome {
    let c = config("trace-bench");
    let Ok((Results::TraceBench(records), _)) = execute(&c) else {
        return (false, "scenario did not run".into());
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for mode in ["centralized", "p2p"] {
        let rs: Vec<_> = records.iter().filter(|r| r.mode.name() == mode).collect();
        let n = rs.len();
        let hit = rs.iter().filter(|r| r.correct()).count();
        let tuned = rs.iter().filter(|r| r.correct_after_finetune()).count();
        let wrong: usize = rs.iter().map(|r| r.false_accusations()).sum();
        ok &= n == 20 && hit == n && tuned == n && wrong == 0;
        parts.push(format!(
            "{mode} {hit}/{n}, {tuned}/{n} after {} fine-tuning epochs, {wrong} false accusations",
            c.finetune_epochs
        ));
    }
    (ok, parts.join("; "))
}

fn recovery() -> Outcome {
    let trials: Vec<_> = (0..20).map(recovery_trial).collect();
    let spoiled = trials.iter().filter(|r| r.spoiled).count();
    let recovered = trials.iter().filter(|r| r.recovered).count();
    let rejected = trials.iter().filter(|r| r.cross_run_rejected).count();
    (
        spoiled == 20 && recovered == 20 && rejected == 20,
        format!("{spoiled}/20 spoiled, {recovered}/20 recovered, {rejected}/20 cross-run co-authors rejected"),
    )
}

fn numerical_core() -> Outcome {
    let mut rng = Seed::from_u64(7).child("gradients").rng();
    let mut worst: f64 = 0.0;
    for pair in 0..20u64 {
        let classes = rng.random_range(2..=5);
        let dim = rng.random_range(3..=10);
        let arch = if pair.is_multiple_of(2) {
            ArchKind::Default
        } else {
            ArchKind::Deep
        };
        let (data, _) = make_synthetic_task(classes, dim, rng.random_range(2..=8), pair).unwrap();
        let batch = data.head(rng.random_range(1..=data.len()));
        let model = ToyModel::with_arch(arch, dim, classes, Seed::from_u64(100 + pair)).unwrap();
        worst = worst.max(gradient_error(&model, &batch, 1e-5));
    }

    let mut rebuild = true;
    for n in 1..=64u64 {
        let leaves: Vec<Digest> = (0..n)
            .map(|i| hash0(&[n.to_le_bytes(), i.to_le_bytes()].concat()))
            .collect();
        let raw: Vec<[u8; 32]> = (0..n)
            .map(|i| leaf_sha(&[n.to_le_bytes(), i.to_le_bytes()].concat()))
            .collect();
        let tree = build_merkle(&leaves).unwrap();
        rebuild &= tree.root().0 == reference_root(&raw) && build_merkle(&leaves).unwrap() == tree;
        rebuild &= (0..n as usize).all(|i| verify_membership(&tree.prove(i).unwrap(), &tree.root()));
    }

    let leaves: Vec<Digest> = (0..4u8).map(|i| hash0(&[i])).collect();
    let tree = build_merkle(&leaves).unwrap();
    let (mut tampered, mut caught) = (0, 0);
    for i in 0..4 {
        let path = tree.prove(i).unwrap();
        for bit in 0..256 {
            let mut variants = vec![{
                let mut p = path.clone();
                p.leaf_digest = p.leaf_digest.with_bit_flipped(bit);
                p
            }];
            for s in 0..path.siblings.len() {
                let mut p = path.clone();
                p.siblings[s].digest = p.siblings[s].digest.with_bit_flipped(bit);
                variants.push(p);
            }
            tampered += variants.len();
            caught += variants.iter().filter(|p| !verify_membership(p, &tree.root())).count();
        }
    }
    (
        worst <= GRADIENT_TOLERANCE && rebuild && caught == tampered,
        format!(
            "max relative gradient error {worst:.2e} over 20 pairs (limit {GRADIENT_TOLERANCE:.0e}), trees of 1-64 leaves match the reference: {rebuild}, tampered paths rejected {caught}/{tampered}"
        ),
    )
}

fn embedding_cost() -> Outcome {
    let c = ScenarioConfig::new(msign::cli::ScenarioKind::Capacity);
    let seed = Seed::from_u64(8);
    let (train_d, _) = make_task(&c.dataset, seed.child("task")).unwrap();
    let init = ToyModel::with_arch(
        ArchKind::Default,
        c.dataset.dim,
        c.dataset.num_classes,
        seed.child("init"),
    )
    .unwrap();
    let model = train(&init, &train_d, c.train_epochs, c.train_lr).unwrap();
    let replay = train_d.head(c.replay_size);
    let shards = train_d.shards(c.k);
    let data: Vec<&Dataset> = shards.iter().collect();
    let overwrite_only = WeightMarkParams {
        repair_epochs: 0,
        ..WeightMarkParams::default()
    };
    let schemes = [
        ("weightmark", Scheme::WeightMark(WeightMarkParams::default())),
        ("triggermark", Scheme::TriggerMark(TriggerParams::default())),
        (
            "atgfmark",
            build_scheme(SchemeId::AtgfMark, &c, &c.weightmark, &data, seed.child("scheme")).unwrap(),
        ),
    ];
    let epoch = epoch_timer(&model, &train_d, c.train_lr, 5).unwrap().median_ms;
    let time = |s: &Scheme| {
        embedding_timer(s, &model, Some(&replay), 5, seed.child("timing"))
            .unwrap()
            .median_ms
    };
    let medians: Vec<(&str, f64)> = schemes.iter().map(|(n, s)| (*n, time(s))).collect();
    let bare = time(&Scheme::WeightMark(overwrite_only));
    let ordered = medians[0].1 < medians[1].1;
    let cheap = medians.iter().all(|(_, t)| *t < 0.1 * epoch);
    let listed: Vec<String> = medians.iter().map(|(n, t)| format!("{n} {t:.3} ms")).collect();
    (
        ordered && cheap,
        format!(
            "5-trial medians: {}; weightmark without repair {bare:.3} ms; one epoch over {} samples {epoch:.3} ms (limit per embed {:.3} ms); weightmark < triggermark: {ordered}",
            listed.join(", "),
            train_d.len(),
            0.1 * epoch
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("protocol round-trip", protocol_round_trip),
        ("capacity convention", capacity_convention),
        ("spoil synchronism ordering", spoil_synchronism),
        ("piracy fuzz", piracy_fuzz),
        ("traitor tracing", traitor_tracing),
        ("recovery", recovery),
        ("numerical core", numerical_core),
        ("embedding cost ordering", embedding_cost),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (ok, detail) = check();
        failed += usize::from(!ok);
        println!(
            "acceptance {} {name}: {} ({:.1} s) {detail}",
            i + 1,
            if ok { "PASS" } else { "FAIL" },
            secs(start)
        );
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
