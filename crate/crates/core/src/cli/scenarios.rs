use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{ScenarioConfig, ScenarioKind};
use crate::adversary::{
    pirate_attempt, spoil_synchronism, traitor_publish, traitor_publish_step, AdversaryError, EavesdropLog,
    PirateReport, PirateTarget, SpoilConfig, Strategy,
};
use crate::capacity::{clean_error_delta, estimate_capacity_detailed, CapacityError, CapacityReport};
use crate::crypto::{AuthorId, Broadcast};
use crate::fl::{
    federation, run_centralized, run_p2p, train_federated, Aggregator, Author, CentralizedRun, FinalPackage, FlError,
    P2pRun, KEY_BITS,
};
use crate::model::{evaluate, make_task, train, ArchKind, Dataset, ModelError, ToyModel};
use crate::prf::Seed;
use crate::verify::{
    prove_ownership, step_presentations, trace_traitor_centralized, trace_traitor_p2p, Community, Evidence,
    PublicRecord, Verdict, VerifyError,
};
use crate::watermark::atgf::{federated_generator, AeLayout, AtgfParams};
use crate::watermark::weight::WeightMarkParams;
use crate::watermark::{gen, verify, Key, Scheme, SchemeId, VerifierSpec, WatermarkError};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Fl(#[from] FlError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Watermark(#[from] WatermarkError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Adversary(#[from] AdversaryError),
    #[error(transparent)]
    Capacity(#[from] CapacityError),
}

type Result<T> = std::result::Result<T, ScenarioError>;

/// Seed of run `index` under the top-level seed.
pub fn run_seed(top: u64, index: usize) -> Seed {
    Seed::from_u64(top).child_idx("run", index as u64)
}

fn runs(config: &ScenarioConfig) -> Vec<(usize, Seed)> {
    (0..config.runs).map(|r| (r, run_seed(config.seed, r))).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proof {
    pub claimant: AuthorId,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CentralizedOutcome {
    pub run: usize,
    pub seed: String,
    pub baseline_accuracy: f64,
    pub final_accuracy: f64,
    pub accuracy_drop: f64,
    /// Clean aggregated model after each round.
    pub round_accuracy: Vec<f64>,
    pub broadcasts: Vec<Broadcast>,
    pub proofs: Vec<Proof>,
    pub final_trace: Option<AuthorId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct P2pOutcome {
    pub run: usize,
    pub seed: String,
    pub schedule: Vec<usize>,
    pub warm_accuracy: f64,
    pub final_accuracy: f64,
    pub broadcasts: Vec<Broadcast>,
    pub proofs: Vec<Proof>,
    pub final_trace: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityOutcome {
    pub run: usize,
    pub seed: String,
    pub arch_kind: ArchKind,
    pub report: CapacityReport,
    /// The model returned at `q` carries all `q` marks and keeps accuracy.
    pub recheck: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpoilRecord {
    pub k: usize,
    pub scheme: SchemeId,
    pub run: usize,
    pub seed: String,
    pub watermarked_accuracy: Option<f64>,
    /// Fraction of the other `k - 1` marks still verifying after the first
    /// one was spoiled.
    pub surviving: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceMode {
    Centralized,
    P2p,
}

impl TraceMode {
    pub fn name(self) -> &'static str {
        match self {
            TraceMode::Centralized => "centralized",
            TraceMode::P2p => "p2p",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Suspect {
    Nobody,
    Author { id: AuthorId },
    Position { position: usize, author: AuthorId },
    Ambiguous { ids: Vec<AuthorId> },
}

impl Suspect {
    fn centralized(r: std::result::Result<Option<AuthorId>, VerifyError>) -> Result<Self> {
        match r {
            Ok(Some(id)) => Ok(Suspect::Author { id }),
            Ok(None) => Ok(Suspect::Nobody),
            Err(VerifyError::AmbiguousTrace(ids)) => Ok(Suspect::Ambiguous { ids }),
            Err(e) => Err(e.into()),
        }
    }

    fn position(position: usize, schedule: &[usize], authors: &[Author]) -> Self {
        match position {
            0 => Suspect::Nobody,
            p => Suspect::Position {
                position: p,
                author: authors[schedule[p - 1]].id.clone(),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub mode: TraceMode,
    pub run: usize,
    pub seed: String,
    pub traitor: Suspect,
    pub traced: Suspect,
    pub traced_after_finetune: Suspect,
    pub finetune_epochs: usize,
    /// Who the published final model points to; should be nobody for the
    /// centralised mode and the last chain step for the chain.
    pub final_model_trace: Suspect,
    pub broadcasts: Vec<Broadcast>,
}

impl TraceRecord {
    pub fn correct(&self) -> bool {
        self.traced == self.traitor
    }

    pub fn correct_after_finetune(&self) -> bool {
        self.traced_after_finetune == self.traitor
    }

    /// Someone other than the traitor was named, before or after fine-tuning.
    pub fn false_accusations(&self) -> usize {
        [&self.traced, &self.traced_after_finetune]
            .iter()
            .filter(|s| ***s != Suspect::Nobody && ***s != self.traitor)
            .count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PirateOutcome {
    pub run: usize,
    pub seed: String,
    pub broadcasts: Vec<Broadcast>,
    /// Genuine proofs the pirate overheard.
    pub genuine_proofs: Vec<Proof>,
    pub reports: Vec<PirateReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scenario", content = "runs", rename_all = "kebab-case")]
pub enum Results {
    FlCentralized(Vec<CentralizedOutcome>),
    FlP2p(Vec<P2pOutcome>),
    Capacity(Vec<CapacityOutcome>),
    SpoilBench(Vec<SpoilRecord>),
    TraceBench(Vec<TraceRecord>),
    PirateFuzz(Vec<PirateOutcome>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        }
    }
}

pub fn execute(config: &ScenarioConfig) -> Result<(Results, Vec<Check>)> {
    Ok(match config.scenario {
        ScenarioKind::FlCentralized => {
            let out = fl_centralized(config)?;
            let checks = centralized_checks(config, &out);
            (Results::FlCentralized(out), checks)
        }
        ScenarioKind::FlP2p => {
            let out = fl_p2p(config)?;
            let checks = p2p_checks(&out);
            (Results::FlP2p(out), checks)
        }
        ScenarioKind::Capacity => {
            let out = capacity(config)?;
            let bad = out.iter().filter(|o| !o.recheck).count();
            let checks = vec![Check::new(
                "capacity-recheck",
                bad == 0,
                format!("{bad} of {} runs failed", out.len()),
            )];
            (Results::Capacity(out), checks)
        }
        ScenarioKind::SpoilBench => {
            let out = spoil_bench(config)?;
            let checks = spoil_checks(&out);
            (Results::SpoilBench(out), checks)
        }
        ScenarioKind::TraceBench => {
            let out = trace_bench(config)?;
            let checks = trace_checks(&out);
            (Results::TraceBench(out), checks)
        }
        ScenarioKind::PirateFuzz => {
            let out = pirate_fuzz(config)?;
            let checks = pirate_checks(&out);
            (Results::PirateFuzz(out), checks)
        }
    })
}

/// Builds scheme `id`. The autoencoder generator is trained across
/// `author_data`.
pub fn build_scheme(
    id: SchemeId,
    config: &ScenarioConfig,
    weightmark: &WeightMarkParams,
    author_data: &[&Dataset],
    seed: Seed,
) -> Result<Scheme> {
    Ok(match id {
        SchemeId::WeightMark => Scheme::WeightMark(weightmark.clone()),
        SchemeId::TriggerMark => Scheme::TriggerMark(config.trigger.clone()),
        SchemeId::AtgfMark => {
            let generator = federated_generator(
                AeLayout::new(config.dataset.dim),
                author_data,
                &config.atgf,
                seed.child("label-map").0,
                seed.child("autoencoder"),
            )?;
            Scheme::AtgfMark(AtgfParams {
                n_triggers: config.trigger.n_triggers,
                threshold: config.trigger.threshold,
                tune: config.trigger.tune.clone(),
                ..AtgfParams::new(generator)
            })
        }
    })
}

fn init_model(config: &ScenarioConfig, arch: ArchKind, seed: Seed) -> Result<ToyModel> {
    Ok(ToyModel::with_arch(
        arch,
        config.dataset.dim,
        config.dataset.num_classes,
        seed.child("init"),
    )?)
}

fn prove_all(community: &Community, public: &PublicRecord, package: &FinalPackage) -> Result<Vec<Proof>> {
    package
        .evidence
        .iter()
        .map(|(id, e)| {
            Ok(Proof {
                claimant: id.clone(),
                verdict: prove_ownership(community, public, &package.final_model, e, &package.final_broadcast)?,
            })
        })
        .collect()
}

/// Everything a watermarked centralised run leaves behind.
pub struct CentralizedSetup {
    pub authors: Vec<Author>,
    pub aggregator: Aggregator,
    pub scheme: Scheme,
    pub init: ToyModel,
    pub test: Dataset,
    pub run: CentralizedRun,
}

pub fn centralized_setup(config: &ScenarioConfig, seed: Seed) -> Result<CentralizedSetup> {
    let (train_d, test) = make_task(&config.dataset, seed.child("task"))?;
    let (authors, mut aggregator) = federation(&train_d, config.k, config.replay_size, seed.child("federation"))?;
    let data: Vec<&Dataset> = authors.iter().map(|a| &a.local_data).collect();
    let scheme = build_scheme(config.scheme, config, &config.weightmark, &data, seed.child("scheme"))?;
    let init = init_model(config, config.arch, seed)?;
    let run = run_centralized(&authors, &mut aggregator, &scheme, &init, &config.fl)?;
    Ok(CentralizedSetup {
        authors,
        aggregator,
        scheme,
        init,
        test,
        run,
    })
}

fn fl_centralized(config: &ScenarioConfig) -> Result<Vec<CentralizedOutcome>> {
    let community = Community::honest(config.community_size);
    runs(config)
        .into_par_iter()
        .map(|(run, seed)| {
            let s = centralized_setup(config, seed)?;
            let baseline = train_federated(&s.init, &s.authors, &config.fl)?;
            let baseline_accuracy = evaluate(baseline.last().expect("init is included"), &s.test)?.accuracy;
            let final_accuracy = evaluate(&s.run.package.final_model, &s.test)?.accuracy;
            let round_accuracy = s
                .run
                .rounds
                .iter()
                .map(|r| Ok(evaluate(&r.aggregated, &s.test)?.accuracy))
                .collect::<Result<Vec<f64>>>()?;
            Ok(CentralizedOutcome {
                run,
                seed: hex::encode(seed.0),
                baseline_accuracy,
                final_accuracy,
                accuracy_drop: baseline_accuracy - final_accuracy,
                round_accuracy,
                broadcasts: s.run.public.broadcasts().to_vec(),
                proofs: prove_all(&community, &s.run.public, &s.run.package)?,
                final_trace: trace_traitor_centralized(&s.aggregator, &s.run.package.final_model)?,
            })
        })
        .collect()
}

fn centralized_checks(config: &ScenarioConfig, out: &[CentralizedOutcome]) -> Vec<Check> {
    let proofs: Vec<&Proof> = out.iter().flat_map(|o| &o.proofs).collect();
    let accepted = proofs.iter().filter(|p| p.verdict.accepted).count();
    let traced = out.iter().filter(|o| o.final_trace.is_some()).count();
    let mut checks = vec![
        Check::new(
            "ownership-proofs",
            accepted == proofs.len(),
            format!("{accepted}/{} accepted", proofs.len()),
        ),
        Check::new(
            "final-model-untraced",
            traced == 0,
            format!("{traced} final models traced to an author"),
        ),
    ];
    if let Some(limit) = config.max_accuracy_drop {
        let worst = out.iter().map(|o| o.accuracy_drop).fold(f64::NEG_INFINITY, f64::max);
        checks.push(Check::new(
            "accuracy-drop",
            worst <= limit,
            format!("worst drop {worst:.4}, limit {limit}"),
        ));
    }
    checks
}

/// Everything a chain run leaves behind.
pub struct P2pSetup {
    pub authors: Vec<Author>,
    pub scheme: Scheme,
    pub init: ToyModel,
    pub test: Dataset,
    pub schedule: Vec<usize>,
    pub run: P2pRun,
}

pub fn p2p_setup(config: &ScenarioConfig, seed: Seed) -> Result<P2pSetup> {
    let p = &config.p2p;
    let (train_d, test) = make_task(&config.dataset, seed.child("task"))?;
    let (authors, _) = federation(&train_d, config.k, config.replay_size, seed.child("federation"))?;
    let data: Vec<&Dataset> = authors.iter().map(|a| &a.local_data).collect();
    let scheme = build_scheme(config.scheme, config, &p.weightmark, &data, seed.child("scheme"))?;
    let mut init = init_model(config, config.arch, seed)?;
    if p.warm_start_epochs > 0 && config.replay_size > 0 {
        init = train(
            &init,
            &train_d.head(config.replay_size),
            p.warm_start_epochs,
            p.warm_start_lr,
        )?;
    }
    let schedule = match &p.schedule {
        Some(s) => s.clone(),
        None => {
            let mut rng = seed.child("schedule").rng();
            (0..p.chain_length).map(|_| rng.random_range(0..config.k)).collect()
        }
    };
    let run = run_p2p(&authors, &schedule, &scheme, &init, &p.fl)?;
    Ok(P2pSetup {
        authors,
        scheme,
        init,
        test,
        schedule,
        run,
    })
}

fn fl_p2p(config: &ScenarioConfig) -> Result<Vec<P2pOutcome>> {
    let community = Community::honest(config.community_size);
    runs(config)
        .into_par_iter()
        .map(|(run, seed)| {
            let s = p2p_setup(config, seed)?;
            let presented = step_presentations(&s.run.steps);
            let final_model = &s.run.package.final_model;
            Ok(P2pOutcome {
                run,
                seed: hex::encode(seed.0),
                schedule: s.schedule.clone(),
                warm_accuracy: evaluate(&s.init, &s.test)?.accuracy,
                final_accuracy: evaluate(final_model, &s.test)?.accuracy,
                broadcasts: s.run.public.broadcasts().to_vec(),
                proofs: prove_all(&community, &s.run.public, &s.run.package)?,
                final_trace: trace_traitor_p2p(&community, &s.run.public, &s.run.steps, &presented, final_model)?,
            })
        })
        .collect()
}

fn p2p_checks(out: &[P2pOutcome]) -> Vec<Check> {
    let proofs: Vec<&Proof> = out.iter().flat_map(|o| &o.proofs).collect();
    let accepted = proofs.iter().filter(|p| p.verdict.accepted).count();
    let wrong = out.iter().filter(|o| o.final_trace != o.schedule.len()).count();
    vec![
        Check::new(
            "ownership-proofs",
            accepted == proofs.len(),
            format!("{accepted}/{} accepted", proofs.len()),
        ),
        Check::new(
            "final-model-traces-to-last-step",
            wrong == 0,
            format!("{wrong} runs traced elsewhere"),
        ),
    ]
}

fn replay_of(train_d: &Dataset, size: usize) -> Option<Dataset> {
    (size > 0).then(|| train_d.head(size))
}

fn capacity(config: &ScenarioConfig) -> Result<Vec<CapacityOutcome>> {
    let jobs: Vec<(ArchKind, SchemeId, usize, Seed)> = config
        .archs
        .iter()
        .flat_map(|&arch| {
            config
                .bench_schemes()
                .into_iter()
                .flat_map(move |scheme| runs(config).into_iter().map(move |(r, s)| (arch, scheme, r, s)))
        })
        .collect();
    jobs.into_par_iter()
        .map(|(arch, scheme_id, run, seed)| {
            let (train_d, test) = make_task(&config.dataset, seed.child("task"))?;
            let model = train(
                &init_model(config, arch, seed)?,
                &train_d,
                config.train_epochs,
                config.train_lr,
            )?;
            let shards = train_d.shards(config.k);
            let data: Vec<&Dataset> = shards.iter().collect();
            let scheme = build_scheme(scheme_id, config, &config.weightmark, &data, seed.child("scheme"))?;
            let delta = clean_error_delta(&model, &test)?;
            let replay = replay_of(&train_d, config.replay_size);
            let found = estimate_capacity_detailed(
                &model,
                &scheme,
                delta,
                config.cap_max,
                replay.as_ref(),
                &test,
                seed.child("capacity"),
            )?;
            let floor = found.report.clean_accuracy() - delta;
            let recheck = found.marks.iter().all(|(k, s)| verify(&found.model, k, s))
                && evaluate(&found.model, &test)?.accuracy >= floor;
            Ok(CapacityOutcome {
                run,
                seed: hex::encode(seed.0),
                arch_kind: arch,
                report: found.report,
                recheck,
            })
        })
        .collect()
}

/// Keys for `k` authors.
pub fn author_keys(k: usize, seed: Seed) -> Result<Vec<Key>> {
    (0..k)
        .map(|i| {
            let mut rng = seed.child_idx("author-key", i as u64).rng();
            Ok(gen(KEY_BITS, &mut rng, AuthorId(format!("author-{}", i + 1)))?)
        })
        .collect()
}

fn spoil_bench(config: &ScenarioConfig) -> Result<Vec<SpoilRecord>> {
    let jobs: Vec<(usize, usize, Seed)> = config
        .k_values
        .iter()
        .flat_map(|&k| runs(config).into_iter().map(move |(r, s)| (k, r, s)))
        .collect();
    let nested = jobs
        .into_par_iter()
        .map(|(k, run, seed)| {
            let (train_d, test) = make_task(&config.dataset, seed.child("task"))?;
            let model = train(
                &init_model(config, config.arch, seed)?,
                &train_d,
                config.train_epochs,
                config.train_lr,
            )?;
            let replay = replay_of(&train_d, config.replay_size);
            let shards = train_d.shards(k);
            let data: Vec<&Dataset> = shards.iter().collect();
            let keys = author_keys(k, seed)?;
            let key_refs: Vec<&Key> = keys.iter().collect();
            config
                .bench_schemes()
                .into_iter()
                .map(|scheme_id| {
                    let mut rec = SpoilRecord {
                        k,
                        scheme: scheme_id,
                        run,
                        seed: hex::encode(seed.0),
                        watermarked_accuracy: None,
                        surviving: None,
                        failure: None,
                    };
                    let scheme = build_scheme(scheme_id, config, &config.weightmark, &data, seed.child("scheme"))?;
                    let (marked, specs) = match scheme.embed_many(&model, &key_refs, replay.as_ref()) {
                        Ok(r) => r,
                        Err(e @ WatermarkError::EmbedFailed { .. }) => {
                            rec.failure = Some(format!("embed: {e}"));
                            return Ok(rec);
                        }
                        Err(e) => return Err(e.into()),
                    };
                    rec.watermarked_accuracy = Some(evaluate(&marked, &test)?.accuracy);
                    let marks: Vec<(Key, VerifierSpec)> = keys.iter().cloned().zip(specs).collect();
                    let mut rng = seed.child("spoil").rng();
                    match spoil_synchronism(&marked, &marks, 0, &SpoilConfig::for_scheme(&scheme), &mut rng) {
                        Ok(f) => rec.surviving = Some(f),
                        Err(e @ AdversaryError::SpoilFailed { .. }) => rec.failure = Some(format!("spoil: {e}")),
                        Err(e) => return Err(e.into()),
                    }
                    Ok(rec)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(nested.into_iter().flatten().collect())
}

fn spoil_checks(out: &[SpoilRecord]) -> Vec<Check> {
    let weight: Vec<&SpoilRecord> = out.iter().filter(|r| r.scheme == SchemeId::WeightMark).collect();
    if weight.is_empty() {
        return Vec::new();
    }
    let bad = weight.iter().filter(|r| r.surviving != Some(1.0)).count();
    vec![Check::new(
        "weightmark-marks-independent",
        bad == 0,
        format!("{bad} of {} runs lost a sibling mark", weight.len()),
    )]
}

fn trace_centralized(config: &ScenarioConfig, run: usize, seed: Seed) -> Result<TraceRecord> {
    let s = centralized_setup(config, seed)?;
    let mut rng = seed.child("traitor").rng();
    let round = rng.random_range(0..s.run.rounds.len());
    let traitor = &s.authors[rng.random_range(0..s.authors.len())];
    let leaked = traitor_publish(&s.run.rounds[round], &traitor.id)?;
    let tuned = train(&leaked, &traitor.local_data, config.finetune_epochs, config.fl.lr)?;
    Ok(TraceRecord {
        mode: TraceMode::Centralized,
        run,
        seed: hex::encode(seed.0),
        traitor: Suspect::Author { id: traitor.id.clone() },
        traced: Suspect::centralized(trace_traitor_centralized(&s.aggregator, &leaked))?,
        traced_after_finetune: Suspect::centralized(trace_traitor_centralized(&s.aggregator, &tuned))?,
        finetune_epochs: config.finetune_epochs,
        final_model_trace: Suspect::centralized(trace_traitor_centralized(&s.aggregator, &s.run.package.final_model))?,
        broadcasts: s.run.public.broadcasts().to_vec(),
    })
}

fn trace_p2p(config: &ScenarioConfig, run: usize, seed: Seed) -> Result<TraceRecord> {
    let community = Community::honest(config.community_size);
    let s = p2p_setup(config, seed)?;
    let steps = &s.run.steps;
    let presented: Vec<Evidence> = step_presentations(steps);
    let position = seed.child("traitor").rng().random_range(1..=steps.len());
    let leaked = traitor_publish_step(steps, position)?;
    let traitor_data = &s.authors[s.schedule[position - 1]].local_data;
    let tuned = train(&leaked, traitor_data, config.finetune_epochs, config.p2p.fl.lr)?;
    let trace = |m: &ToyModel| -> Result<Suspect> {
        let p = trace_traitor_p2p(&community, &s.run.public, steps, &presented, m)?;
        Ok(Suspect::position(p, &s.schedule, &s.authors))
    };
    Ok(TraceRecord {
        mode: TraceMode::P2p,
        run,
        seed: hex::encode(seed.0),
        traitor: Suspect::position(position, &s.schedule, &s.authors),
        traced: trace(&leaked)?,
        traced_after_finetune: trace(&tuned)?,
        finetune_epochs: config.finetune_epochs,
        final_model_trace: trace(&s.run.package.final_model)?,
        broadcasts: s.run.public.broadcasts().to_vec(),
    })
}

fn trace_bench(config: &ScenarioConfig) -> Result<Vec<TraceRecord>> {
    let jobs: Vec<(TraceMode, usize, Seed)> = [TraceMode::Centralized, TraceMode::P2p]
        .into_iter()
        .flat_map(|m| runs(config).into_iter().map(move |(r, s)| (m, r, s)))
        .collect();
    jobs.into_par_iter()
        .map(|(mode, run, seed)| match mode {
            TraceMode::Centralized => trace_centralized(config, run, seed),
            TraceMode::P2p => trace_p2p(config, run, seed),
        })
        .collect()
}

fn trace_checks(out: &[TraceRecord]) -> Vec<Check> {
    let n = out.len();
    let correct = out.iter().filter(|r| r.correct()).count();
    let tuned = out.iter().filter(|r| r.correct_after_finetune()).count();
    let false_acc: usize = out.iter().map(TraceRecord::false_accusations).sum();
    let clean_final = out
        .iter()
        .filter(|r| match r.mode {
            TraceMode::Centralized => r.final_model_trace == Suspect::Nobody,
            TraceMode::P2p => matches!(r.final_model_trace, Suspect::Position { .. }),
        })
        .count();
    vec![
        Check::new("traitor-identified", correct == n, format!("{correct}/{n}")),
        Check::new("traitor-identified-after-finetune", tuned == n, format!("{tuned}/{n}")),
        Check::new(
            "no-false-accusations",
            false_acc == 0,
            format!("{false_acc} false accusations"),
        ),
        Check::new(
            "final-model-trace",
            clean_final == n,
            format!("{clean_final}/{n} as expected"),
        ),
    ]
}

fn pirate_fuzz(config: &ScenarioConfig) -> Result<Vec<PirateOutcome>> {
    let community = Community::honest(config.community_size);
    // Runs go one at a time; the trials inside each already fan out.
    runs(config)
        .into_iter()
        .map(|(run, seed)| {
            let s = centralized_setup(config, seed)?;
            let package = &s.run.package;
            let genuine_proofs = prove_all(&community, &s.run.public, package)?;
            let mut log = EavesdropLog::default();
            package.evidence.values().for_each(|e| log.record(e));
            let target = PirateTarget {
                community: &community,
                record: &s.run.public,
                model: &package.final_model,
                reference: &package.final_broadcast,
                scheme: &s.scheme,
                log: &log,
            };
            let reports = Strategy::ALL
                .iter()
                .map(|&st| Ok(pirate_attempt(st, &target, config.trials, seed.child("pirate"))?))
                .collect::<Result<Vec<_>>>()?;
            Ok(PirateOutcome {
                run,
                seed: hex::encode(seed.0),
                broadcasts: s.run.public.broadcasts().to_vec(),
                genuine_proofs,
                reports,
            })
        })
        .collect()
}

fn pirate_checks(out: &[PirateOutcome]) -> Vec<Check> {
    let accepted: usize = out.iter().flat_map(|o| &o.reports).map(|r| r.accepted).sum();
    let trials: usize = out.iter().flat_map(|o| &o.reports).map(|r| r.trials).sum();
    let genuine = out
        .iter()
        .flat_map(|o| &o.genuine_proofs)
        .filter(|p| !p.verdict.accepted)
        .count();
    vec![
        Check::new(
            "no-forged-claim-accepted",
            accepted == 0,
            format!("{accepted}/{trials} accepted"),
        ),
        Check::new(
            "genuine-claims-accepted",
            genuine == 0,
            format!("{genuine} genuine proofs rejected"),
        ),
    ]
}
