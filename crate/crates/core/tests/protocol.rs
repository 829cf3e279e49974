use msign::cli::scenarios::{centralized_setup, p2p_setup, CentralizedSetup};
use msign::cli::{ScenarioConfig, ScenarioKind};
use msign::crypto::AuthorId;
use msign::fl::{federation, run_p2p, train_federated, FlConfig};
use msign::model::{evaluate, make_task, ArchKind, TaskSpec, ToyModel};
use msign::prf::{Prf, Seed};
use msign::verify::{
    prove_ownership, recover_ownership, step_presentations, trace_traitor_centralized, trace_traitor_p2p, Behavior,
    Community, PublicRecord, VerifyError,
};
use msign::watermark::weight::WeightMarkParams;
use msign::watermark::{gen, Scheme};

fn central(rounds: usize, seed: u64) -> (ScenarioConfig, CentralizedSetup) {
    let mut c = ScenarioConfig::new(ScenarioKind::FlCentralized);
    c.fl.rounds = rounds;
    let s = centralized_setup(&c, Seed::from_u64(seed)).unwrap();
    (c, s)
}

#[test]
fn every_party_proves_ownership_unanimously() {
    let (c, s) = central(5, 1);
    let pkg = &s.run.package;
    assert_eq!(pkg.evidence.len(), c.k + 1);
    assert_eq!(s.run.public.broadcasts().len(), 5 * c.k + 1);
    let community = Community::default();
    for (id, e) in &pkg.evidence {
        let v = prove_ownership(&community, &s.run.public, &pkg.final_model, e, &pkg.final_broadcast).unwrap();
        assert!(v.accepted && v.votes_for == 7 && v.votes_against == 0, "{id}");
    }
    let agg = s.aggregator.id();
    let pk = s.run.public.public_key(agg).unwrap();
    assert!(s
        .run
        .public
        .broadcasts()
        .iter()
        .all(|b| &b.signer == agg && b.verify(pk)));
}

#[test]
fn proofs_need_nothing_but_own_evidence() {
    let (_, s) = central(5, 2);
    let CentralizedSetup {
        run,
        authors,
        aggregator,
        ..
    } = s;
    let public: PublicRecord = run.public.clone();
    let model = run.package.final_model.clone();
    let broadcast = run.package.final_broadcast.clone();
    let mut evidence = run.package.evidence.clone();
    // Everyone else's keys, models and evidence are gone.
    drop((run, aggregator));
    for a in &authors {
        let own = evidence.remove(&a.id).unwrap();
        let v = prove_ownership(&Community::default(), &public, &model, &own, &broadcast).unwrap();
        assert!(v.accepted, "{}", a.id);
    }
}

/// Byte windows that would reveal a surveillance key: its seed and the
/// first blocks of every PRF stream the weight scheme draws from it.
fn secrets(seed: &[u8; 32]) -> Vec<Vec<u8>> {
    let mut out = vec![seed.to_vec()];
    for tag in ["weightmark/index", "weightmark/value"] {
        for counter in 0..4 {
            let block = Prf::block(seed, tag, counter).0;
            out.push(block.to_vec());
            out.extend(block.chunks(8).map(|c| c.to_vec()));
        }
    }
    out
}

#[test]
fn surveillance_keys_never_reach_their_targets() {
    let (_, s) = central(5, 3);
    for a in &s.authors {
        let sk = &s.aggregator.surveillance[&a.id].key;
        let needles = secrets(&sk.seed);
        let received = s.run.mailbox.received(&a.id);
        assert!(!received.is_empty());
        for blob in received {
            for n in &needles {
                assert!(
                    !blob.windows(n.len()).any(|w| w == n.as_slice()),
                    "{} saw surveillance material",
                    a.id
                );
            }
        }
    }
}

#[test]
fn fixed_seeds_reproduce_the_final_package() {
    let (_, a) = central(4, 4);
    let (_, b) = central(4, 4);
    assert_eq!(a.run.package.final_model.digest(), b.run.package.final_model.digest());
    assert_eq!(a.run.package.final_broadcast, b.run.package.final_broadcast);
    assert_eq!(
        serde_json::to_string(&a.run.package.evidence).unwrap(),
        serde_json::to_string(&b.run.package.evidence).unwrap()
    );
    assert_eq!(a.run.public.broadcasts(), b.run.public.broadcasts());
    let (_, c) = central(4, 5);
    assert_ne!(a.run.package.final_model.digest(), c.run.package.final_model.digest());
}

fn rounds_to(target: f64, k: usize, seed: u64) -> usize {
    let (train_d, test) = make_task(&TaskSpec::new(4, 16, 400), Seed::from_u64(seed)).unwrap();
    let (authors, _) = federation(&train_d, k, 0, Seed::from_u64(seed)).unwrap();
    let init = ToyModel::with_arch(ArchKind::Default, 16, 4, Seed::from_u64(seed)).unwrap();
    let cfg = FlConfig {
        rounds: 60,
        local_epochs: 5,
        lr: 0.5,
        ..Default::default()
    };
    let history = train_federated(&init, &authors, &cfg).unwrap();
    history
        .iter()
        .position(|m| evaluate(m, &test).unwrap().accuracy >= target)
        .unwrap_or(usize::MAX)
}

#[test]
fn more_authors_never_converge_faster() {
    let median = |k: usize| {
        let mut r: Vec<usize> = (0..5).map(|s| rounds_to(0.9, k, s)).collect();
        r.sort();
        r[2]
    };
    let (r2, r4, r8) = (median(2), median(4), median(8));
    assert!(r8 != usize::MAX, "K=8 never reached 0.9");
    assert!(r2 <= r4 && r4 <= r8, "rounds to 0.9: K=2 {r2}, K=4 {r4}, K=8 {r8}");
}

#[test]
fn honest_majority_decides() {
    let (_, s) = central(3, 6);
    let pkg = &s.run.package;
    let e = &pkg.evidence[&s.authors[0].id];
    let mut behaviors = vec![Behavior::Honest; 4];
    behaviors.extend([Behavior::AlwaysReject; 3]);
    let v = prove_ownership(
        &Community::new(&behaviors),
        &s.run.public,
        &pkg.final_model,
        e,
        &pkg.final_broadcast,
    )
    .unwrap();
    assert!(v.accepted);
    assert_eq!((v.votes_for, v.votes_against), (4, 3));

    let mut tampered = e.clone();
    let sib = &mut tampered.key_proof.path.siblings[0];
    sib.digest = sib.digest.with_bit_flipped(7);
    let v = prove_ownership(
        &Community::default(),
        &s.run.public,
        &pkg.final_model,
        &tampered,
        &pkg.final_broadcast,
    )
    .unwrap();
    assert!(!v.accepted);
    assert_eq!(v.votes_against, 7);

    for size in [1, 3, 5, 7, 9] {
        let c = Community::honest(size);
        let a = prove_ownership(&c, &s.run.public, &pkg.final_model, e, &pkg.final_broadcast).unwrap();
        let b = prove_ownership(&c, &s.run.public, &pkg.final_model, e, &pkg.final_broadcast).unwrap();
        assert_eq!(a, b);
        assert!(a.accepted);
    }
}

#[test]
fn unrecorded_broadcast_is_an_error() {
    let (_, s) = central(2, 7);
    let pkg = &s.run.package;
    let e = &pkg.evidence[&s.authors[0].id];
    let empty = PublicRecord::default();
    assert_eq!(
        prove_ownership(&Community::default(), &empty, &pkg.final_model, e, &pkg.final_broadcast),
        Err(VerifyError::UnknownBroadcast)
    );
}

#[test]
fn outside_models_trace_to_nobody_and_fabricated_victims_fail() {
    let (c, s) = central(3, 8);
    let stranger = ToyModel::with_arch(ArchKind::Default, 16, 4, Seed::from_u64(99)).unwrap();
    assert_eq!(trace_traitor_centralized(&s.aggregator, &stranger), Ok(None));
    assert_eq!(
        trace_traitor_centralized(&s.aggregator, &s.run.package.final_model),
        Ok(None)
    );

    let pkg = &s.run.package;
    let coauthor = &pkg.evidence[s.aggregator.id()];
    let mut victim = pkg.evidence[&s.authors[1].id].clone();
    victim.key = gen(256, &mut Seed::from_u64(5).rng(), victim.claimant.clone()).unwrap();
    let v = recover_ownership(
        &Community::default(),
        &s.run.public,
        &pkg.final_model,
        &victim,
        coauthor,
        &pkg.final_broadcast,
    )
    .unwrap();
    assert!(!v.accepted);
    assert_eq!(c.k, s.authors.len());
}

fn chain_config(schedule: Vec<usize>) -> ScenarioConfig {
    let mut c = ScenarioConfig::new(ScenarioKind::FlP2p);
    c.p2p.schedule = Some(schedule);
    c
}

#[test]
fn four_authors_two_passes() {
    let s = p2p_setup(&chain_config(vec![0, 1, 2, 3, 0, 1, 2, 3]), Seed::from_u64(1)).unwrap();
    assert_eq!(s.run.steps.len(), 8);
    assert_eq!(s.run.public.broadcasts().len(), 9);
    for step in &s.run.steps {
        assert_eq!(step.broadcast.signer, step.author);
        assert!(step.broadcast.verify(s.run.public.public_key(&step.author).unwrap()));
        assert_eq!(step.commitment.root(), step.broadcast.root);
    }
    let pkg = &s.run.package;
    let community = Community::default();
    assert_eq!(pkg.evidence.len(), 4);
    for (id, e) in &pkg.evidence {
        assert!(
            prove_ownership(&community, &s.run.public, &pkg.final_model, e, &pkg.final_broadcast)
                .unwrap()
                .accepted,
            "{id}"
        );
    }
    let presented = step_presentations(&s.run.steps);
    assert_eq!(
        trace_traitor_p2p(&community, &s.run.public, &s.run.steps, &presented, &pkg.final_model),
        Ok(8)
    );
    assert!(matches!(
        trace_traitor_p2p(
            &community,
            &s.run.public,
            &s.run.steps,
            &presented[1..],
            &pkg.final_model
        ),
        Err(VerifyError::ChainMismatch { steps: 8, presented: 7 })
    ));
}

#[test]
fn single_step_chain_is_plain_train_and_embed() {
    let s = p2p_setup(&chain_config(vec![2]), Seed::from_u64(2)).unwrap();
    assert_eq!(s.run.steps.len(), 1);
    assert_eq!(s.run.public.broadcasts().len(), 2);
    let pkg = &s.run.package;
    let e = &pkg.evidence[&s.authors[2].id];
    assert!(
        prove_ownership(
            &Community::default(),
            &s.run.public,
            &pkg.final_model,
            e,
            &pkg.final_broadcast
        )
        .unwrap()
        .accepted
    );
}

#[test]
fn forged_step_key_is_flagged() {
    let s = p2p_setup(&chain_config(vec![0, 1, 2]), Seed::from_u64(3)).unwrap();
    let mut presented = step_presentations(&s.run.steps);
    let author: AuthorId = s.run.steps[1].author.clone();
    presented[1].key = gen(256, &mut Seed::from_u64(9).rng(), author.clone()).unwrap();
    assert_eq!(
        trace_traitor_p2p(
            &Community::default(),
            &s.run.public,
            &s.run.steps,
            &presented,
            &s.run.package.final_model
        ),
        Err(VerifyError::InconsistentHistory { position: 2, author })
    );
}

#[test]
fn chain_refuses_bad_schedules() {
    let (train_d, _) = make_task(&TaskSpec::new(4, 16, 100), Seed::from_u64(1)).unwrap();
    let (authors, _) = federation(&train_d, 2, 0, Seed::from_u64(1)).unwrap();
    let init = ToyModel::with_arch(ArchKind::Default, 16, 4, Seed::from_u64(1)).unwrap();
    let scheme = Scheme::WeightMark(WeightMarkParams::default());
    let cfg = FlConfig::default();
    assert!(run_p2p(&authors, &[], &scheme, &init, &cfg).is_err());
    assert!(run_p2p(&authors, &[0, 5], &scheme, &init, &cfg).is_err());
    let capped = FlConfig {
        capacity: Some(2),
        ..Default::default()
    };
    assert!(run_p2p(&authors, &[0, 1, 0], &scheme, &init, &capped).is_err());
}
