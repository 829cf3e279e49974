use msign::capacity::{
    clean_error_delta, embedding_timer, epoch_timer, estimate_capacity_detailed, CapacityError, StopReason,
};
use msign::crypto::AuthorId;
use msign::fl::KEY_BITS;
use msign::model::{evaluate, make_task, train, ArchKind, Dataset, TaskSpec, ToyModel};
use msign::prf::Seed;
use msign::watermark::trigger::TriggerParams;
use msign::watermark::weight::WeightMarkParams;
use msign::watermark::{gen, verify, Key, Scheme, WatermarkError};

fn setup(seed: u64) -> (ToyModel, Dataset, Dataset) {
    let (train_d, test) = make_task(&TaskSpec::new(4, 16, 400), Seed::from_u64(seed)).unwrap();
    let init = ToyModel::with_arch(ArchKind::Default, 16, 4, Seed::from_u64(seed)).unwrap();
    let model = train(&init, &train_d, 300, 0.5).unwrap();
    (model, train_d.head(256), test)
}

/// Key `i` of a capacity search, rebuilt from the seed alone.
fn search_key(seed: Seed, i: usize) -> Key {
    gen(
        KEY_BITS,
        &mut seed.child_idx("capacity-key", i as u64).rng(),
        AuthorId(format!("capacity-{i}")),
    )
    .unwrap()
}

/// Re-checks the reported q from scratch: at q both conditions hold, and
/// adding key q + 1 to the model at q breaks one of them.
fn check_boundary(scheme: &Scheme, seed: u64) {
    let (model, replay, test) = setup(seed);
    let delta = clean_error_delta(&model, &test).unwrap();
    let floor = evaluate(&model, &test).unwrap().accuracy - delta;
    let search = Seed::from_u64(seed).child("search");
    let run = estimate_capacity_detailed(&model, scheme, delta, 200, Some(&replay), &test, search).unwrap();
    let q = run.report.q;
    assert!(q >= 1, "{}: nothing fits", scheme.id().name());
    assert_ne!(run.report.stop, StopReason::CapReached);

    let keys: Vec<Key> = (1..=q + 1).map(|i| search_key(search, i)).collect();
    for (i, (k, spec)) in run.marks.iter().enumerate() {
        assert_eq!(k, &keys[i]);
        assert!(verify(&run.model, k, spec), "key {} lost at q", i + 1);
    }
    assert!(evaluate(&run.model, &test).unwrap().accuracy >= floor);

    let refs: Vec<&Key> = keys.iter().collect();
    let broke = match scheme.embed_many(&run.model, &refs, Some(&replay)) {
        Err(WatermarkError::EmbedFailed { .. }) => true,
        Err(e) => panic!("{e}"),
        Ok((next, specs)) => {
            evaluate(&next, &test).unwrap().accuracy < floor
                || refs.iter().zip(&specs).any(|(k, s)| !verify(&next, k, s))
        }
    };
    assert!(
        broke,
        "{}: q + 1 = {} still satisfies both conditions",
        scheme.id().name(),
        q + 1
    );
}

#[test]
fn weightmark_capacity_is_tight() {
    check_boundary(&Scheme::WeightMark(WeightMarkParams::default()), 31);
}

#[test]
fn triggermark_capacity_is_tight() {
    check_boundary(&Scheme::TriggerMark(TriggerParams::default()), 32);
}

#[test]
fn timers_need_five_trials_and_keep_every_sample() {
    let (model, replay, _) = setup(33);
    let scheme = Scheme::WeightMark(WeightMarkParams::default());
    assert_eq!(
        embedding_timer(&scheme, &model, Some(&replay), 4, Seed::from_u64(1)),
        Err(CapacityError::TooFewTrials(4))
    );
    assert_eq!(
        epoch_timer(&model, &replay, 0.5, 4),
        Err(CapacityError::TooFewTrials(4))
    );
    let t = embedding_timer(&scheme, &model, Some(&replay), 5, Seed::from_u64(1)).unwrap();
    assert_eq!(t.samples_ms.len(), 5);
    assert!(t.samples_ms.iter().all(|&s| s >= 0.0));
    assert_eq!(t.median_ms, sorted(&t.samples_ms)[2]);
    let e = epoch_timer(&model, &replay, 0.5, 6).unwrap();
    let s = sorted(&e.samples_ms);
    assert_eq!(e.median_ms, (s[2] + s[3]) / 2.0);
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}
