//! Fast invariant suite behind `msign selfcheck`.

use std::time::Instant;

use crate::crypto::{build_merkle, hash0, verify_membership, AuthorId, Broadcast, Digest, SigningIdentity};
use crate::model::{make_synthetic_task, train, ArchKind, ToyModel};
use crate::prf::Seed;
use crate::watermark::trigger::TriggerParams;
use crate::watermark::weight::WeightMarkParams;
use crate::watermark::{gen, verify, Scheme};

/// When set, the Merkle check corrupts one byte of every root it compares
/// against, so the suite must fail.
pub const FAULT_ENV: &str = "MSIGN_SELFCHECK_FAULT";

pub const GRADIENT_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct Line {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed_ms: f64,
}

/// `||g - g_fd|| / max(||g||, ||g_fd||)` with central differences.
pub fn gradient_error(model: &ToyModel, data: &crate::model::Dataset, eps: f64) -> f64 {
    let (_, g) = model.objective_gradient(&[(data, 1.0)]).expect("shapes match");
    let mut m = model.clone();
    let fd: Vec<f64> = (0..m.num_params())
        .map(|i| {
            let p = m.params()[i];
            m.params_mut()[i] = p + eps;
            let up = m.loss(data).expect("shapes match");
            m.params_mut()[i] = p - eps;
            let down = m.loss(data).expect("shapes match");
            m.params_mut()[i] = p;
            (up - down) / (2.0 * eps)
        })
        .collect();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = g.iter().zip(&fd).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(&g).max(norm(&fd)).max(1e-12)
}

fn merkle(fault: bool) -> (bool, String) {
    let mut checked = 0;
    for n in 1..=64u8 {
        let leaves: Vec<Digest> = (0..n).map(|i| hash0(&[n, i])).collect();
        let tree = build_merkle(&leaves).expect("non-empty");
        let mut root = tree.root();
        if fault {
            root.0[0] ^= 0x01;
        }
        if build_merkle(&leaves).expect("non-empty").root() != tree.root() {
            return (false, format!("rebuild of {n} leaves changed the root"));
        }
        for i in 0..n as usize {
            let path = tree.prove(i).expect("index in range");
            if !verify_membership(&path, &root) {
                return (false, format!("leaf {i} of {n} does not verify"));
            }
            let mut bad = path.clone();
            bad.leaf_digest = bad.leaf_digest.with_bit_flipped(0);
            if verify_membership(&bad, &root) {
                return (false, format!("tampered leaf {i} of {n} verifies"));
            }
            checked += 1;
        }
    }
    (true, format!("{checked} paths over 64 trees"))
}

fn gradients() -> (bool, String) {
    let mut worst: f64 = 0.0;
    for s in 0..5u64 {
        let (data, _) = make_synthetic_task(3, 6, 4, s).expect("valid task");
        let model = ToyModel::with_arch(ArchKind::Default, 6, 3, Seed::from_u64(s)).expect("valid arch");
        worst = worst.max(gradient_error(&model, &data, 1e-5));
    }
    (worst <= GRADIENT_TOLERANCE, format!("max relative error {worst:.2e}"))
}

fn embed_round_trips() -> (bool, String) {
    let (data, _) = make_synthetic_task(4, 16, 60, 7).expect("valid task");
    let init = ToyModel::with_arch(ArchKind::Default, 16, 4, Seed::from_u64(7)).expect("valid arch");
    let model = train(&init, &data, 100, 0.5).expect("shapes match");
    let replay = data.head(64);
    let key = gen(256, &mut Seed::from_u64(1).rng(), AuthorId::new("a")).expect("valid bits");
    let other = gen(256, &mut Seed::from_u64(2).rng(), AuthorId::new("b")).expect("valid bits");
    for scheme in [
        Scheme::WeightMark(WeightMarkParams::default()),
        Scheme::TriggerMark(TriggerParams::default()),
    ] {
        let (marked, spec) = match scheme.embed(&model, &key, Some(&replay)) {
            Ok(r) => r,
            Err(e) => return (false, format!("{}: {e}", scheme.id().name())),
        };
        if !verify(&marked, &key, &spec) {
            return (false, format!("{}: own key rejected", scheme.id().name()));
        }
        if verify(&marked, &other, &spec) {
            return (false, format!("{}: foreign key accepted", scheme.id().name()));
        }
    }
    (true, "weightmark, triggermark".into())
}

fn signatures() -> (bool, String) {
    let id = SigningIdentity::from_seed(AuthorId::new("s"), [3; 32]);
    let other = SigningIdentity::from_seed(AuthorId::new("t"), [4; 32]);
    let info = crate::crypto::ModelInfo::new(vec![(2, 2)], 1);
    let b = Broadcast::sign(&id, 1, hash0(b"root"), info).expect("encodes");
    let wire = b.to_wire().expect("encodes");
    let ok = Broadcast::from_wire(&wire).is_ok_and(|back| back == b)
        && b.verify(&id.public_key())
        && !b.verify(&other.public_key());
    (ok, "sign, verify, wire round trip".into())
}

type CheckFn = Box<dyn Fn() -> (bool, String)>;

pub fn run(fault: bool) -> Vec<Line> {
    let checks: [(&'static str, CheckFn); 4] = [
        ("merkle-round-trips", Box::new(move || merkle(fault))),
        ("gradient-check", Box::new(gradients)),
        ("embed-verify-round-trips", Box::new(embed_round_trips)),
        ("broadcast-signatures", Box::new(signatures)),
    ];
    checks
        .iter()
        .map(|(name, f)| {
            let start = Instant::now();
            let (passed, detail) = f();
            Line {
                name,
                passed,
                detail,
                elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_suite_passes_and_fault_fails() {
        let lines = run(false);
        assert!(lines.iter().all(|l| l.passed), "{lines:?}");
        let (ok, _) = merkle(true);
        assert!(!ok);
    }
}
