use openset3cm::infotheory::{ProbVector, SIMPLEX_TOL};
use openset3cm::loss::{ema_update, EmaAggregate};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_simplex(rng: &mut impl Rng, dim: usize) -> ProbVector {
    // Occasionally spiky so the fuzz covers near-degenerate vectors.
    let spike = rng.random_bool(0.2);
    let w: Vec<f64> = (0..dim)
        .map(|_| {
            let u: f64 = rng.random();
            if spike {
                u.powi(12)
            } else {
                u
            }
        })
        .collect();
    ProbVector::from_weights(&w).unwrap()
}

#[test]
fn ten_thousand_fuzzed_updates_stay_on_the_simplex() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for (dim, beta) in [(2, 0.0), (9, 0.9), (11, 0.995), (30, 0.5)] {
        let mut agg = EmaAggregate::uniform(dim, beta).unwrap();
        for _ in 0..10_000 {
            let n = rng.random_range(1..6);
            let batch: Vec<ProbVector> = (0..n).map(|_| random_simplex(&mut rng, dim)).collect();
            agg.update(&batch).unwrap();
            let q = agg.q_hat().as_slice();
            assert!(q.iter().all(|&v| v >= 0.0));
            assert!((q.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL);
        }
    }
}

#[test]
fn constant_stream_converges_geometrically() {
    let p = ProbVector::new(vec![0.7, 0.2, 0.1]).unwrap();
    for beta in [0.9, 0.995] {
        let mut agg = EmaAggregate::uniform(3, beta).unwrap();
        let q0 = agg.q_hat().clone();
        for t in 1..=200 {
            agg.update(std::slice::from_ref(&p)).unwrap();
            let bound = beta.powi(t);
            // Each update rounds a few times; allow that and nothing more.
            let rounding = 4.0 * t as f64 * f64::EPSILON;
            for i in 0..3 {
                let gap = (agg.q_hat().as_slice()[i] - p.as_slice()[i]).abs();
                let start = (q0.as_slice()[i] - p.as_slice()[i]).abs();
                assert!(
                    gap <= bound * start + rounding,
                    "beta {beta} t {t} component {i}: {gap} > {}",
                    bound * start
                );
            }
        }
    }
}

#[test]
fn beta_extremes() {
    let p = ProbVector::new(vec![0.25, 0.75]).unwrap();
    let frozen = ema_update(
        &EmaAggregate::uniform(2, 1.0).unwrap(),
        std::slice::from_ref(&p),
    )
    .unwrap();
    assert_eq!(frozen.q_hat().as_slice(), &[0.5, 0.5]);
    let copied = ema_update(
        &EmaAggregate::uniform(2, 0.0).unwrap(),
        std::slice::from_ref(&p),
    )
    .unwrap();
    assert_eq!(copied.q_hat().as_slice(), p.as_slice());
    assert_eq!(copied.seen_count(), 1);
}

proptest! {
    #[test]
    fn update_is_a_convex_combination(seed in any::<u64>(), beta in 0.0f64..=1.0, dim in 2usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agg = EmaAggregate::from_q(random_simplex(&mut rng, dim), beta).unwrap();
        let batch: Vec<ProbVector> = (0..3).map(|_| random_simplex(&mut rng, dim)).collect();
        let next = ema_update(&agg, &batch).unwrap();
        for i in 0..dim {
            let mean = batch.iter().map(|b| b.as_slice()[i]).sum::<f64>() / 3.0;
            let (lo, hi) = if mean < agg.q_hat().as_slice()[i] {
                (mean, agg.q_hat().as_slice()[i])
            } else {
                (agg.q_hat().as_slice()[i], mean)
            };
            let v = next.q_hat().as_slice()[i];
            prop_assert!(v >= lo - 1e-15 && v <= hi + 1e-15);
        }
    }
}
