use ppo_cma::algorithms::{clip_negative_advantages, mirror_kernel, mirror_negative_advantages, ProcessedBatch};
use ppo_cma::cma::CmaState;
use ppo_cma::critic::gae;
use ppo_cma::envs::EpisodeEnd;
use ppo_cma::nn::Matrix;
use proptest::collection::vec;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn end_strategy() -> impl Strategy<Value = EpisodeEnd> {
    prop_oneof![Just(EpisodeEnd::Terminal), Just(EpisodeEnd::Timeout), Just(EpisodeEnd::None)]
}

fn batch(rows: &[(f64, f64, f64, f64)]) -> ProcessedBatch {
    let n = rows.len();
    let col = |f: fn(&(f64, f64, f64, f64)) -> f64| Matrix::from_vec(n, 1, rows.iter().map(f).collect()).unwrap();
    ProcessedBatch::new(
        Matrix::zeros(n, 1),
        col(|r| r.0),
        rows.iter().map(|r| r.3).collect(),
        col(|r| r.1),
        col(|r| r.2),
        vec![0.0; n],
    )
    .unwrap()
}

proptest! {
    #[test]
    fn gae_equals_discounted_sum_of_residuals(
        steps in vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 1..12),
        last in end_strategy(),
        gamma in 0.0f64..=1.0,
        lambda in 0.0f64..=1.0,
    ) {
        let n = steps.len();
        let r: Vec<f64> = steps.iter().map(|s| s.0).collect();
        let v: Vec<f64> = steps.iter().map(|s| s.1).collect();
        let next: Vec<f64> = steps.iter().map(|s| s.2).collect();
        let mut ends = vec![EpisodeEnd::None; n];
        ends[n - 1] = last;
        let adv = gae(&r, &v, &next, &ends, gamma, lambda).unwrap();
        let delta: Vec<f64> = (0..n)
            .map(|t| {
                let boot = if ends[t] == EpisodeEnd::Terminal { 0.0 } else { next[t] };
                r[t] + gamma * boot - v[t]
            })
            .collect();
        for t in 0..n {
            let explicit: f64 = (t..n).map(|k| (gamma * lambda).powi((k - t) as i32) * delta[k]).sum();
            prop_assert!((adv[t] - explicit).abs() < 1e-10, "t {}: {} vs {}", t, adv[t], explicit);
        }
    }

    #[test]
    fn mirrored_weights_are_nonnegative_and_bounded(
        rows in vec((-3.0f64..3.0, -1.0f64..1.0, 0.01f64..2.0, -4.0f64..4.0), 1..40),
    ) {
        let b = batch(&rows);
        let out = mirror_negative_advantages(&b).unwrap();
        for (i, &(a, mu, c, adv)) in rows.iter().enumerate() {
            let w = out.weights[i];
            prop_assert!(w >= 0.0);
            prop_assert!(w <= adv.abs());
            if adv < 0.0 {
                prop_assert!((out.actions.row(i)[0] - (2.0 * mu - a)).abs() < 1e-12);
                prop_assert_eq!(w, -adv * mirror_kernel(&[a], &[mu], &[c]));
            } else {
                prop_assert_eq!(out.actions.row(i)[0], a);
                prop_assert_eq!(w, adv);
            }
        }
        prop_assert!(out.is_nonnegative());
    }

    #[test]
    fn clipping_keeps_actions_and_zeroes_negatives(
        rows in vec((-3.0f64..3.0, -1.0f64..1.0, 0.01f64..2.0, -4.0f64..4.0), 1..40),
    ) {
        let out = clip_negative_advantages(&batch(&rows));
        for (i, r) in rows.iter().enumerate() {
            prop_assert_eq!(out.weights[i], r.3.max(0.0));
            prop_assert_eq!(out.actions.row(i)[0], r.0);
        }
    }

    #[test]
    fn cma_covariance_stays_positive_definite(seed in 0u64..1000, tilt in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = CmaState::isotropic(vec![1.0, -2.0, 0.5], 0.5, 8).unwrap();
        for _ in 0..30 {
            state.iterate(|x| -(x[0] - tilt).powi(2) - 100.0 * x[1] * x[1] - (x[2] + x[0]).abs(), &mut rng).unwrap();
            prop_assert!(state.cov == state.cov.transpose());
            prop_assert!(state.min_eigenvalue() > 0.0);
        }
    }
}
