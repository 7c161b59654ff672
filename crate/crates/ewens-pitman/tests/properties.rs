//! Randomized invariants over the admissible parameter space. Each property
//! states something that must hold for every draw, not a statistical
//! tendency, so shrinks are meaningful.

use ewens_pitman::moments::MomentEngine;
use ewens_pitman::numerics::rising_in;
use ewens_pitman::sampler::{run, CheckpointSchedule, SamplerMode};
use ewens_pitman::sibuya;
use ewens_pitman::statistics::{alpha_hat, alpha_interval, EstimateSummary};
use ewens_pitman::{exact, Exact, LogFloat, ModelParams, PartitionState, Scalar};
use num_traits::{One, Zero};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #[test]
    fn rising_factorial_splits_at_any_offset(
        num in -20i64..=20,
        den in 1i64..=9,
        m in 0usize..=10,
        n in 0usize..=10,
    ) {
        let a = exact(num, den);
        let lhs = rising_in(&a, m + n);
        let rhs = rising_in(&a, m)
            * rising_in(&(a.clone() + Exact::from_usize(m)), n);
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn log_backend_tracks_float_arithmetic(a in -50.0f64..50.0, b in -50.0f64..50.0) {
        let la = LogFloat::from_value(a);
        let lb = LogFloat::from_value(b);
        // the log representation carries eps |ln| relative error, so the
        // additive comparisons are scaled by the inputs, not the result
        let cases = [
            (a + b, (la.clone() + lb.clone()).to_f64(), a.abs() + b.abs()),
            (a - b, (la.clone() - lb.clone()).to_f64(), a.abs() + b.abs()),
            (a * b, (la.clone() * lb.clone()).to_f64(), (a * b).abs()),
        ];
        for (want, got, scale) in cases {
            prop_assert!(
                (got - want).abs() <= 1e-12 * scale.max(1e-300),
                "{got} vs {want} at scale {scale}"
            );
        }
        if b != 0.0 {
            let got = (la.clone() / lb).to_f64();
            prop_assert!((got - a / b).abs() <= 1e-12 * (a / b).abs().max(1e-300));
        }
        if a != 0.0 {
            let got = la.powi(-2).to_f64();
            let want = a.powi(-2);
            prop_assert!((got - want).abs() <= 1e-12 * want.abs());
        }
    }

    #[test]
    fn sibuya_mass_backends_agree(a in 1i64..=99, r in 1u64..=30) {
        let exact_p = sibuya::pmf_in(&exact(a, 100), r).to_f64();
        let float_p = sibuya::pmf_in(&(a as f64 / 100.0), r);
        prop_assert!(
            (float_p - exact_p).abs() <= 1e-13 * exact_p.max(1e-300),
            "{float_p} vs {exact_p}"
        );
    }

    #[test]
    fn wald_interval_brackets_the_estimate(
        pairs in proptest::collection::vec((1u64..=40, 1u64..=30), 1..8),
        gamma_pct in 1u32..=50,
    ) {
        let state = PartitionState::from_size_counts(pairs).unwrap();
        let gamma = f64::from(gamma_pct) / 100.0;
        let ci = alpha_interval(&state, gamma).unwrap();
        let est = alpha_hat(&state);
        prop_assert!(ci.low <= est && est <= ci.high);
        prop_assert!((0.0..=1.0).contains(&ci.low) && ci.high <= 1.0);
        prop_assert_eq!(ci.degenerate, est == 0.0 || est == 1.0);
        if !ci.clipped {
            // symmetric about the estimate until the unit interval cuts it
            prop_assert!(((ci.high - est) - (est - ci.low)).abs() < 1e-12);
        }
        let summary = EstimateSummary::from_state(&state, gamma).unwrap();
        prop_assert_eq!(summary.alpha_hat, est);
        prop_assert_eq!(summary.ci_low, ci.low);
        prop_assert_eq!(summary.ci_high, ci.high);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sampler_states_satisfy_partition_invariants(
        alpha_pct in 0u32..100,
        theta_shift in 1u32..=400,
        n_target in 1u64..=300,
        seed in any::<u64>(),
        full in any::<bool>(),
    ) {
        let alpha = f64::from(alpha_pct) / 100.0;
        let theta = -alpha + f64::from(theta_shift) / 100.0;
        let params = ModelParams::new(alpha, theta).unwrap();
        let mode = if full { SamplerMode::Full } else { SamplerMode::CountsOnly };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (record, state) =
            run(&params, n_target, &CheckpointSchedule::geometric(), 3, mode, &mut rng).unwrap();
        prop_assert_eq!(state.n(), n_target);
        prop_assert!(state.k_total() >= 1 && state.k_total() <= n_target);
        state.validate().unwrap();
        prop_assert!((0.0..=1.0).contains(&alpha_hat(&state)));
        // block count never decreases along the trajectory
        for pair in record.checkpoints.windows(2) {
            prop_assert!(pair[0].k_total <= pair[1].k_total);
            prop_assert!(pair[0].n < pair[1].n);
        }
    }

    #[test]
    fn block_count_pmf_sums_to_one_exactly(
        a in 1i64..=7,
        b in 2i64..=8,
        t in -1i64..=12,
        u in 1i64..=6,
        n in 1usize..=9,
    ) {
        prop_assume!(a < b);
        prop_assume!(a * u + t * b > 0);
        let engine = MomentEngine::<Exact>::new(exact(a, b), exact(t, u), n).unwrap();
        let mut total = Exact::zero();
        for k in 1..=n {
            let p = engine.block_count_pmf(n, k).unwrap();
            prop_assert!(p >= Exact::zero(), "negative mass at k={k}");
            total = total + p;
        }
        prop_assert_eq!(total, Exact::one());
    }
}
