//! Property tests for the numerical primitives and the trace format.

use proptest::prelude::*;

use idn::infida::{bregman_project, depround, mirror_step};
use idn::workload::{Trace, TraceSlot};

proptest! {
    /// The projection always lands on the weighted capped simplex.
    #[test]
    fn projection_output_is_feasible(
        dim in 1usize..8,
        seed_h in proptest::collection::vec(1e-6..3.0f64, 8),
        seed_s in proptest::collection::vec(0.2..2.0f64, 8),
        frac in 0.05..1.2f64,
    ) {
        let h = &seed_h[..dim];
        let s = &seed_s[..dim];
        let total: f64 = s.iter().sum();
        let budget = total * frac;
        let y = bregman_project(h, s, budget, &vec![false; dim]).unwrap();
        let target = budget.min(total);
        let mass: f64 = y.iter().zip(s).map(|(a, b)| a * b).sum();
        prop_assert!((mass - target).abs() < 1e-9 * target.max(1.0));
        for &v in &y {
            prop_assert!(v > 0.0 && v <= 1.0 + 1e-12);
        }
    }

    /// DepRound returns integral vectors whose weighted mass stays within
    /// one model size of the input mass.
    #[test]
    fn depround_mass_preservation(
        dim in 1usize..8,
        seed_y in proptest::collection::vec(0.0..=1.0f64, 8),
        seed_s in proptest::collection::vec(0.2..2.0f64, 8),
        rng_seed in any::<u64>(),
    ) {
        use rand::SeedableRng;
        let y = &seed_y[..dim];
        let s = &seed_s[..dim];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(rng_seed);
        let x = depround(y, s, &mut rng);
        prop_assert!(x.iter().all(|&v| v == 0.0 || v == 1.0));
        let mass_y: f64 = y.iter().zip(s).map(|(a, b)| a * b).sum();
        let mass_x: f64 = x.iter().zip(s).map(|(a, b)| a * b).sum();
        let s_max = s.iter().cloned().fold(0.0, f64::max);
        prop_assert!((mass_x - mass_y).abs() <= s_max + 1e-6);
    }

    /// The dual-space step keeps free coordinates strictly positive.
    #[test]
    fn mirror_step_stays_positive(
        dim in 1usize..8,
        seed_y in proptest::collection::vec(1e-12..1.0f64, 8),
        seed_g in proptest::collection::vec(-1e3..1e3f64, 8),
        eta in 0.0..10.0f64,
    ) {
        let y = &seed_y[..dim];
        let g = &seed_g[..dim];
        let s = vec![1.0; dim];
        let h = mirror_step(y, g, eta, &s, &vec![false; dim], 1e-12);
        for &v in &h {
            prop_assert!(v >= 1e-12 && v.is_finite());
        }
    }

    /// Traces survive a save/load round trip bit-exactly.
    #[test]
    fn trace_round_trip(
        slots in proptest::collection::vec(
            (
                proptest::collection::vec((0usize..10, 0usize..10, 0u64..1000), 0..5),
                proptest::collection::vec(
                    (0usize..10, 0usize..10, 0usize..6, 0usize..10, 0u64..100),
                    0..3,
                ),
            ),
            0..6,
        )
    ) {
        let trace = Trace {
            slots: slots
                .into_iter()
                .map(|(requests, capacities)| TraceSlot { requests, capacities })
                .collect(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.trace");
        trace.save(&path).unwrap();
        prop_assert_eq!(Trace::load(&path).unwrap(), trace);
    }
}

/// A quick sanity anchor outside proptest: projecting a feasible point is
/// the identity.
#[test]
fn projection_idempotent_on_feasible_points() {
    let s = [1.0, 2.0, 0.5];
    let y = [0.4, 0.6, 0.8];
    let budget: f64 = y.iter().zip(&s).map(|(a, b)| a * b).sum();
    let projected = bregman_project(&y, &s, budget, &[false; 3]).unwrap();
    for (a, b) in projected.iter().zip(&y) {
        assert!((a - b).abs() < 1e-9);
    }
}
