mod common;

use common::perturbed_pair;
use proptest::prelude::*;
use sde_opinf::bounds::*;
use sde_opinf::moments::DEFAULT_SUBSTEPS;
use sde_opinf::{ControlSignal, TimeGrid};

fn check(seed: u64, size: f64, variant: BoundVariant) -> GronwallReport {
    let (reference, perturbed) = perturbed_pair(seed, 4, size);
    let grid = TimeGrid::new(100, 1e-2).unwrap();
    gronwall_check(
        &reference,
        &perturbed,
        &ControlSignal::cosine(1.0, 2.0, 1.0),
        &grid,
        DEFAULT_SUBSTEPS,
        variant,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn both_bounds_hold_for_small_perturbations(seed in any::<u64>(), log_size in -4.0f64..-1.0) {
        for variant in [BoundVariant::Stated, BoundVariant::Rigorous] {
            let rep = check(seed, 10f64.powf(log_size), variant);
            prop_assert!(rep.holds(), "{variant:?} violated at index {:?}", rep.first_violation());
        }
    }

    #[test]
    fn rigorous_bound_dominates_the_stated_one(seed in any::<u64>(), log_size in -4.0f64..-1.0) {
        let size = 10f64.powf(log_size);
        let stated = check(seed, size, BoundVariant::Stated);
        let rigorous = check(seed, size, BoundVariant::Rigorous);
        prop_assert_eq!(&stated.exp_bound, &rigorous.exp_bound);
        for (s, r) in stated.cov_bound.iter().zip(&rigorous.cov_bound) {
            prop_assert!(r >= s);
        }
    }
}

#[test]
fn bounds_start_from_the_initial_discrepancy() {
    let rep = check(5, 1e-2, BoundVariant::Stated);
    assert!(rep.exp_error[0] > 0.0);
    assert!(rep.exp_error[0] <= rep.exp_bound[0]);
    assert_eq!(rep.cov_error[0], 0.0);
}

#[test]
fn errors_grow_with_the_perturbation() {
    let small = check(9, 1e-4, BoundVariant::Stated);
    let large = check(9, 1e-1, BoundVariant::Stated);
    let last = small.times.len() - 1;
    assert!(large.exp_error[last] > 100.0 * small.exp_error[last]);
    assert!(large.cov_error[last] > 100.0 * small.cov_error[last]);
}

#[test]
fn mismatched_dimensions_are_rejected() {
    let (a, _) = perturbed_pair(1, 4, 1e-3);
    let (b, _) = perturbed_pair(1, 3, 1e-3);
    let grid = TimeGrid::new(10, 0.1).unwrap();
    assert!(gronwall_check(&a, &b, &ControlSignal::constant(1.0), &grid, 2, BoundVariant::Stated).is_err());
}
