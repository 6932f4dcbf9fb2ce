mod common;

use common::five_dim_system;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use sde_opinf::model::project_onto;
use sde_opinf::subspace::{BasisSource, ReductionBasis};
use sde_opinf::{galerkin_project, BilinearSdeSystem, ControlSignal};

fn random_system(seed: &[f64]) -> BilinearSdeSystem {
    let at = |k: usize| seed[k % seed.len()];
    let a = DMatrix::from_fn(4, 4, |i, j| at(i * 4 + j) - if i == j { 2.0 } else { 0.0 });
    let b = DMatrix::from_fn(4, 2, |i, j| at(16 + i * 2 + j));
    let n = (0..2)
        .map(|k| DMatrix::from_fn(4, 4, |i, j| at(24 + k * 16 + i * 4 + j) * 0.1))
        .collect();
    let m = DMatrix::from_fn(4, 3, |i, j| at(56 + i * 3 + j));
    let g = DMatrix::from_fn(3, 3, |i, j| at(68 + i * 3 + j));
    BilinearSdeSystem::new(a, b, n, m, &g * g.transpose()).with_initial_mean(DVector::from_fn(4, |i, _| at(77 + i)))
}

fn orthonormal(seed: &[f64], r: usize) -> DMatrix<f64> {
    DMatrix::from_fn(4, r, |i, j| {
        seed[(i * r + j) % seed.len()] + if i == j { 3.0 } else { 0.0 }
    })
    .qr()
    .q()
}

proptest! {
    #[test]
    fn identity_basis_is_identity_map(seed in prop::collection::vec(-1.0f64..1.0, 81)) {
        let sys = random_system(&seed);
        let p = galerkin_project(&sys, &ReductionBasis::from_matrix(DMatrix::identity(4, 4), BasisSource::Given)).unwrap();
        prop_assert_eq!(p, sys);
    }

    #[test]
    fn reprojecting_a_reduced_system_is_idempotent(seed in prop::collection::vec(-1.0f64..1.0, 81), r in 1usize..4) {
        let sys = random_system(&seed);
        let rom = project_onto(&sys, &orthonormal(&seed, r)).unwrap();
        let again = project_onto(&rom, &DMatrix::identity(r, r)).unwrap();
        prop_assert_eq!(again, rom.clone());
        prop_assert_eq!(&rom.noise_correlation, &sys.noise_correlation);
    }

    #[test]
    fn projected_coefficients_match_triple_products(seed in prop::collection::vec(-1.0f64..1.0, 81), r in 1usize..4) {
        let sys = random_system(&seed);
        let v = orthonormal(&seed, r);
        let rom = project_onto(&sys, &v).unwrap();
        // Entrywise sums v_ki a_kl v_lj.
        for i in 0..r {
            for j in 0..r {
                let mut acc = 0.0;
                for k in 0..4 {
                    for l in 0..4 {
                        acc += v[(k, i)] * sys.drift_linear[(k, l)] * v[(l, j)];
                    }
                }
                prop_assert!((rom.drift_linear[(i, j)] - acc).abs() < 1e-12);
            }
        }
        prop_assert!((&rom.diffusion - v.transpose() * &sys.diffusion).norm() < 1e-12);
        prop_assert!((&rom.initial_mean - v.transpose() * &sys.initial_mean).norm() < 1e-12);
    }

    #[test]
    fn cosine_endpoints(amp in -5.0f64..5.0, q in 0u32..6, horizon in 0.1f64..10.0) {
        let odd = 2.0 * q as f64 + 1.0;
        let u = ControlSignal::cosine(amp, odd, horizon);
        prop_assert_eq!(u.eval(0.0)[0], amp);
        prop_assert!((u.eval(horizon)[0] + amp).abs() <= 1e-12 * (1.0 + amp.abs()));
    }
}

#[test]
fn non_orthonormal_basis_is_rejected() {
    let sys = five_dim_system();
    let v = DMatrix::from_element(5, 2, 1.0);
    assert!(project_onto(&sys, &v).is_err());
}

#[test]
fn drift_matrix_adds_bilinear_terms() {
    let sys = five_dim_system();
    let u = DVector::from_element(1, 0.7);
    let psi = sys.drift_matrix(&u);
    assert!((psi - (&sys.drift_linear + &sys.drift_bilinear[0] * 0.7)).norm() < 1e-15);
}
