//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use sde_opinf::moments::{integrate_moments, DEFAULT_SUBSTEPS};
use sde_opinf::{BilinearSdeSystem, ControlSignal, TimeGrid, TrainingRun};

/// Stable nonnormal five-dimensional bilinear system with two noise channels and `K = I`.
pub fn five_dim_system() -> BilinearSdeSystem {
    let a = DMatrix::from_row_slice(
        5,
        5,
        &[
            -2.0, 0.4, 0.0, 0.1, 0.0, //
            0.3, -1.5, 0.5, 0.0, 0.0, //
            0.0, -0.2, -1.8, 0.3, 0.1, //
            0.1, 0.0, 0.2, -1.2, 0.4, //
            0.0, 0.1, 0.0, -0.3, -2.5,
        ],
    );
    let b = DMatrix::from_column_slice(5, 1, &[1.0, 0.5, -0.3, 0.2, 0.8]);
    let n = DMatrix::from_row_slice(
        5,
        5,
        &[
            -0.2, 0.1, 0.0, 0.0, 0.05, //
            0.0, -0.1, 0.15, 0.0, 0.0, //
            0.1, 0.0, -0.25, 0.05, 0.0, //
            0.0, 0.0, 0.1, -0.15, 0.1, //
            0.05, 0.0, 0.0, 0.1, -0.3,
        ],
    );
    let m = DMatrix::from_row_slice(5, 2, &[0.5, 0.0, 0.2, 0.3, 0.0, 0.4, 0.1, -0.2, 0.3, 0.1]);
    BilinearSdeSystem::new(a, b, vec![n], m, DMatrix::identity(2, 2))
}

/// Training controls and initial conditions for the five-dimensional system:
/// every unit vector under the constant inputs `1` and `-1`.
pub fn five_dim_pairs() -> Vec<(ControlSignal, DVector<f64>)> {
    let mut pairs = Vec::new();
    for j in 0..5 {
        let mut x0 = DVector::zeros(5);
        x0[j] = 1.0;
        for u in [1.0, -1.0] {
            pairs.push((ControlSignal::constant(u), x0.clone()));
        }
    }
    pairs
}

/// Moment-equation training data on `[0, 1]` with step `h`.
pub fn exact_runs(sys: &BilinearSdeSystem, h: f64) -> Vec<TrainingRun> {
    let grid = TimeGrid::over(1.0, (1.0 / h).round() as usize).unwrap();
    five_dim_pairs()
        .into_iter()
        .map(|(control, x0)| {
            let s = sys.clone().with_initial_mean(x0);
            TrainingRun {
                moments: integrate_moments(&s, &control, &grid, DEFAULT_SUBSTEPS).unwrap(),
                control,
            }
        })
        .collect()
}

/// Relative Frobenius error of `[A B N]` against the reference coefficients.
pub fn drift_error(sys: &BilinearSdeSystem, a: &DMatrix<f64>, b: &DMatrix<f64>, n: &[DMatrix<f64>]) -> f64 {
    let mut num = (a - &sys.drift_linear).norm_squared() + (b - &sys.drift_input).norm_squared();
    let mut den = sys.drift_linear.norm_squared() + sys.drift_input.norm_squared();
    for (ni, ref_ni) in n.iter().zip(&sys.drift_bilinear) {
        num += (ni - ref_ni).norm_squared();
        den += ref_ni.norm_squared();
    }
    (num / den).sqrt()
}

pub fn relative_frobenius(x: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    (x - reference).norm() / reference.norm()
}

/// A random stable reduced system of dimension `r` and a copy whose coefficients,
/// initial mean and noise factor are shifted by a joint perturbation of Frobenius norm `size`.
pub fn perturbed_pair(seed: u64, r: usize, size: f64) -> (BilinearSdeSystem, BilinearSdeSystem) {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    let mut gauss = |rows: usize, cols: usize| DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng));
    let a = DMatrix::identity(r, r) * -1.5 + gauss(r, r) * 0.3;
    let reference = BilinearSdeSystem::new(
        a,
        gauss(r, 1),
        vec![gauss(r, r) * 0.2],
        gauss(r, 2) * 0.5,
        DMatrix::identity(2, 2),
    )
    .with_initial_mean(DVector::from_column_slice(gauss(r, 1).as_slice()) * 0.5);
    let shifts = [gauss(r, r), gauss(r, 1), gauss(r, r), gauss(r, 2), gauss(r, 1)];
    let total = shifts.iter().map(|d| d.norm_squared()).sum::<f64>().sqrt();
    let [da, db, dn, dm, de] = shifts.map(|d| d * (size / total));
    let perturbed = BilinearSdeSystem::new(
        &reference.drift_linear + da,
        &reference.drift_input + db,
        vec![&reference.drift_bilinear[0] + dn],
        &reference.diffusion + dm,
        DMatrix::identity(2, 2),
    )
    .with_initial_mean(&reference.initial_mean + DVector::from_column_slice(de.as_slice()));
    (reference, perturbed)
}
