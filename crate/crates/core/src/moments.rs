//! Empirical and exact first and second moments.
//!
//! The empirical estimators work on stored ensembles or, through
//! [`MomentAccumulator`], directly on the step-major simulator so that large
//! ensembles never need to be kept in memory. The exact moments solve
//!
//! ```text
//! dE/dt = Psi(t) E + B u(t),
//! dC/dt = Psi(t) C + C Psi(t)^T + M K M^T,
//! ```
//!
//! with classical fourth-order Runge–Kutta steps.

use std::ops::{Mul, Sub};

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, Error, Result};
use crate::linalg::{self, AffineOperator};
use crate::model::{BilinearSdeSystem, ControlSignal, TimeGrid};
use crate::sim::{SnapshotEnsemble, StepObserver};
use crate::subspace::ReductionBasis;

/// Default Runge–Kutta substeps per grid interval.
pub const DEFAULT_SUBSTEPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentSource {
    Empirical { paths: usize },
    ExactOde,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentTrajectory {
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
    pub grid: TimeGrid,
    pub source: MomentSource,
}

impl MomentTrajectory {
    pub fn state_dim(&self) -> usize {
        self.means.first().map_or(0, |m| m.len())
    }

    /// `V E_i` and `V C_i V^T`.
    pub fn lift(&self, v: &DMatrix<f64>) -> MomentTrajectory {
        MomentTrajectory {
            means: self.means.iter().map(|m| v * m).collect(),
            covariances: self
                .covariances
                .iter()
                .map(|c| linalg::symmetrize(&(v * c * v.transpose())))
                .collect(),
            grid: self.grid,
            source: self.source,
        }
    }

    /// `V^T E_i` and `V^T C_i V`.
    pub fn project(&self, v: &DMatrix<f64>) -> MomentTrajectory {
        let vt = v.transpose();
        MomentTrajectory {
            means: self.means.iter().map(|m| &vt * m).collect(),
            covariances: self
                .covariances
                .iter()
                .map(|c| linalg::symmetrize(&(&vt * c * v)))
                .collect(),
            grid: self.grid,
            source: self.source,
        }
    }

    /// Frobenius norm of the mean snapshot matrix `[E_0, ..., E_s]`.
    pub fn mean_matrix_norm(&self) -> f64 {
        self.means.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt()
    }

    /// Frobenius norm of the covariance snapshot matrix `[C_0, ..., C_s]`.
    pub fn covariance_matrix_norm(&self) -> f64 {
        self.covariances.iter().map(|c| c.norm_squared()).sum::<f64>().sqrt()
    }
}

/// Signal-to-noise ratio `||E_i||_2 / ||C_i||_F`; `None` when `C_i = 0`.
pub fn snr(mean: &DVector<f64>, cov: &DMatrix<f64>) -> Option<f64> {
    let c = cov.norm();
    if c > 0.0 {
        Some(mean.norm() / c)
    } else {
        None
    }
}

pub fn snr_sequence(m: &MomentTrajectory) -> Vec<Option<f64>> {
    m.means.iter().zip(&m.covariances).map(|(e, c)| snr(e, c)).collect()
}

/// Running sums over the observed grid indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotStats {
    /// `sum_i sum_j x_ij x_ij^T`, the Gram matrix of the state snapshot matrix.
    pub state_gram: Option<DMatrix<f64>>,
    /// `sum_i E_i E_i^T`.
    pub mean_gram: Option<DMatrix<f64>>,
    /// `sum_i C_i C_i^T`.
    pub covariance_gram: Option<DMatrix<f64>>,
    pub mean_norm_sq: f64,
    pub covariance_norm_sq: f64,
    pub snr: Vec<Option<f64>>,
    pub state_columns: usize,
}

impl SnapshotStats {
    pub fn mean_matrix_norm(&self) -> f64 {
        self.mean_norm_sq.sqrt()
    }

    pub fn covariance_matrix_norm(&self) -> f64 {
        self.covariance_norm_sq.sqrt()
    }
}

/// Streaming empirical moments of (optionally projected) ensemble states.
///
/// Sums over paths are taken in path-index order, so the result does not
/// depend on the number of worker threads used by the simulator.
pub struct MomentAccumulator {
    vt: Option<DMatrix<f64>>,
    prefix: Option<usize>,
    store: bool,
    state_gram: bool,
    moment_grams: bool,
    paths: usize,
    means: Vec<DVector<f64>>,
    covariances: Vec<DMatrix<f64>>,
    stats: SnapshotStats,
    scratch: DMatrix<f64>,
}

impl MomentAccumulator {
    pub fn new() -> Self {
        MomentAccumulator {
            vt: None,
            prefix: None,
            store: true,
            state_gram: false,
            moment_grams: false,
            paths: 0,
            means: Vec::new(),
            covariances: Vec::new(),
            stats: SnapshotStats {
                state_gram: None,
                mean_gram: None,
                covariance_gram: None,
                mean_norm_sq: 0.0,
                covariance_norm_sq: 0.0,
                snr: Vec::new(),
                state_columns: 0,
            },
            scratch: DMatrix::zeros(0, 0),
        }
    }

    /// Estimate moments of `V^T x` instead of `x`.
    pub fn projected(mut self, v: &DMatrix<f64>) -> Self {
        self.vt = Some(v.transpose());
        self
    }

    /// Use only the first `paths` columns of every state matrix.
    pub fn prefix(mut self, paths: usize) -> Self {
        self.prefix = Some(paths);
        self
    }

    /// Keep per-step means and covariances (on by default).
    pub fn storing(mut self, store: bool) -> Self {
        self.store = store;
        self
    }

    /// Accumulate the Gram matrix of the state snapshot matrix.
    pub fn with_state_gram(mut self, on: bool) -> Self {
        self.state_gram = on;
        self
    }

    /// Accumulate the Gram matrices of the mean and covariance snapshot matrices.
    pub fn with_moment_grams(mut self, on: bool) -> Self {
        self.moment_grams = on;
        self
    }

    pub fn stats(&self) -> &SnapshotStats {
        &self.stats
    }

    pub fn into_parts(self, grid: TimeGrid) -> (Option<MomentTrajectory>, SnapshotStats) {
        let traj = if self.store {
            Some(MomentTrajectory {
                means: self.means,
                covariances: self.covariances,
                grid,
                source: MomentSource::Empirical { paths: self.paths },
            })
        } else {
            None
        };
        (traj, self.stats)
    }

    pub fn into_trajectory(self, grid: TimeGrid) -> Result<MomentTrajectory> {
        if !self.store {
            return Err(Error::InvalidArgument("moments were not stored".into()));
        }
        Ok(self.into_parts(grid).0.expect("stored"))
    }
}

impl Default for MomentAccumulator {
    fn default() -> Self {
        MomentAccumulator::new()
    }
}

fn add_into(acc: &mut Option<DMatrix<f64>>, m: DMatrix<f64>) {
    match acc {
        Some(a) => *a += m,
        None => *acc = Some(m),
    }
}

impl StepObserver for MomentAccumulator {
    fn observe(&mut self, _index: usize, states: &DMatrix<f64>) -> Result<()> {
        let l = self.prefix.unwrap_or(states.ncols());
        if l < 2 || l > states.ncols() {
            return Err(Error::TooShort {
                context: "empirical covariance",
                required: 2.max(l),
                got: states.ncols(),
            });
        }
        self.paths = l;
        let owned;
        let y: &DMatrix<f64> = match (&self.vt, l == states.ncols()) {
            (Some(vt), _) => {
                if self.scratch.shape() != (vt.nrows(), l) {
                    self.scratch = DMatrix::zeros(vt.nrows(), l);
                }
                self.scratch.gemm(1.0, vt, &states.columns(0, l), 0.0);
                &self.scratch
            }
            (None, true) => states,
            (None, false) => {
                owned = states.columns(0, l).into_owned();
                &owned
            }
        };
        let (mean, cov) = mean_and_covariance(y);
        self.stats.mean_norm_sq += mean.norm_squared();
        self.stats.covariance_norm_sq += cov.norm_squared();
        self.stats.snr.push(snr(&mean, &cov));
        self.stats.state_columns += l;
        if self.state_gram || self.moment_grams {
            let mm = &mean * mean.transpose();
            if self.state_gram {
                // X X^T = (L - 1) C + L m m^T
                let state = &cov * (l as f64 - 1.0) + &mm * l as f64;
                add_into(&mut self.stats.state_gram, state);
            }
            if self.moment_grams {
                add_into(&mut self.stats.mean_gram, mm);
                add_into(&mut self.stats.covariance_gram, linalg::gram(1.0, &cov));
            }
        }
        if self.store {
            self.means.push(mean);
            self.covariances.push(cov);
        }
        Ok(())
    }
}

/// Sample mean and unbiased sample covariance of the columns of `y`.
pub fn mean_and_covariance(y: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let (r, l) = y.shape();
    let mut mean = DVector::zeros(r);
    for col in y.column_iter() {
        mean += col;
    }
    mean /= l as f64;
    if l < 2 {
        return (mean, DMatrix::zeros(r, r));
    }
    let mut centered = y.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let cov = linalg::gram(1.0 / (l as f64 - 1.0), &centered);
    (mean, cov)
}

fn check_basis(ens: &SnapshotEnsemble, basis: Option<&ReductionBasis>) -> Result<()> {
    if let Some(b) = basis {
        if b.basis.nrows() != ens.state_dim() {
            return Err(dim_err("moment projection", ens.state_dim(), b.basis.nrows()));
        }
    }
    Ok(())
}

fn project_states(ens: &SnapshotEnsemble, i: usize, basis: Option<&ReductionBasis>) -> DMatrix<f64> {
    let x = ens.states_at(i);
    match basis {
        Some(b) => b.basis.transpose() * x,
        None => x,
    }
}

/// `E_i = (1/L) sum_j V^T x(t_i, w_j)` with `V = I` when no basis is given.
pub fn empirical_mean(ens: &SnapshotEnsemble, basis: Option<&ReductionBasis>) -> Result<Vec<DVector<f64>>> {
    check_basis(ens, basis)?;
    if ens.is_empty() {
        return Err(Error::TooShort {
            context: "empirical mean",
            required: 1,
            got: 0,
        });
    }
    Ok((0..ens.grid.len())
        .map(|i| mean_and_covariance(&project_states(ens, i, basis)).0)
        .collect())
}

/// Unbiased covariance estimates (divisor `L - 1`) centered at [`empirical_mean`].
pub fn empirical_covariance(ens: &SnapshotEnsemble, basis: Option<&ReductionBasis>) -> Result<Vec<DMatrix<f64>>> {
    Ok(empirical_moments(ens, basis)?.covariances)
}

pub fn empirical_moments(ens: &SnapshotEnsemble, basis: Option<&ReductionBasis>) -> Result<MomentTrajectory> {
    check_basis(ens, basis)?;
    if ens.len() < 2 {
        return Err(Error::TooShort {
            context: "empirical covariance",
            required: 2,
            got: ens.len(),
        });
    }
    let mut means = Vec::with_capacity(ens.grid.len());
    let mut covs = Vec::with_capacity(ens.grid.len());
    for i in 0..ens.grid.len() {
        let (m, c) = mean_and_covariance(&project_states(ens, i, basis));
        means.push(m);
        covs.push(c);
    }
    Ok(MomentTrajectory {
        means,
        covariances: covs,
        grid: ens.grid,
        source: MomentSource::Empirical { paths: ens.len() },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdScheme {
    /// Central differences inside, first-order one-sided at both ends.
    CentralOneSidedEnds,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeTrajectory<T> {
    pub values: Vec<T>,
    pub scheme: FdScheme,
}

/// Second-order central differences at interior indices and first-order
/// one-sided differences at `0` and `s`.
pub fn finite_difference_derivative<T>(traj: &[T], h: f64) -> Result<DerivativeTrajectory<T>>
where
    for<'a> &'a T: Sub<&'a T, Output = T>,
    T: Mul<f64, Output = T>,
{
    let len = traj.len();
    if len < 3 {
        return Err(Error::TooShort {
            context: "finite difference derivative",
            required: 3,
            got: len,
        });
    }
    let mut values = Vec::with_capacity(len);
    values.push((&traj[1] - &traj[0]) * (1.0 / h));
    for i in 1..len - 1 {
        values.push((&traj[i + 1] - &traj[i - 1]) * (0.5 / h));
    }
    values.push((&traj[len - 1] - &traj[len - 2]) * (1.0 / h));
    Ok(DerivativeTrajectory {
        values,
        scheme: FdScheme::CentralOneSidedEnds,
    })
}

fn rk4_substep<F>(f: &F, t: f64, h: f64, x: &DMatrix<f64>) -> DMatrix<f64>
where
    F: Fn(f64, &DMatrix<f64>) -> DMatrix<f64>,
{
    let k1 = f(t, x);
    let k2 = f(t + 0.5 * h, &(x + &k1 * (0.5 * h)));
    let k3 = f(t + 0.5 * h, &(x + &k2 * (0.5 * h)));
    let k4 = f(t + h, &(x + &k3 * h));
    x + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0)
}

fn integrate_rk4<F>(
    f: F,
    x0: DMatrix<f64>,
    grid: &TimeGrid,
    substeps: usize,
    symmetric: bool,
    context: &'static str,
) -> Result<Vec<DMatrix<f64>>>
where
    F: Fn(f64, &DMatrix<f64>) -> DMatrix<f64>,
{
    if substeps == 0 {
        return Err(Error::InvalidArgument("substeps must be at least 1".into()));
    }
    let dt = grid.step_size / substeps as f64;
    let mut out = Vec::with_capacity(grid.len());
    let mut x = x0;
    out.push(x.clone());
    for i in 0..grid.steps {
        let t0 = grid.time(i);
        for k in 0..substeps {
            x = rk4_substep(&f, t0 + k as f64 * dt, dt, &x);
        }
        if symmetric {
            x = linalg::symmetrize(&x);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteMoment { context, index: i + 1 });
        }
        out.push(x.clone());
    }
    Ok(out)
}

/// Exact mean trajectory at the grid times.
pub fn integrate_expectation_ode(
    sys: &BilinearSdeSystem,
    control: &ControlSignal,
    grid: &TimeGrid,
    substeps: usize,
) -> Result<Vec<DVector<f64>>> {
    if control.dim() != sys.input_dim {
        return Err(dim_err("control", sys.input_dim, control.dim()));
    }
    let op = AffineOperator::new(&sys.drift_linear, &sys.drift_bilinear);
    let b = &sys.drift_input;
    let rhs = |t: f64, e: &DMatrix<f64>| {
        let u = control.eval(t);
        let mut out = op.apply(&u, e);
        out.gemm(1.0, b, &DMatrix::from_column_slice(u.len(), 1, u.as_slice()), 1.0);
        out
    };
    let e0 = DMatrix::from_column_slice(sys.state_dim, 1, sys.initial_mean.as_slice());
    let traj = integrate_rk4(rhs, e0, grid, substeps, false, "expectation ODE")?;
    Ok(traj
        .into_iter()
        .map(|m| DVector::from_column_slice(m.as_slice()))
        .collect())
}

/// Exact covariance trajectory at the grid times, symmetrized after every interval.
pub fn integrate_covariance_ode(
    sys: &BilinearSdeSystem,
    control: &ControlSignal,
    grid: &TimeGrid,
    substeps: usize,
) -> Result<Vec<DMatrix<f64>>> {
    if control.dim() != sys.input_dim {
        return Err(dim_err("control", sys.input_dim, control.dim()));
    }
    let op = AffineOperator::new(&sys.drift_linear, &sys.drift_bilinear);
    let h = sys.noise_covariance_rate();
    let rhs = |t: f64, c: &DMatrix<f64>| {
        let u = control.eval(t);
        let p = op.apply(&u, c);
        let mut out = &p + p.transpose();
        out += &h;
        out
    };
    integrate_rk4(
        rhs,
        sys.initial_covariance.clone(),
        grid,
        substeps,
        true,
        "covariance ODE",
    )
}

pub fn integrate_moments(
    sys: &BilinearSdeSystem,
    control: &ControlSignal,
    grid: &TimeGrid,
    substeps: usize,
) -> Result<MomentTrajectory> {
    Ok(MomentTrajectory {
        means: integrate_expectation_ode(sys, control, grid, substeps)?,
        covariances: integrate_covariance_ode(sys, control, grid, substeps)?,
        grid: *grid,
        source: MomentSource::ExactOde,
    })
}

/// `E ||X||^2` and `E (1/n) sum_i X_i^3 exp(X_i)` for `X ~ N(mean, cov)`.
///
/// With `m = mu + s^2`, tilting by `exp(x)` gives
/// `E[X^3 e^X] = exp(mu + s^2 / 2) (m^3 + 3 m s^2)` per component.
pub fn gaussian_functional_expectations(mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<(f64, f64)> {
    let n = mean.len();
    if cov.shape() != (n, n) {
        return Err(dim_err(
            "gaussian functionals",
            format!("{n}x{n}"),
            format!("{}x{}", cov.nrows(), cov.ncols()),
        ));
    }
    let phi1 = cov.trace() + mean.norm_squared();
    if n == 0 {
        return Ok((phi1, 0.0));
    }
    let mut phi2 = 0.0;
    for i in 0..n {
        let mu = mean[i];
        let s2 = cov[(i, i)];
        if s2 < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "negative variance {s2:.3e} at component {i}"
            )));
        }
        let m = mu + s2;
        phi2 += (mu + 0.5 * s2).exp() * (m * m * m + 3.0 * m * s2);
    }
    Ok((phi1, phi2 / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_quadratic_is_exact_at_interior() {
        let h = 0.1;
        let f: Vec<DVector<f64>> = (0..=10)
            .map(|i| DVector::from_element(1, (i as f64 * h).powi(2)))
            .collect();
        let d = finite_difference_derivative(&f, h).unwrap();
        assert!((d.values[5][0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fd_linear_all_ones() {
        let h = 0.01;
        let f: Vec<DMatrix<f64>> = (0..7).map(|i| DMatrix::from_element(2, 2, i as f64 * h)).collect();
        let d = finite_difference_derivative(&f, h).unwrap();
        for v in &d.values {
            assert!(v.iter().all(|x| (x - 1.0).abs() < 1e-12));
        }
        assert!(finite_difference_derivative(&f[..2], h).is_err());
    }

    #[test]
    fn two_point_moments() {
        let y = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 0.0, 2.0]);
        let (m, c) = mean_and_covariance(&y);
        assert_eq!(m, DVector::from_vec(vec![2.0, 1.0]));
        assert_eq!(c, DMatrix::from_row_slice(2, 2, &[2.0, 2.0, 2.0, 2.0]));
        let y = DMatrix::from_row_slice(1, 2, &[0.0, 2.0]);
        assert_eq!(mean_and_covariance(&y).1[(0, 0)], 2.0);
    }

    #[test]
    fn functionals_trivial_cases() {
        let (p1, p2) = gaussian_functional_expectations(&DVector::zeros(3), &DMatrix::zeros(3, 3)).unwrap();
        assert_eq!((p1, p2), (0.0, 0.0));
        let (p1, _) = gaussian_functional_expectations(&DVector::zeros(4), &DMatrix::identity(4, 4)).unwrap();
        assert_eq!(p1, 4.0);
        let bad = DMatrix::from_element(1, 1, -1.0);
        assert!(gaussian_functional_expectations(&DVector::zeros(1), &bad).is_err());
    }
}
