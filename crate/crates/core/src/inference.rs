//! Operator inference for bilinear SDEs.
//!
//! The drift `[A | B | N_1 .. N_m]` is fitted to finite-difference
//! derivatives of reduced mean trajectories; the diffusion is recovered from
//! the residual of the Lyapunov equation evaluated on reduced covariance
//! trajectories and factored as `M M^T` with `K = I`.

use nalgebra::{DMatrix, DVector, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::linalg;
use crate::model::{BilinearSdeSystem, ControlSignal, TimeGrid};
use crate::moments::{self, MomentTrajectory};
use crate::sim::SnapshotEnsemble;
use crate::subspace::ReductionBasis;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    /// Penalty on `||A||_F^2 + ||B||_F^2`.
    pub gamma_linear: f64,
    /// Penalty on `||N||_F^2`.
    pub gamma_bilinear: f64,
    /// Eigenvalues of the symmetrized diffusion estimate at or below this
    /// fraction of the largest one are discarded.
    pub truncation_fraction: f64,
    /// Leave the first and last grid index out of the regression.
    pub drop_endpoints: bool,
    /// Relative singular-value cutoff of the least-squares solve.
    pub rank_tolerance: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            gamma_linear: 0.0,
            gamma_bilinear: 0.0,
            truncation_fraction: 1e-3,
            drop_endpoints: true,
            rank_tolerance: 1e-12,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.gamma_linear) || !ok(self.gamma_bilinear) {
            return Err(Error::InvalidArgument("Tikhonov parameters must be nonnegative".into()));
        }
        if !ok(self.truncation_fraction) || !ok(self.rank_tolerance) {
            return Err(Error::InvalidArgument(
                "truncation fraction and rank tolerance must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Grid indices entering the regression.
pub fn regression_indices(len: usize, drop_endpoints: bool) -> Vec<usize> {
    if drop_endpoints {
        (1..len.saturating_sub(1)).collect()
    } else {
        (0..len).collect()
    }
}

/// Regression data `D = [E; U; U (.) E]` and targets `R`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftDataset {
    pub data: DMatrix<f64>,
    pub rhs: DMatrix<f64>,
    pub state_dim: usize,
    pub input_dim: usize,
    pub condition_number: f64,
}

impl DriftDataset {
    pub fn columns(&self) -> usize {
        self.data.ncols()
    }

    /// Column-wise concatenation of datasets from several runs.
    pub fn concat(parts: &[DriftDataset]) -> Result<DriftDataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("no drift datasets to concatenate".into()))?;
        let (r, m) = (first.state_dim, first.input_dim);
        let mut cols = 0;
        for p in parts {
            if (p.state_dim, p.input_dim) != (r, m) {
                return Err(dim_err(
                    "drift dataset concat",
                    format!("r = {r}, m = {m}"),
                    format!("r = {}, m = {}", p.state_dim, p.input_dim),
                ));
            }
            cols += p.columns();
        }
        let mut data = DMatrix::zeros(first.data.nrows(), cols);
        let mut rhs = DMatrix::zeros(r, cols);
        let mut c = 0;
        for p in parts {
            data.columns_mut(c, p.columns()).copy_from(&p.data);
            rhs.columns_mut(c, p.columns()).copy_from(&p.rhs);
            c += p.columns();
        }
        let condition_number = condition_number(&data);
        Ok(DriftDataset {
            data,
            rhs,
            state_dim: r,
            input_dim: m,
            condition_number,
        })
    }
}

/// `u (x) e` with index `k r + j` holding `u_k e_j`.
pub fn kron(u: &DVector<f64>, e: &DVector<f64>) -> DVector<f64> {
    let r = e.len();
    DVector::from_fn(u.len() * r, |i, _| u[i / r] * e[i % r])
}

fn singular_values_of(m: &DMatrix<f64>) -> Vec<f64> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    let svd = if cols > rows {
        let r = m.transpose().qr().r();
        SVD::new(r, false, false)
    } else {
        SVD::new(m.clone(), false, false)
    };
    svd.singular_values.iter().cloned().collect()
}

/// `sigma_max / sigma_min`; infinite for a rank-deficient matrix.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let s = singular_values_of(m);
    let max = s.iter().cloned().fold(0.0, f64::max);
    let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

pub fn assemble_drift_dataset(
    means: &[DVector<f64>],
    control: &ControlSignal,
    grid: &TimeGrid,
    config: &InferenceConfig,
) -> Result<DriftDataset> {
    if means.len() != grid.len() {
        return Err(dim_err("drift dataset means", grid.len(), means.len()));
    }
    let r = means.first().map_or(0, |e| e.len());
    let m = control.dim();
    let deriv = moments::finite_difference_derivative(means, grid.step_size)?;
    let idx = regression_indices(means.len(), config.drop_endpoints);
    let rows = r + m + m * r;
    let mut data = DMatrix::zeros(rows, idx.len());
    let mut rhs = DMatrix::zeros(r, idx.len());
    for (c, &i) in idx.iter().enumerate() {
        let e = &means[i];
        if e.len() != r {
            return Err(dim_err("drift dataset means", r, e.len()));
        }
        let u = control.eval(grid.time(i));
        let ue = kron(&u, e);
        data.view_mut((0, c), (r, 1)).copy_from(e);
        data.view_mut((r, c), (m, 1)).copy_from(&u);
        data.view_mut((r + m, c), (m * r, 1)).copy_from(&ue);
        rhs.set_column(c, &deriv.values[i]);
    }
    let condition_number = condition_number(&data);
    if !condition_number.is_finite() {
        log::debug!(
            "single-run drift data matrix is rank deficient ({} rows, {} columns)",
            rows,
            idx.len()
        );
    }
    Ok(DriftDataset {
        data,
        rhs,
        state_dim: r,
        input_dim: m,
        condition_number,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftFit {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub n: Vec<DMatrix<f64>>,
    /// `||R - O D||_F`.
    pub residual_norm: f64,
    pub rank: usize,
    pub rank_deficient: bool,
    pub condition_number: f64,
}

impl DriftFit {
    /// `[A | B | N_1 .. N_m]`.
    pub fn operator(&self) -> DMatrix<f64> {
        let r = self.a.nrows();
        let m = self.b.ncols();
        let mut o = DMatrix::zeros(r, r + m + m * r);
        o.columns_mut(0, r).copy_from(&self.a);
        o.columns_mut(r, m).copy_from(&self.b);
        for (k, nk) in self.n.iter().enumerate() {
            o.columns_mut(r + m + k * r, r).copy_from(nk);
        }
        o
    }

    pub fn psi(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let mut psi = self.a.clone();
        for (nk, uk) in self.n.iter().zip(u.iter()) {
            psi += nk * *uk;
        }
        psi
    }
}

/// Minimizes `||R^T - D^T O^T||_F^2 + g1 (||A||^2 + ||B||^2) + g2 ||N||^2`
/// through a QR-reduced SVD of the stacked regularized system, returning the
/// minimum-norm solution when that system is rank deficient.
pub fn solve_drift_lsq(ds: &DriftDataset, config: &InferenceConfig) -> Result<DriftFit> {
    config.validate()?;
    let (r, m) = (ds.state_dim, ds.input_dim);
    let p = r + m + m * r;
    if ds.data.nrows() != p || ds.rhs.nrows() != r || ds.rhs.ncols() != ds.data.ncols() {
        return Err(dim_err(
            "drift least squares",
            format!("D {p}xK, R {r}xK"),
            format!(
                "D {}x{}, R {}x{}",
                ds.data.nrows(),
                ds.data.ncols(),
                ds.rhs.nrows(),
                ds.rhs.ncols()
            ),
        ));
    }
    if ds.columns() == 0 {
        return Err(Error::TooShort {
            context: "drift least squares",
            required: 1,
            got: 0,
        });
    }
    let k = ds.columns();
    let reg = config.gamma_linear > 0.0 || config.gamma_bilinear > 0.0;
    let extra = if reg { p } else { 0 };
    let mut lhs = DMatrix::zeros(k + extra, p);
    lhs.rows_mut(0, k).copy_from(&ds.data.transpose());
    let mut rhs = DMatrix::zeros(k + extra, r);
    rhs.rows_mut(0, k).copy_from(&ds.rhs.transpose());
    if reg {
        let g1 = config.gamma_linear.sqrt();
        let g2 = config.gamma_bilinear.sqrt();
        for j in 0..p {
            lhs[(k + j, j)] = if j < r + m { g1 } else { g2 };
        }
    }

    // lhs = Q T with T p x p (or k x p when k < p), then T = U S W^T.
    let (t, qtb) = if lhs.nrows() > p {
        let qr = lhs.qr();
        let q = qr.q();
        let qtb = q.transpose() * &rhs;
        (qr.r(), qtb)
    } else {
        (lhs.clone(), rhs.clone())
    };
    let svd = SVD::new(t, true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = config.rank_tolerance * smax;
    let mut rank = 0;
    let mut coeff = u.transpose() * &qtb;
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s > cutoff && *s > 0.0 {
            rank += 1;
            coeff.row_mut(i).scale_mut(1.0 / s);
        } else {
            coeff.row_mut(i).fill(0.0);
        }
    }
    let ot = vt.transpose() * coeff;
    let o = ot.transpose();
    let rank_deficient = rank < p;
    if rank_deficient {
        log::warn!("drift least squares is rank deficient (rank {rank} of {p}); minimum-norm solution used");
    }
    let residual_norm = (&ds.rhs - &o * &ds.data).norm();
    Ok(DriftFit {
        a: o.columns(0, r).into_owned(),
        b: o.columns(r, m).into_owned(),
        n: (0..m).map(|k| o.columns(r + m + k * r, r).into_owned()).collect(),
        residual_norm,
        rank,
        rank_deficient,
        condition_number: ds.condition_number,
    })
}

/// `S_i = dC_i - (Psi_i C_i + C_i Psi_i^T)` at the given grid indices.
pub fn assemble_cov_residuals(
    covs: &[DMatrix<f64>],
    dcovs: &[DMatrix<f64>],
    drift: &DriftFit,
    control: &ControlSignal,
    grid: &TimeGrid,
    indices: &[usize],
) -> Result<Vec<DMatrix<f64>>> {
    if covs.len() != grid.len() || dcovs.len() != grid.len() {
        return Err(dim_err(
            "covariance residuals",
            grid.len(),
            format!("{} covariances, {} derivatives", covs.len(), dcovs.len()),
        ));
    }
    let r = drift.a.nrows();
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        let c = &covs[i];
        if c.shape() != (r, r) || dcovs[i].shape() != (r, r) {
            return Err(dim_err(
                "covariance residuals",
                format!("{r}x{r}"),
                format!("{}x{}", c.nrows(), c.ncols()),
            ));
        }
        let psi = drift.psi(&control.eval(grid.time(i)));
        let pc = &psi * c;
        out.push(&dcovs[i] - (&pc + pc.transpose()));
    }
    Ok(out)
}

/// Entrywise mean of the residuals, the minimizer of `sum_i ||S_i - H||_F^2`.
pub fn solve_diffusion_lsq(residuals: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let first = residuals.first().ok_or(Error::TooShort {
        context: "diffusion least squares",
        required: 1,
        got: 0,
    })?;
    let mut h = DMatrix::zeros(first.nrows(), first.ncols());
    for s in residuals {
        if s.shape() != first.shape() {
            return Err(dim_err(
                "diffusion least squares",
                format!("{}x{}", first.nrows(), first.ncols()),
                format!("{}x{}", s.nrows(), s.ncols()),
            ));
        }
        h += s;
    }
    Ok(h / residuals.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionFactor {
    /// `r x d_r`, column `j` equal to `sqrt(lambda_j) u_j`.
    pub m: DMatrix<f64>,
    pub noise_dim: usize,
    /// Eigenvalues of the symmetrized estimate, descending.
    pub eigenvalues: Vec<f64>,
    pub truncated: Vec<f64>,
    /// No positive eigenvalue: the reduced model carries no noise.
    pub deterministic: bool,
}

impl DiffusionFactor {
    pub fn correlation(&self) -> DMatrix<f64> {
        DMatrix::identity(self.noise_dim, self.noise_dim)
    }
}

pub fn factorize_diffusion(h: &DMatrix<f64>, truncation_fraction: f64) -> Result<DiffusionFactor> {
    if !h.is_square() {
        return Err(dim_err(
            "diffusion factorization",
            "square matrix",
            format!("{}x{}", h.nrows(), h.ncols()),
        ));
    }
    let r = h.nrows();
    let (vals, vecs) = linalg::sym_eig_desc(&linalg::symmetrize(h));
    let lmax = vals.first().cloned().unwrap_or(0.0);
    if lmax.is_nan() || lmax <= 0.0 {
        log::info!("diffusion estimate has no positive eigenvalue; reduced model is deterministic");
        return Ok(DiffusionFactor {
            m: DMatrix::zeros(r, 0),
            noise_dim: 0,
            truncated: vals.clone(),
            eigenvalues: vals,
            deterministic: true,
        });
    }
    let threshold = truncation_fraction * lmax;
    let kept = vals.iter().take_while(|l| **l > threshold).count();
    let mut m = DMatrix::zeros(r, kept);
    for (j, lam) in vals.iter().take(kept).enumerate() {
        m.set_column(j, &(vecs.column(j) * lam.sqrt()));
    }
    linalg::normalize_column_signs(&mut m);
    Ok(DiffusionFactor {
        m,
        noise_dim: kept,
        truncated: vals[kept..].to_vec(),
        eigenvalues: vals,
        deterministic: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RomDiagnostics {
    pub drift_residual: f64,
    /// `sqrt(sum_i ||S_i - H||_F^2)`.
    pub diffusion_residual: f64,
    pub condition_number: f64,
    pub rank_deficient: bool,
    pub eigenvalues: Vec<f64>,
    pub truncated_eigenvalues: Vec<f64>,
    pub gamma_linear: f64,
    pub gamma_bilinear: f64,
    pub deterministic: bool,
    pub regression_columns: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferredRom {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub n: Vec<DMatrix<f64>>,
    pub m: DMatrix<f64>,
    pub noise_dim: usize,
    pub diagnostics: RomDiagnostics,
}

impl InferredRom {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    /// Reduced system with `K = I` and a zero initial condition.
    pub fn to_system(&self) -> BilinearSdeSystem {
        BilinearSdeSystem::new(
            self.a.clone(),
            self.b.clone(),
            self.n.clone(),
            self.m.clone(),
            DMatrix::identity(self.noise_dim, self.noise_dim),
        )
    }

    /// `M M^T`.
    pub fn noise_covariance_rate(&self) -> DMatrix<f64> {
        linalg::symmetrize(&(&self.m * self.m.transpose()))
    }
}

/// Reduced moments of one training run and the control that produced them.
#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub moments: MomentTrajectory,
    pub control: ControlSignal,
}

/// Steps 3 to 9 of the inference algorithm on already projected moments.
pub fn infer_from_moments(runs: &[TrainingRun], config: &InferenceConfig) -> Result<InferredRom> {
    config.validate()?;
    if runs.is_empty() {
        return Err(Error::InvalidArgument("no training runs".into()));
    }
    let mut parts = Vec::with_capacity(runs.len());
    for run in runs {
        parts.push(assemble_drift_dataset(
            &run.moments.means,
            &run.control,
            &run.moments.grid,
            config,
        )?);
    }
    let ds = DriftDataset::concat(&parts)?;
    let drift = solve_drift_lsq(&ds, config)?;

    let mut residuals = Vec::new();
    for run in runs {
        let grid = run.moments.grid;
        let dcov = moments::finite_difference_derivative(&run.moments.covariances, grid.step_size)?;
        let idx = regression_indices(grid.len(), config.drop_endpoints);
        residuals.extend(assemble_cov_residuals(
            &run.moments.covariances,
            &dcov.values,
            &drift,
            &run.control,
            &grid,
            &idx,
        )?);
    }
    let h = solve_diffusion_lsq(&residuals)?;
    let diffusion_residual = residuals.iter().map(|s| (s - &h).norm_squared()).sum::<f64>().sqrt();
    let factor = factorize_diffusion(&h, config.truncation_fraction)?;
    Ok(InferredRom {
        a: drift.a,
        b: drift.b,
        n: drift.n,
        m: factor.m,
        noise_dim: factor.noise_dim,
        diagnostics: RomDiagnostics {
            drift_residual: drift.residual_norm,
            diffusion_residual,
            condition_number: drift.condition_number,
            rank_deficient: drift.rank_deficient,
            eigenvalues: factor.eigenvalues,
            truncated_eigenvalues: factor.truncated,
            gamma_linear: config.gamma_linear,
            gamma_bilinear: config.gamma_bilinear,
            deterministic: factor.deterministic,
            regression_columns: ds.columns(),
        },
    })
}

/// Projects each ensemble onto `basis`, estimates its moments and runs
/// [`infer_from_moments`].
pub fn infer_rom(
    ensembles: &[SnapshotEnsemble],
    basis: &ReductionBasis,
    controls: &[ControlSignal],
    config: &InferenceConfig,
) -> Result<InferredRom> {
    if ensembles.len() != controls.len() {
        return Err(dim_err("infer_rom controls", ensembles.len(), controls.len()));
    }
    let grid = ensembles.first().map(|e| e.grid);
    let mut runs = Vec::with_capacity(ensembles.len());
    for (e, u) in ensembles.iter().zip(controls) {
        if Some(e.grid) != grid {
            return Err(Error::InvalidArgument(
                "training ensembles must share one time grid".into(),
            ));
        }
        runs.push(TrainingRun {
            moments: moments::empirical_moments(e, Some(basis))?,
            control: u.clone(),
        });
    }
    infer_from_moments(&runs, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kron_ordering() {
        let u = DVector::from_vec(vec![2.0, 3.0]);
        let e = DVector::from_vec(vec![1.0, -1.0, 0.5]);
        let k = kron(&u, &e);
        assert_eq!(k.as_slice(), &[2.0, -2.0, 1.0, 3.0, -3.0, 1.5]);
    }

    #[test]
    fn factorize_diagonal() {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 0.002, -0.001]));
        let f = factorize_diffusion(&h, 1e-3).unwrap();
        assert_eq!(f.noise_dim, 1);
        assert!((f.m[(0, 0)].abs() - 2.0).abs() < 1e-12);
        assert!(f.m[(1, 0)].abs() < 1e-12 && f.m[(2, 0)].abs() < 1e-12);
    }

    #[test]
    fn antisymmetric_part_discarded() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, -0.2, 1.0]);
        let f = factorize_diffusion(&h, 1e-3).unwrap();
        assert_eq!(f.noise_dim, 2);
        assert!((&f.m * f.m.transpose() - DMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn negative_spectrum_is_deterministic() {
        let f = factorize_diffusion(&(-DMatrix::identity(3, 3)), 1e-3).unwrap();
        assert!(f.deterministic);
        assert_eq!(f.m.shape(), (3, 0));
    }

    #[test]
    fn diffusion_mean_cases() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(solve_diffusion_lsq(std::slice::from_ref(&s)).unwrap(), s);
        assert_eq!(solve_diffusion_lsq(&[s.clone(), -s]).unwrap(), DMatrix::zeros(2, 2));
        assert!(solve_diffusion_lsq(&[]).is_err());
    }

    #[test]
    fn stationary_dataset() {
        let grid = TimeGrid::new(10, 0.1).unwrap();
        let means = vec![DVector::from_element(1, 0.7); 11];
        let ds = assemble_drift_dataset(
            &means,
            &ControlSignal::constant(2.0),
            &grid,
            &InferenceConfig::default(),
        )
        .unwrap();
        assert_eq!(ds.columns(), 9);
        for c in 0..ds.columns() {
            assert_eq!(ds.data.column(c).as_slice(), &[0.7, 2.0, 1.4]);
            assert!(ds.rhs[(0, c)].abs() < 1e-12);
        }
    }
}
