//! Bilinear SDE systems with additive Gaussian noise,
//!
//! ```text
//! dX = [A X + B u(t) + sum_i N_i X u_i(t)] dt + M dW,   Cov(dW) = K dt,
//! ```
//!
//! together with closed-form controls, time grids and intrusive Galerkin
//! projection onto a reduction basis.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::linalg;
use crate::subspace::ReductionBasis;

/// Tolerance used for the symmetric PSD checks on `K` and the initial covariance.
pub const PSD_TOLERANCE: f64 = 1e-10;
/// Frobenius tolerance on `V^T V - I` accepted by [`galerkin_project`].
pub const ORTHONORMALITY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct BilinearSdeSystem {
    pub state_dim: usize,
    pub input_dim: usize,
    pub noise_dim: usize,
    /// `A`, n x n.
    pub drift_linear: DMatrix<f64>,
    /// `B`, n x m.
    pub drift_input: DMatrix<f64>,
    /// `N_1..N_m`, each n x n.
    pub drift_bilinear: Vec<DMatrix<f64>>,
    /// `M`, n x d.
    pub diffusion: DMatrix<f64>,
    /// `K`, d x d.
    pub noise_correlation: DMatrix<f64>,
    pub initial_mean: DVector<f64>,
    /// Zero matrix for a deterministic initial condition.
    pub initial_covariance: DMatrix<f64>,
}

impl BilinearSdeSystem {
    /// Builds a system with deterministic zero initial condition, inferring the
    /// dimensions from the coefficient shapes.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, n: Vec<DMatrix<f64>>, m: DMatrix<f64>, k: DMatrix<f64>) -> Self {
        let state_dim = a.nrows();
        BilinearSdeSystem {
            state_dim,
            input_dim: b.ncols(),
            noise_dim: m.ncols(),
            drift_linear: a,
            drift_input: b,
            drift_bilinear: n,
            diffusion: m,
            noise_correlation: k,
            initial_mean: DVector::zeros(state_dim),
            initial_covariance: DMatrix::zeros(state_dim, state_dim),
        }
    }

    pub fn with_initial_mean(mut self, mean: DVector<f64>) -> Self {
        self.initial_mean = mean;
        self
    }

    pub fn with_initial_covariance(mut self, cov: DMatrix<f64>) -> Self {
        self.initial_covariance = cov;
        self
    }

    pub fn has_deterministic_initial_condition(&self) -> bool {
        self.initial_covariance.iter().all(|v| *v == 0.0)
    }

    /// `Psi(u) = A + sum_i N_i u_i`.
    pub fn drift_matrix(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let mut psi = self.drift_linear.clone();
        for (ni, ui) in self.drift_bilinear.iter().zip(u.iter()) {
            if *ui != 0.0 {
                psi += ni * *ui;
            }
        }
        psi
    }

    /// `H = M K M^T`.
    pub fn noise_covariance_rate(&self) -> DMatrix<f64> {
        let h = &self.diffusion * &self.noise_correlation * self.diffusion.transpose();
        linalg::symmetrize(&h)
    }

    pub fn has_bilinear_terms(&self) -> bool {
        self.drift_bilinear.iter().any(|n| n.iter().any(|v| *v != 0.0))
    }

    pub fn validate(&self) -> ValidationReport {
        validate_system(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Defect {
    StateDimensionMismatch(String),
    InputDimensionMismatch(String),
    NoiseDimensionMismatch(String),
    NoiseCorrelationNotPsd,
    InitialCovarianceNotPsd,
}

impl fmt::Display for Defect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Defect::StateDimensionMismatch(s) => write!(f, "state dimension mismatch: {s}"),
            Defect::InputDimensionMismatch(s) => write!(f, "input dimension mismatch: {s}"),
            Defect::NoiseDimensionMismatch(s) => write!(f, "noise dimension mismatch: {s}"),
            Defect::NoiseCorrelationNotPsd => write!(f, "noise_correlation not PSD"),
            Defect::InitialCovarianceNotPsd => write!(f, "initial_covariance not PSD"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub defects: Vec<Defect>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.defects.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            let msg: Vec<String> = self.defects.iter().map(ToString::to_string).collect();
            Err(Error::InvalidArgument(msg.join("; ")))
        }
    }
}

pub fn validate_system(sys: &BilinearSdeSystem) -> ValidationReport {
    let n = sys.state_dim;
    let m = sys.input_dim;
    let d = sys.noise_dim;
    let mut defects = Vec::new();
    let shape = |mat: &DMatrix<f64>| format!("{}x{}", mat.nrows(), mat.ncols());

    if sys.drift_linear.shape() != (n, n) {
        defects.push(Defect::StateDimensionMismatch(format!(
            "A is {}",
            shape(&sys.drift_linear)
        )));
    }
    if sys.initial_mean.len() != n {
        defects.push(Defect::StateDimensionMismatch(format!(
            "initial_mean has length {}",
            sys.initial_mean.len()
        )));
    }
    if sys.initial_covariance.shape() != (n, n) {
        defects.push(Defect::StateDimensionMismatch(format!(
            "initial_covariance is {}",
            shape(&sys.initial_covariance)
        )));
    }
    if sys.drift_input.shape() != (n, m) {
        defects.push(Defect::InputDimensionMismatch(format!(
            "B is {}, expected {n}x{m}",
            shape(&sys.drift_input)
        )));
    }
    if sys.drift_bilinear.len() != m {
        defects.push(Defect::InputDimensionMismatch(format!(
            "{} bilinear matrices for {m} inputs",
            sys.drift_bilinear.len()
        )));
    }
    for (i, ni) in sys.drift_bilinear.iter().enumerate() {
        if ni.shape() != (n, n) {
            defects.push(Defect::StateDimensionMismatch(format!("N_{} is {}", i + 1, shape(ni))));
        }
    }
    if sys.diffusion.shape() != (n, d) {
        defects.push(Defect::NoiseDimensionMismatch(format!(
            "M is {}, expected {n}x{d}",
            shape(&sys.diffusion)
        )));
    }
    if sys.noise_correlation.shape() != (d, d) {
        defects.push(Defect::NoiseDimensionMismatch(format!(
            "K is {}, expected {d}x{d}",
            shape(&sys.noise_correlation)
        )));
    } else if !linalg::is_psd(&sys.noise_correlation, PSD_TOLERANCE) {
        defects.push(Defect::NoiseCorrelationNotPsd);
    }
    if sys.initial_covariance.shape() == (n, n) && !linalg::is_psd(&sys.initial_covariance, PSD_TOLERANCE) {
        defects.push(Defect::InitialCovarianceNotPsd);
    }
    ValidationReport { defects }
}

/// Deterministic control `u : [0, T] -> R^m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ControlSignal {
    Zero {
        dim: usize,
    },
    Constant {
        value: Vec<f64>,
    },
    /// `amplitude_k * cos(multiplier * pi * t / horizon)` in every component `k`.
    Cosine {
        amplitude: Vec<f64>,
        multiplier: f64,
        horizon: f64,
    },
}

impl ControlSignal {
    pub fn zero(dim: usize) -> Self {
        ControlSignal::Zero { dim }
    }

    pub fn constant(value: f64) -> Self {
        ControlSignal::Constant { value: vec![value] }
    }

    pub fn cosine(amplitude: f64, multiplier: f64, horizon: f64) -> Self {
        ControlSignal::Cosine {
            amplitude: vec![amplitude],
            multiplier,
            horizon,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ControlSignal::Zero { dim } => *dim,
            ControlSignal::Constant { value } => value.len(),
            ControlSignal::Cosine { amplitude, .. } => amplitude.len(),
        }
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        match self {
            ControlSignal::Zero { dim } => DVector::zeros(*dim),
            ControlSignal::Constant { value } => DVector::from_column_slice(value),
            ControlSignal::Cosine {
                amplitude,
                multiplier,
                horizon,
            } => {
                let c = (multiplier * std::f64::consts::PI * t / horizon).cos();
                DVector::from_iterator(amplitude.len(), amplitude.iter().map(|a| a * c))
            }
        }
    }

    pub fn is_time_invariant(&self) -> bool {
        !matches!(self, ControlSignal::Cosine { .. })
    }

    pub fn label(&self) -> String {
        match self {
            ControlSignal::Zero { .. } => "zero".to_string(),
            ControlSignal::Constant { value } => {
                let parts: Vec<String> = value.iter().map(|v| format!("{v}")).collect();
                format!("const({})", parts.join(","))
            }
            ControlSignal::Cosine {
                amplitude, multiplier, ..
            } => format!("cos(a={},q={})", amplitude[0], multiplier),
        }
    }
}

/// Uniform grid `t_i = i h`, `i = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub steps: usize,
    pub step_size: f64,
}

impl TimeGrid {
    pub fn new(steps: usize, step_size: f64) -> Result<Self> {
        if steps < 1 || step_size.is_nan() || step_size <= 0.0 || !step_size.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "time grid needs steps >= 1 and h > 0 (got s = {steps}, h = {step_size})"
            )));
        }
        Ok(TimeGrid { steps, step_size })
    }

    /// Grid with `steps` intervals covering `[0, horizon]`.
    pub fn over(horizon: f64, steps: usize) -> Result<Self> {
        TimeGrid::new(steps, horizon / steps as f64)
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.step_size
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.steps)
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

pub fn orthonormality_defect(v: &DMatrix<f64>) -> f64 {
    let gram = v.transpose() * v;
    linalg::frobenius(&(gram - DMatrix::identity(v.ncols(), v.ncols())))
}

/// Intrusive Galerkin projection onto the columns of `basis`.
pub fn galerkin_project(sys: &BilinearSdeSystem, basis: &ReductionBasis) -> Result<BilinearSdeSystem> {
    project_onto(sys, &basis.basis)
}

/// [`galerkin_project`] for a bare matrix with orthonormal columns.
pub fn project_onto(sys: &BilinearSdeSystem, v: &DMatrix<f64>) -> Result<BilinearSdeSystem> {
    if v.nrows() != sys.state_dim {
        return Err(dim_err("galerkin_project", sys.state_dim, v.nrows()));
    }
    let defect = orthonormality_defect(v);
    if defect > ORTHONORMALITY_TOLERANCE {
        return Err(Error::NotOrthonormal { defect });
    }
    let vt = v.transpose();
    let r = v.ncols();
    Ok(BilinearSdeSystem {
        state_dim: r,
        input_dim: sys.input_dim,
        noise_dim: sys.noise_dim,
        drift_linear: &vt * &sys.drift_linear * v,
        drift_input: &vt * &sys.drift_input,
        drift_bilinear: sys.drift_bilinear.iter().map(|n| &vt * n * v).collect(),
        diffusion: &vt * &sys.diffusion,
        noise_correlation: sys.noise_correlation.clone(),
        initial_mean: &vt * &sys.initial_mean,
        initial_covariance: linalg::symmetrize(&(&vt * &sys.initial_covariance * v)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subspace::{BasisSource, ReductionBasis};

    fn two_state() -> BilinearSdeSystem {
        BilinearSdeSystem::new(
            DMatrix::from_row_slice(2, 2, &[-1.0, 0.2, 0.0, -2.0]),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.5]),
            vec![DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, -0.1])],
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
        )
    }

    #[test]
    fn valid_system_has_no_defects() {
        assert!(two_state().validate().defects.is_empty());
    }

    #[test]
    fn indefinite_correlation_is_reported() {
        let mut sys = two_state();
        sys.noise_correlation = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let report = sys.validate();
        assert_eq!(report.defects, vec![Defect::NoiseCorrelationNotPsd]);
        assert_eq!(report.defects[0].to_string(), "noise_correlation not PSD");
    }

    #[test]
    fn input_shape_mismatch_is_reported() {
        let mut sys = two_state();
        sys.drift_input = DMatrix::zeros(2, 2);
        let report = sys.validate();
        assert!(matches!(report.defects.as_slice(), [Defect::InputDimensionMismatch(_)]));
        assert!(report.defects[0].to_string().starts_with("input dimension mismatch"));
    }

    #[test]
    fn identity_projection_is_identity() {
        let sys = two_state();
        let basis = ReductionBasis::from_matrix(DMatrix::identity(2, 2), BasisSource::Given);
        assert_eq!(galerkin_project(&sys, &basis).unwrap(), sys);
    }

    #[test]
    fn coordinate_subselection() {
        let sys = BilinearSdeSystem::new(
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0])),
            DMatrix::zeros(3, 1),
            vec![DMatrix::zeros(3, 3)],
            DMatrix::zeros(3, 1),
            DMatrix::identity(1, 1),
        );
        let v = DMatrix::from_fn(3, 2, |i, j| if i == j { 1.0 } else { 0.0 });
        let red = project_onto(&sys, &v).unwrap();
        assert_eq!(
            red.drift_linear,
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]))
        );
        assert_eq!(red.noise_correlation, sys.noise_correlation);
    }

    #[test]
    fn non_orthonormal_basis_rejected() {
        let v = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        assert!(matches!(
            project_onto(&two_state(), &v),
            Err(Error::NotOrthonormal { .. })
        ));
        let v = DMatrix::from_row_slice(3, 1, &[1.0, 0.0, 0.0]);
        assert!(matches!(project_onto(&two_state(), &v), Err(Error::Dimension { .. })));
    }

    #[test]
    fn cosine_endpoints() {
        let u = ControlSignal::cosine(2.5, 5.0, 1.0);
        assert_eq!(u.eval(0.0)[0], 2.5);
        assert!((u.eval(1.0)[0] + 2.5).abs() < 1e-14);
        let u = ControlSignal::cosine(1.0, 2.0, 1.0);
        assert!((u.eval(0.5)[0] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn grid_horizon() {
        let g = TimeGrid::new(1000, 1e-3).unwrap();
        assert!((g.horizon() - 1.0).abs() < 1e-12);
        assert!(TimeGrid::new(0, 0.1).is_err());
        assert!(TimeGrid::new(3, 0.0).is_err());
    }
}
