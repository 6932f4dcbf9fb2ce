//! Gronwall-type continuity bounds for the mean and covariance of two
//! bilinear systems driven by the same control.
//!
//! With `Psi, Psi^` the drift matrices, `H = M K M^T` and all norms Frobenius,
//!
//! ```text
//! e_exp(t) <= (a_e + b_e int_0^t |dPsi| + g_e int_0^t |dB u|) exp(int_0^t |dPsi|)
//! e_cov(t) <= (a_c + b_c int_0^t |dPsi| + g_c int_0^t |dH|)   exp(k int_0^t |dPsi|)
//! ```
//!
//! where `g_e = exp(int_0^T |Psi|)`, `a_e = |dE_0| g_e`, `b_e = c_3 g_e`,
//! `c_3 = (|E_0| + int_0^T |B u|) exp(int_0^T |Psi|)`, `g_c = exp(k int_0^T |Psi|)`,
//! `a_c = |dC_0| g_c`, `b_c = 2 c_1 g_c` and
//! `c_1 = (|C_0| + int_0^T |H|) exp(2 int_0^T |Psi|)`.
//! [`BoundVariant::Stated`] uses `k = 1`; [`BoundVariant::Rigorous`] uses
//! `k = 2`, the factor produced by the two-sided Lyapunov term.

use nalgebra::DMatrix;

use crate::error::{dim_err, Result};
use crate::model::{BilinearSdeSystem, ControlSignal, TimeGrid};
use crate::moments;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundVariant {
    Stated,
    Rigorous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GronwallReport {
    pub times: Vec<f64>,
    pub exp_error: Vec<f64>,
    pub exp_bound: Vec<f64>,
    pub cov_error: Vec<f64>,
    pub cov_bound: Vec<f64>,
    pub alpha_e: f64,
    pub beta_e: f64,
    pub gamma_e: f64,
    pub alpha_c: f64,
    pub beta_c: f64,
    pub gamma_c: f64,
}

impl GronwallReport {
    /// First grid index where either error exceeds its bound.
    pub fn first_violation(&self) -> Option<usize> {
        (0..self.times.len()).find(|&i| self.exp_error[i] > self.exp_bound[i] || self.cov_error[i] > self.cov_bound[i])
    }

    pub fn holds(&self) -> bool {
        self.first_violation().is_none()
    }
}

/// Cumulative trapezoid integral of samples `f` on a uniform grid.
pub fn cumulative_trapezoid(f: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(f.len());
    let mut acc = 0.0;
    for (i, v) in f.iter().enumerate() {
        if i > 0 {
            acc += 0.5 * h * (f[i - 1] + v);
        }
        out.push(acc);
    }
    out
}

/// Integrates both systems' moment equations and evaluates the bounds at every grid time.
pub fn gronwall_check(
    reference: &BilinearSdeSystem,
    perturbed: &BilinearSdeSystem,
    control: &ControlSignal,
    grid: &TimeGrid,
    substeps: usize,
    variant: BoundVariant,
) -> Result<GronwallReport> {
    if reference.state_dim != perturbed.state_dim || reference.input_dim != perturbed.input_dim {
        return Err(dim_err(
            "gronwall pair",
            format!("n = {}, m = {}", reference.state_dim, reference.input_dim),
            format!("n = {}, m = {}", perturbed.state_dim, perturbed.input_dim),
        ));
    }
    let ref_m = moments::integrate_moments(reference, control, grid, substeps)?;
    let per_m = moments::integrate_moments(perturbed, control, grid, substeps)?;
    let h_ref = reference.noise_covariance_rate();
    let h_per = perturbed.noise_covariance_rate();
    let dh = (&h_per - &h_ref).norm();

    let len = grid.len();
    let mut psi_norm = Vec::with_capacity(len);
    let mut dpsi_norm = Vec::with_capacity(len);
    let mut bu_norm = Vec::with_capacity(len);
    let mut dbu_norm = Vec::with_capacity(len);
    for i in 0..len {
        let u = control.eval(grid.time(i));
        let psi = reference.drift_matrix(&u);
        let psi_hat = perturbed.drift_matrix(&u);
        psi_norm.push(psi.norm());
        dpsi_norm.push((&psi_hat - &psi).norm());
        let bu = &reference.drift_input * &u;
        let bu_hat = &perturbed.drift_input * &u;
        bu_norm.push(bu.norm());
        dbu_norm.push((&bu_hat - &bu).norm());
    }
    let h = grid.step_size;
    let int_psi = cumulative_trapezoid(&psi_norm, h);
    let int_dpsi = cumulative_trapezoid(&dpsi_norm, h);
    let int_bu = cumulative_trapezoid(&bu_norm, h);
    let int_dbu = cumulative_trapezoid(&dbu_norm, h);
    let int_dh: Vec<f64> = (0..len).map(|i| dh * grid.time(i)).collect();
    let psi_t = int_psi[len - 1];
    let bu_t = int_bu[len - 1];
    let h_t = h_ref.norm() * grid.horizon();

    let gamma_e = psi_t.exp();
    let c3 = (reference.initial_mean.norm() + bu_t) * psi_t.exp();
    let alpha_e = (&perturbed.initial_mean - &reference.initial_mean).norm() * gamma_e;
    let beta_e = c3 * gamma_e;

    let k = match variant {
        BoundVariant::Stated => 1.0,
        BoundVariant::Rigorous => 2.0,
    };
    let gamma_c = (k * psi_t).exp();
    let c1 = (reference.initial_covariance.norm() + h_t) * (2.0 * psi_t).exp();
    let d_c0: DMatrix<f64> = &perturbed.initial_covariance - &reference.initial_covariance;
    let alpha_c = d_c0.norm() * gamma_c;
    let beta_c = 2.0 * c1 * gamma_c;

    let mut report = GronwallReport {
        times: (0..len).map(|i| grid.time(i)).collect(),
        exp_error: Vec::with_capacity(len),
        exp_bound: Vec::with_capacity(len),
        cov_error: Vec::with_capacity(len),
        cov_bound: Vec::with_capacity(len),
        alpha_e,
        beta_e,
        gamma_e,
        alpha_c,
        beta_c,
        gamma_c,
    };
    for i in 0..len {
        report.exp_error.push((&per_m.means[i] - &ref_m.means[i]).norm());
        report
            .cov_error
            .push((&per_m.covariances[i] - &ref_m.covariances[i]).norm());
        report
            .exp_bound
            .push((alpha_e + beta_e * int_dpsi[i] + gamma_e * int_dbu[i]) * int_dpsi[i].exp());
        report
            .cov_bound
            .push((alpha_c + beta_c * int_dpsi[i] + gamma_c * int_dh[i]) * (k * int_dpsi[i]).exp());
    }
    Ok(report)
}
