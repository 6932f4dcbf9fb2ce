//! Relative moment errors and weak errors between a full model and a lifted
//! reduced model.

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, Result};
use crate::moments::{gaussian_functional_expectations, MomentTrajectory};

/// A metric value, `None` when its denominator vanishes.
pub type Metric = Option<f64>;

/// Ratios whose denominator falls below this fraction of the numerator are undefined.
pub const DENOMINATOR_GUARD: f64 = 1e-14;

pub fn guarded_ratio(num: f64, den: f64) -> Metric {
    if !num.is_finite() || !den.is_finite() {
        return None;
    }
    if den == 0.0 || den.abs() < DENOMINATOR_GUARD * num.abs() {
        None
    } else {
        Some(num / den.abs())
    }
}

pub fn format_metric(m: Metric) -> String {
    match m {
        Some(v) => format!("{v:.6e}"),
        None => "NA".to_string(),
    }
}

fn check_aligned(fom: &MomentTrajectory, rom: &MomentTrajectory, basis: &DMatrix<f64>) -> Result<()> {
    if fom.means.len() != rom.means.len() || fom.covariances.len() != rom.covariances.len() {
        return Err(dim_err("error metrics time grid", fom.means.len(), rom.means.len()));
    }
    if basis.nrows() != fom.state_dim() || basis.ncols() != rom.state_dim() {
        return Err(dim_err(
            "error metrics basis",
            format!("{}x{}", fom.state_dim(), rom.state_dim()),
            format!("{}x{}", basis.nrows(), basis.ncols()),
        ));
    }
    Ok(())
}

/// `(e_E, e_C)`, summed over grid indices `1..=s`.
pub fn relative_errors(
    fom: &MomentTrajectory,
    rom: &MomentTrajectory,
    basis: &DMatrix<f64>,
) -> Result<(Metric, Metric)> {
    check_aligned(fom, rom, basis)?;
    let vt = basis.transpose();
    let (mut ne, mut de, mut nc, mut dc) = (0.0, 0.0, 0.0, 0.0);
    for i in 1..fom.means.len() {
        let e = &fom.means[i];
        ne += (e - basis * &rom.means[i]).norm_squared();
        de += e.norm_squared();
        let c = &fom.covariances[i];
        let lifted = basis * &rom.covariances[i] * &vt;
        nc += (c - lifted).norm_squared();
        dc += c.norm_squared();
    }
    Ok((guarded_ratio(ne, de), guarded_ratio(nc, dc)))
}

/// `(e_phi1, e_phi2)` at grid index `tau` from the Gaussian closed forms.
pub fn weak_errors(
    fom: &MomentTrajectory,
    rom: &MomentTrajectory,
    basis: &DMatrix<f64>,
    tau: usize,
) -> Result<(Metric, Metric)> {
    check_aligned(fom, rom, basis)?;
    if tau >= fom.means.len() {
        return Err(dim_err("weak error time index", format!("< {}", fom.means.len()), tau));
    }
    let (f1, f2) = gaussian_functional_expectations(&fom.means[tau], &fom.covariances[tau])?;
    let mean = basis * &rom.means[tau];
    let cov = basis * &rom.covariances[tau] * basis.transpose();
    let (r1, r2) = gaussian_functional_expectations(&mean, &cov)?;
    Ok((functional_error(f1, r1), functional_error(f2, r2)))
}

pub fn functional_error(fom: f64, rom: f64) -> Metric {
    guarded_ratio((fom - rom).abs(), fom)
}

/// Sample averages of `||x||^2` and `(1/n) sum x_i^3 e^{x_i}` over the columns of `states`.
pub fn monte_carlo_functionals(states: &DMatrix<f64>) -> (f64, f64) {
    let (n, l) = states.shape();
    let mut p1 = 0.0;
    let mut p2 = 0.0;
    for col in states.column_iter() {
        p1 += col.norm_squared();
        p2 += col.iter().map(|x| x * x * x * x.exp()).sum::<f64>() / n as f64;
    }
    (p1 / l as f64, p2 / l as f64)
}

/// Monte Carlo weak errors with the reduced states lifted by `basis`.
pub fn weak_errors_monte_carlo(
    fom_states: &DMatrix<f64>,
    rom_states: &DMatrix<f64>,
    basis: &DMatrix<f64>,
) -> (Metric, Metric) {
    let (f1, f2) = monte_carlo_functionals(fom_states);
    let (r1, r2) = monte_carlo_functionals(&(basis * rom_states));
    (functional_error(f1, r1), functional_error(f2, r2))
}

/// Error tables with one row per reduced dimension and one column per method.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub dims: Vec<usize>,
    /// `POD` followed by `OpInf_L<paths>` for every training ensemble size.
    pub methods: Vec<String>,
    pub e_mean: Vec<Vec<Metric>>,
    pub e_cov: Vec<Vec<Metric>>,
    pub e_phi1: Vec<Vec<Metric>>,
    pub e_phi2: Vec<Vec<Metric>>,
    /// Inferred noise dimension per row and method (`None` for POD).
    pub noise_dims: Vec<Vec<Option<usize>>>,
    /// SNR of the subspace data per grid index.
    pub snr: Vec<Option<f64>>,
    pub times: Vec<f64>,
    pub subspace_mean_norm: f64,
    pub subspace_cov_norm: f64,
}

impl ErrorReport {
    pub fn metric_tables(&self) -> [(&'static str, &Vec<Vec<Metric>>); 4] {
        [
            ("e_E", &self.e_mean),
            ("e_C", &self.e_cov),
            ("e_phi1", &self.e_phi1),
            ("e_phi2", &self.e_phi2),
        ]
    }

    pub fn column(&self, method: &str) -> Option<usize> {
        self.methods.iter().position(|m| m == method)
    }

    pub fn row(&self, r: usize) -> Option<usize> {
        self.dims.iter().position(|d| *d == r)
    }

    /// CSV with a header `r,<methods>` and `NA` for undefined cells.
    pub fn table_csv(&self, table: &[Vec<Metric>]) -> String {
        let mut out = format!("r,{}\n", self.methods.join(","));
        for (r, row) in self.dims.iter().zip(table) {
            let cells: Vec<String> = row.iter().map(|m| format_metric(*m)).collect();
            out.push_str(&format!("{r},{}\n", cells.join(",")));
        }
        out
    }

    pub fn noise_dims_csv(&self) -> String {
        let mut out = format!("r,{}\n", self.methods.join(","));
        for (r, row) in self.dims.iter().zip(&self.noise_dims) {
            let cells: Vec<String> = row
                .iter()
                .map(|d| d.map_or_else(|| "NA".to_string(), |v| v.to_string()))
                .collect();
            out.push_str(&format!("{r},{}\n", cells.join(",")));
        }
        out
    }

    /// Long format `metric,method,r,value` for external plotting.
    pub fn plot_data(&self) -> String {
        let mut out = String::from("metric,method,r,value\n");
        for (name, table) in self.metric_tables() {
            for (k, method) in self.methods.iter().enumerate() {
                for (i, r) in self.dims.iter().enumerate() {
                    out.push_str(&format!("{name},{method},{r},{}\n", format_metric(table[i][k])));
                }
            }
        }
        out
    }

    pub fn snr_csv(&self) -> String {
        let mut out = String::from("t,snr\n");
        for (t, s) in self.times.iter().zip(&self.snr) {
            out.push_str(&format!("{t},{}\n", format_metric(*s)));
        }
        out
    }
}

/// `c E_i` and `c^2 C_i`, used to check scale invariance of the metrics.
pub fn scale_moments(m: &MomentTrajectory, c: f64) -> MomentTrajectory {
    MomentTrajectory {
        means: m.means.iter().map(|e| e * c).collect::<Vec<DVector<f64>>>(),
        covariances: m.covariances.iter().map(|s| s * (c * c)).collect(),
        grid: m.grid,
        source: m.source,
    }
}
