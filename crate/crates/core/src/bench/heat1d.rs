//! Bilinear 1d heat equation
//!
//! ```text
//! y_t = 0.1 y_xx + u(t) y_x + sigma(x) dW/dt,   y(0, t) = y(1, t) = u(t),
//! ```
//!
//! discretized with second-order central differences on `n` interior nodes.
//! Both boundary values enter through `B`; the advection stencil contributes
//! with opposite signs at the two ends.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::BilinearSdeSystem;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Heat1dSpec {
    pub n: usize,
    pub diffusivity: f64,
    /// Amplitude of both noise profiles.
    pub noise_scale: f64,
}

impl Default for Heat1dSpec {
    fn default() -> Self {
        Heat1dSpec {
            n: 100,
            diffusivity: 0.1,
            noise_scale: 0.1,
        }
    }
}

impl Heat1dSpec {
    pub fn spacing(&self) -> f64 {
        1.0 / (self.n as f64 + 1.0)
    }

    pub fn nodes(&self) -> DVector<f64> {
        let dx = self.spacing();
        DVector::from_fn(self.n, |i, _| (i as f64 + 1.0) * dx)
    }
}

pub fn build_heat1d_fom(spec: &Heat1dSpec) -> Result<BilinearSdeSystem> {
    let n = spec.n;
    if n < 3 {
        return Err(Error::InvalidArgument(format!("heat1d needs n >= 3, got {n}")));
    }
    let dx = spec.spacing();
    let diff = spec.diffusivity / (dx * dx);
    let adv = 1.0 / (2.0 * dx);
    let a = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            -2.0 * diff
        } else if i.abs_diff(j) == 1 {
            diff
        } else {
            0.0
        }
    });
    let nmat = DMatrix::from_fn(n, n, |i, j| {
        if j == i + 1 {
            adv
        } else if i == j + 1 {
            -adv
        } else {
            0.0
        }
    });
    let mut b = DMatrix::zeros(n, 1);
    b[(0, 0)] = diff - adv;
    b[(n - 1, 0)] = diff + adv;
    let x = spec.nodes();
    let mut m = DMatrix::zeros(n, 2);
    for i in 0..n {
        m[(i, 0)] = spec.noise_scale * (-10.0 * (x[i] - 0.5).powi(2)).exp();
        m[(i, 1)] = spec.noise_scale * (2.0 * std::f64::consts::PI * x[i]).sin();
    }
    Ok(BilinearSdeSystem::new(a, b, vec![nmat], m, DMatrix::identity(2, 2)))
}
