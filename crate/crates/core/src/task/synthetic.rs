//! Two-dimensional toy task: `Σ_i w_abs |a_i - y_i| + w_quad (a_i - c)^2`.

use serde::{Deserialize, Serialize};

use super::ExpectedCost;
use crate::error::{Error, Result};
use crate::numerics::{std_normal_cdf, std_normal_pdf};
use crate::predictor::GaussianPrediction;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Synthetic2dParams {
    pub abs_weight: f64,
    pub quad_weight: f64,
    pub center: f64,
}

impl Default for Synthetic2dParams {
    fn default() -> Self {
        Self {
            abs_weight: 3.0,
            quad_weight: 0.5,
            center: 1.5,
        }
    }
}

impl Synthetic2dParams {
    pub fn validate(&self) -> Result<()> {
        if self.abs_weight > 0.0 && self.quad_weight > 0.0 && self.center.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(
                "synthetic task coefficients must be positive".into(),
            ))
        }
    }
}

#[inline]
pub(crate) fn synthetic_term(y: f64, a: f64, p: &Synthetic2dParams) -> (f64, f64, f64) {
    let d = a - y;
    let sign = if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    };
    let q = a - p.center;
    let f = p.abs_weight * d.abs() + p.quad_weight * q * q;
    let ga = p.abs_weight * sign + 2.0 * p.quad_weight * q;
    let gy = -p.abs_weight * sign;
    (f, ga, gy)
}

pub fn synthetic2d_cost(y: &[f64], a: &[f64], p: &Synthetic2dParams) -> f64 {
    y.iter()
        .zip(a)
        .map(|(&yi, &ai)| synthetic_term(yi, ai, p).0)
        .sum()
}

/// Cost with gradients in `a` and `y`; subgradient 0 at `a_i = y_i`.
pub fn synthetic2d_cost_grads(
    y: &[f64],
    a: &[f64],
    p: &Synthetic2dParams,
) -> (f64, Vec<f64>, Vec<f64>) {
    let mut f = 0.0;
    let mut ga = Vec::with_capacity(a.len());
    let mut gy = Vec::with_capacity(a.len());
    for (&yi, &ai) in y.iter().zip(a) {
        let (fi, gai, gyi) = synthetic_term(yi, ai, p);
        f += fi;
        ga.push(gai);
        gy.push(gyi);
    }
    (f, ga, gy)
}

/// Closed form via the folded normal mean, `E|a - y| = d (2Φ(z) - 1) + 2σ φ(z)`
/// with `d = a - μ`, `z = d/σ`; `∂/∂σ E|a - y| = 2 φ(z)`.
pub fn synthetic2d_expected_cost(
    pred: &GaussianPrediction,
    a: &[f64],
    p: &Synthetic2dParams,
) -> ExpectedCost {
    let n = a.len();
    let mut value = 0.0;
    let mut grad_a = Vec::with_capacity(n);
    let mut grad_mu = Vec::with_capacity(n);
    let mut grad_sigma = Vec::with_capacity(n);
    for i in 0..n {
        let (mu, sigma) = (pred.mu[i], pred.sigma[i]);
        let d = a[i] - mu;
        let z = d / sigma;
        let pdf = std_normal_pdf(z);
        let tilt = 2.0 * std_normal_cdf(z) - 1.0;
        let q = a[i] - p.center;
        value += p.abs_weight * (d * tilt + 2.0 * sigma * pdf) + p.quad_weight * q * q;
        grad_a.push(p.abs_weight * tilt + 2.0 * p.quad_weight * q);
        grad_mu.push(-p.abs_weight * tilt);
        grad_sigma.push(2.0 * p.abs_weight * pdf);
    }
    ExpectedCost {
        value,
        grad_a,
        grad_mu,
        grad_sigma,
        std_error: None,
    }
}
