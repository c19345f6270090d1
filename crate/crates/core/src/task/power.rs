//! Generator scheduling under uncertain demand: under/over-generation
//! penalties plus a quadratic mismatch term, with hour-to-hour ramp limits.

use serde::{Deserialize, Serialize};

use super::ExpectedCost;
use crate::error::{Error, Result};
use crate::numerics::{std_normal_cdf, std_normal_pdf};
use crate::predictor::GaussianPrediction;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerTaskParams {
    /// Penalty per unit of unmet demand.
    pub gamma_under: f64,
    /// Penalty per unit of excess generation.
    pub gamma_over: f64,
    /// Maximum change between consecutive hours.
    pub ramp: f64,
    pub horizon: usize,
}

impl PowerTaskParams {
    /// `γ_s = 0.4`, `γ_e = 50`, `c_r = 0.4`.
    pub fn paper(horizon: usize) -> Self {
        Self {
            gamma_under: 0.4,
            gamma_over: 50.0,
            ramp: 0.4,
            horizon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_under > 0.0 && self.gamma_over > self.gamma_under) {
            return Err(Error::Config(format!(
                "power penalties need gamma_over > gamma_under > 0, got {} and {}",
                self.gamma_over, self.gamma_under
            )));
        }
        if !(self.ramp > 0.0) || self.horizon == 0 {
            return Err(Error::Config(
                "ramp limit and horizon must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn power_term(y: f64, a: f64, p: &PowerTaskParams) -> (f64, f64, f64) {
    let d = a - y;
    let (f, slope) = if d > 0.0 {
        (p.gamma_over * d, p.gamma_over)
    } else if d < 0.0 {
        (-p.gamma_under * d, -p.gamma_under)
    } else {
        (0.0, 0.0)
    };
    let f = f + 0.5 * d * d;
    let ga = slope + d;
    (f, ga, -ga)
}

/// `Σ_i γ_s (y_i - a_i)_+ + γ_e (a_i - y_i)_+ + ½ (a_i - y_i)^2`.
pub fn power_cost(y: &[f64], a: &[f64], p: &PowerTaskParams) -> f64 {
    y.iter()
        .zip(a)
        .map(|(&yi, &ai)| power_term(yi, ai, p).0)
        .sum()
}

/// Cost with gradients in `a` and `y`; subgradient 0 at `a_i = y_i`.
pub fn power_cost_grads(y: &[f64], a: &[f64], p: &PowerTaskParams) -> (f64, Vec<f64>, Vec<f64>) {
    let mut f = 0.0;
    let mut ga = Vec::with_capacity(a.len());
    let mut gy = Vec::with_capacity(a.len());
    for (&yi, &ai) in y.iter().zip(a) {
        let (fi, gai, gyi) = power_term(yi, ai, p);
        f += fi;
        ga.push(gai);
        gy.push(gyi);
    }
    (f, ga, gy)
}

/// Closed-form `E_{y ~ N(μ, σ²)} f(y, a)`, per dimension with `d = a - μ`,
/// `z = d / σ`:
///
/// `(γ_s + γ_e)(σ φ(z) + d Φ(z)) - γ_s d + ½ (d² + σ²)`
///
/// with `∂/∂a = (γ_s + γ_e) Φ(z) - γ_s + d`, `∂/∂μ = -∂/∂a` and
/// `∂/∂σ = (γ_s + γ_e) φ(z) + σ`.
pub fn power_expected_cost(
    pred: &GaussianPrediction,
    a: &[f64],
    p: &PowerTaskParams,
) -> ExpectedCost {
    let n = a.len();
    let gsum = p.gamma_under + p.gamma_over;
    let mut value = 0.0;
    let mut grad_a = Vec::with_capacity(n);
    let mut grad_mu = Vec::with_capacity(n);
    let mut grad_sigma = Vec::with_capacity(n);
    for i in 0..n {
        let (mu, sigma) = (pred.mu[i], pred.sigma[i]);
        let d = a[i] - mu;
        let z = d / sigma;
        let pdf = std_normal_pdf(z);
        let cdf = std_normal_cdf(z);
        value += gsum * (sigma * pdf + d * cdf) - p.gamma_under * d + 0.5 * (d * d + sigma * sigma);
        let ga = gsum * cdf - p.gamma_under + d;
        grad_a.push(ga);
        grad_mu.push(-ga);
        grad_sigma.push(gsum * pdf + sigma);
    }
    ExpectedCost {
        value,
        grad_a,
        grad_mu,
        grad_sigma,
        std_error: None,
    }
}
