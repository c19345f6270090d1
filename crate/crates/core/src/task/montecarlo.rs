//! Reparameterized Monte-Carlo expected cost.
//!
//! With `y = μ + σ ⊙ ε`, `ε ~ N(0, I)`, the pathwise gradients are
//! `∂/∂μ = E[∂f/∂y]` and `∂/∂σ = E[∂f/∂y ⊙ ε]`.

use super::power::power_term;
use super::synthetic::synthetic_term;
use super::{ExpectedCost, TaskKind, TaskSpec};
use crate::error::{Error, Result};
use crate::numerics::RngStream;
use crate::predictor::GaussianPrediction;

/// A fixed set of standard-normal noise vectors, reused across evaluations
/// to get common random numbers.
#[derive(Clone, Debug, PartialEq)]
pub struct McSamples {
    pub count: usize,
    pub dim: usize,
    /// Row-major `count x dim`.
    pub eps: Vec<f64>,
}

impl McSamples {
    pub fn draw(stream: &mut RngStream, count: usize, dim: usize) -> Self {
        let eps = (0..count * dim).map(|_| stream.standard_normal()).collect();
        Self { count, dim, eps }
    }
}

/// Draws `n` noise vectors from `stream` and evaluates the estimator.
pub fn mc_expected_cost(
    task: &TaskSpec,
    pred: &GaussianPrediction,
    a: &[f64],
    n: usize,
    stream: &mut RngStream,
) -> Result<ExpectedCost> {
    if n < 1 {
        return Err(Error::Config(
            "Monte-Carlo sample count must be at least 1".into(),
        ));
    }
    let eps = McSamples::draw(stream, n, task.label_dim());
    mc_expected_cost_with(task, pred, a, &eps)
}

/// Monte-Carlo estimate over a caller-provided noise set.
pub fn mc_expected_cost_with(
    task: &TaskSpec,
    pred: &GaussianPrediction,
    a: &[f64],
    samples: &McSamples,
) -> Result<ExpectedCost> {
    let d = task.decision_dim();
    if a.len() != d || pred.dim() != d || samples.dim != d {
        return Err(Error::Domain(
            "dimension mismatch in Monte-Carlo expectation".into(),
        ));
    }
    if samples.count < 1 {
        return Err(Error::Config(
            "Monte-Carlo sample count must be at least 1".into(),
        ));
    }
    let term = |y: f64, a: f64| match &task.kind {
        TaskKind::Power(p) => power_term(y, a, p),
        TaskKind::Synthetic2d(p) => synthetic_term(y, a, p),
    };
    let mut grad_a = vec![0.0; d];
    let mut grad_mu = vec![0.0; d];
    let mut grad_sigma = vec![0.0; d];
    let mut values = Vec::with_capacity(samples.count);
    for row in samples.eps.chunks_exact(d) {
        let mut f = 0.0;
        for i in 0..d {
            let y = pred.mu[i] + pred.sigma[i] * row[i];
            let (fi, ga, gy) = term(y, a[i]);
            f += fi;
            grad_a[i] += ga;
            grad_mu[i] += gy;
            grad_sigma[i] += gy * row[i];
        }
        values.push(f);
    }
    let n = samples.count as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std_error = if samples.count > 1 {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    for g in grad_a.iter_mut().chain(&mut grad_mu).chain(&mut grad_sigma) {
        *g /= n;
    }
    Ok(ExpectedCost {
        value: mean,
        grad_a,
        grad_mu,
        grad_sigma,
        std_error: Some(std_error),
    })
}
