//! Stochastic-optimization tasks.
//!
//! A task supplies the realized cost `f(y, a)`, the expected cost under a
//! [`GaussianPrediction`] together with its gradients with respect to the
//! decision, the predictive means and the predictive standard deviations, and
//! a Euclidean projection onto its feasible set.

mod data;
mod montecarlo;
mod power;
mod projection;
mod synthetic;

pub use data::{
    gen_power_dataset, gen_synthetic2d_dataset, Dataset, DecisionDataset, PowerGenConfig,
};
pub use montecarlo::{mc_expected_cost, mc_expected_cost_with, McSamples};
pub use power::{power_cost, power_cost_grads, power_expected_cost, PowerTaskParams};
pub use projection::{
    project_ramp, project_ramp_dykstra, ramp_violation, DYKSTRA_MAX_SWEEPS, DYKSTRA_TOL,
};
pub use synthetic::{
    synthetic2d_cost, synthetic2d_cost_grads, synthetic2d_expected_cost, Synthetic2dParams,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RngStream;
use crate::predictor::GaussianPrediction;

/// Expected cost and its gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpectedCost {
    pub value: f64,
    pub grad_a: Vec<f64>,
    pub grad_mu: Vec<f64>,
    pub grad_sigma: Vec<f64>,
    /// Standard error of `value`, for Monte-Carlo estimates.
    pub std_error: Option<f64>,
}

impl ExpectedCost {
    /// Multiplies the value and every gradient by `factor`.
    pub fn scaled(mut self, factor: f64) -> Self {
        self.value *= factor;
        for g in self
            .grad_a
            .iter_mut()
            .chain(&mut self.grad_mu)
            .chain(&mut self.grad_sigma)
        {
            *g *= factor;
        }
        self.std_error = self.std_error.map(|s| s * factor.abs());
        self
    }
}

/// How the expected cost is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ExpectationMode {
    ClosedForm,
    MonteCarlo { samples: usize },
}

/// The built-in tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Power(PowerTaskParams),
    Synthetic2d(Synthetic2dParams),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub expectation: ExpectationMode,
}

impl TaskSpec {
    pub fn power(params: PowerTaskParams) -> Self {
        Self {
            kind: TaskKind::Power(params),
            expectation: ExpectationMode::ClosedForm,
        }
    }

    pub fn synthetic2d(params: Synthetic2dParams) -> Self {
        Self {
            kind: TaskKind::Synthetic2d(params),
            expectation: ExpectationMode::ClosedForm,
        }
    }

    pub fn with_expectation(mut self, mode: ExpectationMode) -> Self {
        self.expectation = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            TaskKind::Power(p) => p.validate()?,
            TaskKind::Synthetic2d(p) => p.validate()?,
        }
        if let ExpectationMode::MonteCarlo { samples } = self.expectation {
            if samples < 1 {
                return Err(Error::Config(
                    "Monte-Carlo sample count must be at least 1".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn decision_dim(&self) -> usize {
        match &self.kind {
            TaskKind::Power(p) => p.horizon,
            TaskKind::Synthetic2d(_) => 2,
        }
    }

    pub fn label_dim(&self) -> usize {
        self.decision_dim()
    }

    pub fn name(&self) -> &'static str {
        match &self.kind {
            TaskKind::Power(_) => "power",
            TaskKind::Synthetic2d(_) => "synthetic2d",
        }
    }

    fn check_dims(&self, y: &[f64], a: &[f64]) -> Result<()> {
        let d = self.decision_dim();
        if y.len() != d || a.len() != d {
            return Err(Error::Domain(format!(
                "{} task expects length {d}, got label {} and decision {}",
                self.name(),
                y.len(),
                a.len()
            )));
        }
        Ok(())
    }

    /// Realized cost `f(y, a)`.
    pub fn cost(&self, y: &[f64], a: &[f64]) -> Result<f64> {
        self.check_dims(y, a)?;
        Ok(match &self.kind {
            TaskKind::Power(p) => power_cost(y, a, p),
            TaskKind::Synthetic2d(p) => synthetic2d_cost(y, a, p),
        })
    }

    /// `(f, ∂f/∂a, ∂f/∂y)` with subgradient 0 at kinks.
    pub fn cost_grads(&self, y: &[f64], a: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        self.check_dims(y, a)?;
        Ok(match &self.kind {
            TaskKind::Power(p) => power_cost_grads(y, a, p),
            TaskKind::Synthetic2d(p) => synthetic2d_cost_grads(y, a, p),
        })
    }

    /// Analytic expected cost under a factorized Gaussian.
    pub fn closed_form_expected_cost(
        &self,
        pred: &GaussianPrediction,
        a: &[f64],
    ) -> Result<ExpectedCost> {
        self.check_dims(&pred.mu, a)?;
        Ok(match &self.kind {
            TaskKind::Power(p) => power_expected_cost(pred, a, p),
            TaskKind::Synthetic2d(p) => synthetic2d_expected_cost(pred, a, p),
        })
    }

    /// Draws the fixed noise set used by Monte-Carlo expectations, or `None`
    /// in closed-form mode.
    pub fn draw_mc_samples(&self, stream: &mut RngStream) -> Option<McSamples> {
        match self.expectation {
            ExpectationMode::ClosedForm => None,
            ExpectationMode::MonteCarlo { samples } => {
                Some(McSamples::draw(stream, samples, self.label_dim()))
            }
        }
    }

    /// Expected cost in the task's configured mode. Monte-Carlo mode needs the
    /// noise set from [`Self::draw_mc_samples`] so repeated calls share common
    /// random numbers.
    pub fn expected_cost(
        &self,
        pred: &GaussianPrediction,
        a: &[f64],
        mc: Option<&McSamples>,
    ) -> Result<ExpectedCost> {
        match self.expectation {
            ExpectationMode::ClosedForm => self.closed_form_expected_cost(pred, a),
            ExpectationMode::MonteCarlo { .. } => {
                let eps = mc.ok_or_else(|| {
                    Error::Config("Monte-Carlo expectation requires a noise sample set".into())
                })?;
                mc_expected_cost_with(self, pred, a, eps)
            }
        }
    }

    /// Euclidean projection onto the feasible set.
    pub fn project(&self, a: &[f64]) -> Result<Vec<f64>> {
        if a.len() != self.decision_dim() {
            return Err(Error::Domain("decision has wrong length".into()));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("cannot project a non-finite decision".into()));
        }
        match &self.kind {
            TaskKind::Power(p) => project_ramp(a, p.ramp),
            TaskKind::Synthetic2d(_) => Ok(a.to_vec()),
        }
    }

    /// Largest constraint violation (0 when feasible).
    pub fn violation(&self, a: &[f64]) -> f64 {
        match &self.kind {
            TaskKind::Power(p) => ramp_violation(a, p.ramp),
            TaskKind::Synthetic2d(_) => 0.0,
        }
    }

    pub fn is_feasible(&self, a: &[f64], slack: f64) -> bool {
        a.len() == self.decision_dim() && self.violation(a) <= slack
    }

    /// Per-dimension box that contains every plausible minimizer of the
    /// expected cost under `pred`.
    pub fn decision_box(&self, pred: &GaussianPrediction) -> Vec<(f64, f64)> {
        match &self.kind {
            TaskKind::Power(_) => pred
                .mu
                .iter()
                .zip(&pred.sigma)
                .map(|(m, s)| (m - 5.0 * s, m + 5.0 * s))
                .collect(),
            TaskKind::Synthetic2d(_) => vec![(-4.0, 6.0); 2],
        }
    }
}
