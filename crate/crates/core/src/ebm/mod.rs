//! The energy-based decision model and its training.
//!
//! The energy of decision `a` for features `x` is the scaled expected task
//! cost `E(x, a; θ) = τ · E_{N(μ(x), σ(x))} f(y, a)`, so
//! `q(a | x; θ) ∝ exp(-E)` concentrates on cheap decisions. Training
//! combines maximum likelihood of the preprocessed optimal decisions with a
//! KL term towards `p(a | y) ∝ exp(-τ f(y, a))`; both expectations are
//! estimated by self-normalized importance sampling over one shared set of
//! proposal samples per example.

mod eval;
mod proposal;
mod train;

pub use eval::{eval_task_loss, predict_decision, EvalReport, ExampleEval};
pub use proposal::{
    log_proposal_density, propose, snis_weights, Proposal, ProposalConfig, SnisWeights,
};
pub use train::{
    grad_from_samples, grad_total, train, train_two_stage, EpochRecord, ExampleDiagnostics,
    History, Objective, TrainConfig, Trainer,
};

use crate::error::{Error, Result};
use crate::predictor::{GaussianPrediction, MlpParams};
use crate::task::{ExpectedCost, McSamples, TaskSpec};

/// Default cost scale for the power task; keeps `exp(-τ f)` from saturating
/// with the over-generation penalty of 50.
pub const POWER_TAU: f64 = 0.1;
pub const SYNTHETIC_TAU: f64 = 1.0;

/// Predictor plus task: everything needed to evaluate energies.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyModel {
    pub params: MlpParams,
    pub task: TaskSpec,
    pub tau: f64,
}

impl EnergyModel {
    pub fn new(params: MlpParams, task: TaskSpec, tau: f64) -> Result<Self> {
        let m = Self { params, task, tau };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.task.validate()?;
        if self.params.label_dim != self.task.label_dim() {
            return Err(Error::Config(format!(
                "predictor label dimension {} does not match task label dimension {}",
                self.params.label_dim,
                self.task.label_dim()
            )));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Config(format!(
                "cost scale tau must be positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }

    /// Energy and its gradients for an already computed prediction.
    pub fn energy_from_prediction(
        &self,
        pred: &GaussianPrediction,
        a: &[f64],
        mc: Option<&McSamples>,
    ) -> Result<ExpectedCost> {
        Ok(self.task.expected_cost(pred, a, mc)?.scaled(self.tau))
    }

    /// `E(x, a; θ)` with the network in evaluation mode.
    pub fn energy(&self, x: &[f64], a: &[f64], mc: Option<&McSamples>) -> Result<ExpectedCost> {
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("decision must be finite".into()));
        }
        let pred = self.params.predict(x)?;
        self.energy_from_prediction(&pred, a, mc)
    }
}
