//! Gradient estimator and training loops.
//!
//! Per example the gradient with respect to the predictor head is
//!
//! ```text
//! G = Σ_m w̃_m (∂E(a*) - ∂E(a^m))                    (likelihood of a*)
//!   + λ [ Σ_m ŵ_m ∂E(a^m) - Σ_m w̃_m ∂E(a^m) ]        (KL towards p(a | y))
//! ```
//!
//! where `∂E` stands for the pair `(∂E/∂μ, ∂E/∂σ)` and the weights are held
//! constant. By linearity of backpropagation the weighted sum is formed on
//! the head first and pushed through the network once.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eval::eval_task_loss;
use super::proposal::{propose, snis_weights, Proposal, ProposalConfig};
use super::EnergyModel;
use crate::error::{Error, Result};
use crate::numerics::{Purpose, RngStream};
use crate::predictor::{gaussian_nll, AdamState, GaussianPrediction, Gradients};
use crate::solver::SolveConfig;
use crate::task::{Dataset, DecisionDataset, McSamples};

/// Stream epochs of the likelihood (two-stage) objective are offset so they
/// never reuse the energy objective's substreams.
const NLL_EPOCH_OFFSET: u64 = 1 << 22;
/// Examples per gradient accumulation buffer within a mini-batch.
const GRAD_CHUNK: usize = 4;

fn example_error(epoch: usize, index: usize, e: Error) -> Error {
    Error::Training(format!("epoch {epoch}, example {index}: {e}"))
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the KL term.
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub proposal: ProposalConfig,
    pub seed: u64,
    #[serde(default)]
    pub disable_mle: bool,
    #[serde(default)]
    pub disable_kl: bool,
    /// Cost scale inside every exponent.
    pub tau: f64,
    /// Rescale the batch gradient to at most this norm.
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
    /// Sample dropout masks during training.
    #[serde(default = "default_true")]
    pub train_dropout: bool,
}

impl TrainConfig {
    /// The paper's settings (`M = 512`, `K = 3`, `λ = 1`) with a given cost scale.
    pub fn paper(tau: f64) -> Self {
        Self {
            lambda: 1.0,
            epochs: 100,
            batch_size: 32,
            learning_rate: 5e-5,
            proposal: ProposalConfig::default(),
            seed: 0,
            disable_mle: false,
            disable_kl: false,
            tau,
            max_grad_norm: None,
            train_dropout: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(
                "lambda must be a finite non-negative number".into(),
            ));
        }
        if self.disable_mle && (self.disable_kl || self.lambda == 0.0) {
            return Err(Error::Config(
                "at most one of the two loss terms may be disabled".into(),
            ));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Config("tau must be positive".into()));
        }
        if let Some(n) = self.max_grad_norm {
            if !(n > 0.0) {
                return Err(Error::Config("max_grad_norm must be positive".into()));
            }
        }
        self.proposal.validate()
    }

    /// KL weight actually applied: 0 when the KL term is disabled.
    pub fn effective_lambda(&self) -> f64 {
        if self.disable_kl {
            0.0
        } else {
            self.lambda
        }
    }
}

/// Per-example training diagnostics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExampleDiagnostics {
    pub energy_at_astar: f64,
    /// `Σ_m ŵ_m E(a^m)`, the θ-dependent part of the KL term.
    pub kl_cross: f64,
    pub ess_model: f64,
    pub ess_oracle: f64,
}

/// Head gradients `(∂/∂μ, ∂/∂log σ)` of the training loss for one example,
/// given the prediction and a fixed proposal sample set.
///
/// If `anchor_appended` the last sample is `a*` itself and carries no oracle
/// weight.
#[allow(clippy::too_many_arguments)]
pub fn grad_from_samples(
    model: &EnergyModel,
    pred: &GaussianPrediction,
    y: &[f64],
    a_star: &[f64],
    proposal: &Proposal,
    anchor_appended: bool,
    cfg: &TrainConfig,
    mc: Option<&McSamples>,
) -> Result<(Vec<f64>, Vec<f64>, ExampleDiagnostics)> {
    let n = proposal.samples.len();
    let m_oracle = n - usize::from(anchor_appended);
    let p = pred.dim();
    let mut energies = Vec::with_capacity(n);
    for (m, a) in proposal.samples.iter().enumerate() {
        let e = model.energy_from_prediction(pred, a, mc)?;
        if !e.value.is_finite() {
            return Err(Error::Training(format!(
                "non-finite energy {} at proposal sample {m}: {a:?}",
                e.value
            )));
        }
        energies.push(e);
    }
    let star = if anchor_appended {
        energies[n - 1].clone()
    } else {
        model.energy_from_prediction(pred, a_star, mc)?
    };
    let costs = proposal.samples[..m_oracle]
        .iter()
        .map(|a| model.task.cost(y, a))
        .collect::<Result<Vec<f64>>>()?;
    let values: Vec<f64> = energies.iter().map(|e| e.value).collect();
    let w = snis_weights(&values, &costs, &proposal.log_pi, cfg.tau)?;

    let mut g_mu = vec![0.0; p];
    let mut g_sigma = vec![0.0; p];
    if !cfg.disable_mle {
        for (wm, e) in w.model.iter().zip(&energies) {
            for j in 0..p {
                g_mu[j] += wm * (star.grad_mu[j] - e.grad_mu[j]);
                g_sigma[j] += wm * (star.grad_sigma[j] - e.grad_sigma[j]);
            }
        }
    }
    let lambda = cfg.effective_lambda();
    if lambda != 0.0 {
        for (wo, e) in w.oracle.iter().zip(&energies) {
            for j in 0..p {
                g_mu[j] += lambda * wo * e.grad_mu[j];
                g_sigma[j] += lambda * wo * e.grad_sigma[j];
            }
        }
        for (wm, e) in w.model.iter().zip(&energies) {
            for j in 0..p {
                g_mu[j] -= lambda * wm * e.grad_mu[j];
                g_sigma[j] -= lambda * wm * e.grad_sigma[j];
            }
        }
    }
    // ∂/∂log σ = σ ∂/∂σ
    let g_log_sigma: Vec<f64> = g_sigma
        .iter()
        .zip(&pred.sigma)
        .map(|(g, s)| g * s)
        .collect();
    let kl_cross = w.oracle.iter().zip(&values).map(|(wo, v)| wo * v).sum();
    let diag = ExampleDiagnostics {
        energy_at_astar: star.value,
        kl_cross,
        ess_model: w.ess_model,
        ess_oracle: w.ess_oracle,
    };
    Ok((g_mu, g_log_sigma, diag))
}

/// Parameter gradient of the training loss for one example. Randomness
/// (dropout masks, proposal draws, Monte-Carlo noise) comes from substreams
/// keyed by `(cfg.seed, epoch, index)`.
pub fn grad_total(
    model: &EnergyModel,
    x: &[f64],
    y: &[f64],
    a_star: &[f64],
    cfg: &TrainConfig,
    epoch: u64,
    index: u64,
) -> Result<(Gradients, ExampleDiagnostics)> {
    let mut g = Gradients::zeros_like(&model.params);
    let diag = accumulate_total(model, x, y, a_star, cfg, epoch, index, &mut g)?;
    Ok((g, diag))
}

/// [`grad_total`] added into `into`.
#[allow(clippy::too_many_arguments)]
fn accumulate_total(
    model: &EnergyModel,
    x: &[f64],
    y: &[f64],
    a_star: &[f64],
    cfg: &TrainConfig,
    epoch: u64,
    index: u64,
    into: &mut Gradients,
) -> Result<ExampleDiagnostics> {
    let mut drop = RngStream::keyed(cfg.seed, epoch, index, Purpose::Dropout);
    let (pred, cache) = model
        .params
        .forward(x, cfg.train_dropout.then_some(&mut drop))?;
    let mut ps = RngStream::keyed(cfg.seed, epoch, index, Purpose::Proposal);
    let append = !cfg.disable_mle;
    let proposal = propose(a_star, &cfg.proposal, append, &mut ps)?;
    let mc = model.task.draw_mc_samples(&mut RngStream::keyed(
        cfg.seed,
        epoch,
        index,
        Purpose::MonteCarlo,
    ));
    let (g_mu, g_ls, diag) =
        grad_from_samples(model, &pred, y, a_star, &proposal, append, cfg, mc.as_ref())?;
    model
        .params
        .backward_accumulate(&cache, &g_mu, &g_ls, into)?;
    Ok(diag)
}

/// Gaussian negative log-likelihood gradient for one example, added into
/// `into`; returns the loss.
fn accumulate_nll(
    model: &EnergyModel,
    x: &[f64],
    y: &[f64],
    cfg: &TrainConfig,
    epoch: u64,
    index: u64,
    into: &mut Gradients,
) -> Result<f64> {
    let mut drop = RngStream::keyed(cfg.seed, epoch, index, Purpose::Dropout);
    let (pred, cache) = model
        .params
        .forward(x, cfg.train_dropout.then_some(&mut drop))?;
    let nll = gaussian_nll(&pred, y)?;
    model
        .params
        .backward_accumulate(&cache, &nll.grad_mu, &nll.grad_log_sigma, into)?;
    Ok(nll.loss)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Two-stage baseline: Gaussian negative log-likelihood.
    Nll,
    /// Likelihood of optimal decisions plus KL regularizer.
    Energy,
}

/// One line of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_energy_at_astar: Option<f64>,
    pub mean_kl_cross: Option<f64>,
    pub ess_model_mean: Option<f64>,
    pub ess_oracle_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_task_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_nll: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            let line = serde_json::to_string(r).map_err(|e| Error::Parse(e.to_string()))?;
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut records = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line).map_err(|e| Error::Parse(e.to_string()))?);
        }
        Ok(Self { records })
    }
}

/// Mini-batch Adam training for either objective.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: EnergyModel,
    pub adam: AdamState,
    pub cfg: TrainConfig,
    pub objective: Objective,
    pub epochs_done: usize,
    pub history: History,
    scratch: Vec<Gradients>,
}

impl Trainer {
    pub fn new(model: EnergyModel, cfg: TrainConfig, objective: Objective) -> Result<Self> {
        let adam = AdamState::new(&model.params, cfg.learning_rate);
        Self::resume(model, adam, cfg, objective, 0)
    }

    /// Continues from saved optimizer state after `epochs_done` epochs.
    pub fn resume(
        model: EnergyModel,
        adam: AdamState,
        cfg: TrainConfig,
        objective: Objective,
        epochs_done: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        model.validate()?;
        Ok(Self {
            model,
            adam,
            cfg,
            objective,
            epochs_done,
            history: History::default(),
            scratch: Vec::new(),
        })
    }

    fn stream_epoch(&self) -> u64 {
        let e = self.epochs_done as u64;
        match self.objective {
            Objective::Energy => e,
            Objective::Nll => e + NLL_EPOCH_OFFSET,
        }
    }

    /// One pass over `data` in shuffled mini-batches.
    pub fn run_epoch(
        &mut self,
        data: &Dataset,
        decisions: Option<&DecisionDataset>,
    ) -> Result<EpochRecord> {
        check_alignment(data, decisions, self.objective)?;
        let epoch = self.stream_epoch();
        let order =
            RngStream::keyed(self.cfg.seed, epoch, 0, Purpose::Shuffle).permutation(data.len());
        let mut sums = [0.0f64; 5];
        let chunks = self.cfg.batch_size.div_ceil(GRAD_CHUNK);
        if self.scratch.len() != chunks {
            self.scratch = vec![Gradients::zeros_like(&self.model.params); chunks];
        }
        for (b, batch) in order.chunks(self.cfg.batch_size).enumerate() {
            let model = &self.model;
            let cfg = &self.cfg;
            let objective = self.objective;
            // Fixed-size chunks summed in order: the result does not depend
            // on the number of threads.
            let results: Vec<Result<[f64; 5]>> = batch
                .par_chunks(GRAD_CHUNK)
                .zip(self.scratch.par_iter_mut())
                .map(|(chunk, g)| {
                    g.fill_zero();
                    let mut sums = [0.0f64; 5];
                    for &i in chunk {
                        let (x, y) = (&data.x[i], &data.y[i]);
                        let d = match objective {
                            Objective::Nll => {
                                let nll = accumulate_nll(model, x, y, cfg, epoch, i as u64, g);
                                [
                                    0.0,
                                    0.0,
                                    0.0,
                                    0.0,
                                    nll.map_err(|e| example_error(self.epochs_done, i, e))?,
                                ]
                            }
                            Objective::Energy => {
                                let a = &decisions.expect("checked above").a[i];
                                let d = accumulate_total(model, x, y, a, cfg, epoch, i as u64, g)
                                    .map_err(|e| example_error(self.epochs_done, i, e))?;
                                [
                                    d.energy_at_astar,
                                    d.kl_cross,
                                    d.ess_model,
                                    d.ess_oracle,
                                    0.0,
                                ]
                            }
                        };
                        for (s, v) in sums.iter_mut().zip(d) {
                            *s += v;
                        }
                    }
                    Ok(sums)
                })
                .collect();
            let mut total = Gradients::zeros_like(&self.model.params);
            for (r, g) in results.into_iter().zip(&self.scratch) {
                for (s, v) in sums.iter_mut().zip(r?) {
                    *s += v;
                }
                total.add_scaled(g, 1.0);
            }
            total.scale(1.0 / batch.len() as f64);
            if let Some(max) = self.cfg.max_grad_norm {
                let norm = total.norm();
                if norm > max {
                    total.scale(max / norm);
                }
            }
            self.adam.step(&mut self.model.params, &total)?;
            if !self.model.params.is_finite() {
                return Err(Error::Training(format!(
                    "parameters became non-finite at epoch {}, batch {b}",
                    self.epochs_done
                )));
            }
        }
        self.epochs_done += 1;
        let n = data.len() as f64;
        let mean = |k: usize| Some(sums[k] / n);
        let record = match self.objective {
            Objective::Nll => EpochRecord {
                epoch: self.epochs_done,
                mean_energy_at_astar: None,
                mean_kl_cross: None,
                ess_model_mean: None,
                ess_oracle_mean: None,
                eval_task_loss: None,
                mean_nll: mean(4),
            },
            Objective::Energy => EpochRecord {
                epoch: self.epochs_done,
                mean_energy_at_astar: mean(0),
                mean_kl_cross: mean(1),
                ess_model_mean: mean(2),
                ess_oracle_mean: mean(3),
                eval_task_loss: None,
                mean_nll: None,
            },
        };
        Ok(record)
    }

    /// Runs epochs until `cfg.epochs` are done, recording history. With an
    /// evaluation set the mean task loss is recorded after every epoch.
    pub fn train(
        &mut self,
        data: &Dataset,
        decisions: Option<&DecisionDataset>,
        eval: Option<(&Dataset, &SolveConfig)>,
    ) -> Result<()> {
        while self.epochs_done < self.cfg.epochs {
            let mut rec = self.run_epoch(data, decisions)?;
            if let Some((set, solve)) = eval {
                rec.eval_task_loss =
                    Some(eval_task_loss(&self.model, set, solve, self.cfg.seed)?.mean_task_loss);
            }
            self.history.records.push(rec);
        }
        Ok(())
    }
}

fn check_alignment(
    data: &Dataset,
    decisions: Option<&DecisionDataset>,
    objective: Objective,
) -> Result<()> {
    data.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if objective == Objective::Energy {
        let d = decisions
            .ok_or_else(|| Error::Config("energy training needs the decision dataset".into()))?;
        if d.len() != data.len() || d.x != data.x {
            return Err(Error::Config(
                "decision dataset is not index-aligned with the training set".into(),
            ));
        }
    }
    Ok(())
}

/// Trains with the energy objective from `model`, returning the trained model
/// and its history.
pub fn train(
    model: EnergyModel,
    data: &Dataset,
    decisions: &DecisionDataset,
    cfg: &TrainConfig,
) -> Result<(EnergyModel, History)> {
    let mut t = Trainer::new(model, cfg.clone(), Objective::Energy)?;
    t.train(data, Some(decisions), None)?;
    Ok((t.model, t.history))
}

/// Two-stage baseline: fits the predictor by Gaussian likelihood only.
pub fn train_two_stage(
    model: EnergyModel,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(EnergyModel, History)> {
    let mut t = Trainer::new(model, cfg.clone(), Objective::Nll)?;
    t.train(data, None, None)?;
    Ok((t.model, t.history))
}
