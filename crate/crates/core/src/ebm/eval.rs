//! Decision-quality evaluation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EnergyModel;
use crate::error::{Error, Result};
use crate::numerics::{Purpose, RngStream};
use crate::predictor::gaussian_nll;
use crate::solver::{
    argmin_expected_cost, argmin_true_cost, SolveConfig, SolveResult, SolveStatus,
};
use crate::task::Dataset;

/// Test-time decision for `x`: minimizes the expected cost under the
/// model's prediction. In Monte-Carlo mode the noise set is drawn from the
/// substream `(seed, 0, index)`.
pub fn predict_decision(
    model: &EnergyModel,
    x: &[f64],
    cfg: &SolveConfig,
    seed: u64,
    index: u64,
) -> Result<SolveResult> {
    let pred = model.params.predict(x)?;
    let mc = model
        .task
        .draw_mc_samples(&mut RngStream::keyed(seed, 0, index, Purpose::MonteCarlo));
    argmin_expected_cost(&model.task, &pred, cfg, mc.as_ref())
}

/// Outcome for one test example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleEval {
    pub index: usize,
    /// `f(y, a*(x))`.
    pub task_loss: f64,
    /// Best realized cost found for the true label.
    pub optimal_cost: f64,
    pub regret: f64,
    pub nll: f64,
    /// Solver hit its iteration cap or failed; excluded from the means.
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub examples: Vec<ExampleEval>,
    pub mean_task_loss: f64,
    pub std_task_loss: f64,
    pub mean_regret: f64,
    pub mean_nll: f64,
    pub flagged: usize,
}

impl EvalReport {
    /// `"mean ± std"` of the task loss over included examples.
    pub fn summary(&self) -> String {
        format!("{:.4} ± {:.4}", self.mean_task_loss, self.std_task_loss)
    }
}

fn eval_one(
    model: &EnergyModel,
    x: &[f64],
    y: &[f64],
    cfg: &SolveConfig,
    seed: u64,
    index: usize,
) -> Result<ExampleEval> {
    let pred = model.params.predict(x)?;
    let nll = gaussian_nll(&pred, y)?.loss;
    let decision = match predict_decision(model, x, cfg, seed, index as u64) {
        Ok(r) if r.status != SolveStatus::IterationCap => r.decision,
        Ok(_) | Err(Error::Numerical(_)) => {
            return Ok(ExampleEval {
                index,
                task_loss: f64::NAN,
                optimal_cost: f64::NAN,
                regret: f64::NAN,
                nll,
                flagged: true,
            })
        }
        Err(e) => return Err(e),
    };
    let task_loss = model.task.cost(y, &decision)?;
    // The realized-cost optimum is the better of two solves, from the label
    // and from the predicted decision, so regret cannot go negative through
    // an inexact oracle.
    let oracle_cfg = SolveConfig::preprocessing();
    let from_label = argmin_true_cost(&model.task, y, &oracle_cfg)?;
    let from_decision = crate::solver::minimize(
        |a: &[f64]| model.task.cost_grads(y, a).map(|(f, g, _)| (f, g)),
        |a: &[f64]| model.task.project(a),
        &decision,
        &oracle_cfg,
    )?;
    let optimal_cost = from_label.cost.min(from_decision.cost);
    Ok(ExampleEval {
        index,
        task_loss,
        optimal_cost,
        regret: task_loss - optimal_cost,
        nll,
        flagged: false,
    })
}

/// Mean realized task loss of the model's decisions on `test`, with regret
/// against the realized-cost optimum and predictive NLL.
pub fn eval_task_loss(
    model: &EnergyModel,
    test: &Dataset,
    cfg: &SolveConfig,
    seed: u64,
) -> Result<EvalReport> {
    test.validate()?;
    if test.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let examples = (0..test.len())
        .into_par_iter()
        .map(|i| eval_one(model, &test.x[i], &test.y[i], cfg, seed, i))
        .collect::<Result<Vec<_>>>()?;
    let kept: Vec<&ExampleEval> = examples.iter().filter(|e| !e.flagged).collect();
    let flagged = examples.len() - kept.len();
    if kept.is_empty() {
        return Err(Error::Numerical(
            "every evaluation solve was flagged".into(),
        ));
    }
    let n = kept.len() as f64;
    let mean_task_loss = kept.iter().map(|e| e.task_loss).sum::<f64>() / n;
    let var = kept
        .iter()
        .map(|e| (e.task_loss - mean_task_loss).powi(2))
        .sum::<f64>()
        / (n - 1.0).max(1.0);
    Ok(EvalReport {
        mean_task_loss,
        std_task_loss: var.sqrt(),
        mean_regret: kept.iter().map(|e| e.regret).sum::<f64>() / n,
        mean_nll: kept.iter().map(|e| e.nll).sum::<f64>() / n,
        flagged,
        examples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::{Layer, MlpParams, LOG_SIGMA_MIN};
    use crate::task::{gen_synthetic2d_dataset, PowerTaskParams, Synthetic2dParams, TaskSpec};

    /// A network whose mean head is the identity on its input (through a
    /// ReLU layer holding `x` and `-x`) and whose σ sits at the floor.
    fn identity_model(task: TaskSpec, dim: usize) -> EnergyModel {
        let mut hidden = Layer::zeros(dim, 2 * dim);
        for i in 0..dim {
            hidden.weights[i * dim + i] = 1.0;
            hidden.weights[(dim + i) * dim + i] = -1.0;
        }
        let mut head = Layer::zeros(2 * dim, 2 * dim);
        for i in 0..dim {
            head.weights[i * 2 * dim + i] = 1.0;
            head.weights[i * 2 * dim + dim + i] = -1.0;
            head.bias[dim + i] = LOG_SIGMA_MIN;
        }
        let params = MlpParams {
            layers: vec![hidden, head],
            dropout: 0.0,
            label_dim: dim,
        };
        EnergyModel::new(params, task, 1.0).unwrap()
    }

    #[test]
    fn perfect_predictor_regret_matches_first_order_oracle() {
        // With μ = y and σ at the floor the expected-cost minimizer is not y
        // exactly: per dimension it solves 3(2Φ((a - y)/σ) - 1) + (a - 1.5) = 0.
        // Regret is therefore O(σ); compare it against bisection.
        let task = TaskSpec::synthetic2d(Synthetic2dParams::default());
        let data = gen_synthetic2d_dataset(50, 0.0, &mut RngStream::keyed(3, 0, 0, Purpose::Data))
            .unwrap();
        let test = Dataset {
            x: data.y.clone(),
            y: data.y,
        };
        let m = identity_model(task.clone(), 2);
        let r = eval_task_loss(&m, &test, &SolveConfig::inference(), 0).unwrap();
        assert_eq!(r.flagged, 0);
        let s = crate::predictor::SIGMA_FLOOR;
        for e in &r.examples {
            let y = &test.y[e.index];
            let a: Vec<f64> = y
                .iter()
                .map(|&yi| {
                    let g = |a: f64| {
                        3.0 * (2.0 * crate::numerics::std_normal_cdf((a - yi) / s) - 1.0)
                            + (a - 1.5)
                    };
                    let (mut lo, mut hi) = (yi - 1.0, yi + 1.0);
                    for _ in 0..200 {
                        let mid = 0.5 * (lo + hi);
                        if g(mid) < 0.0 {
                            lo = mid
                        } else {
                            hi = mid
                        }
                    }
                    0.5 * (lo + hi)
                })
                .collect();
            let want = task.cost(y, &a).unwrap() - task.cost(y, y).unwrap();
            assert!((e.regret - want).abs() < 1e-6, "{} vs {want}", e.regret);
            assert!(e.regret >= -1e-9 && e.regret < 3.0 * s);
        }
    }

    #[test]
    fn regret_is_non_negative_for_power() {
        let task = TaskSpec::power(PowerTaskParams::paper(6));
        let mut s = RngStream::keyed(4, 0, 0, Purpose::Test);
        let y: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..6).map(|_| s.uniform_range(0.5, 3.0)).collect())
            .collect();
        let x: Vec<Vec<f64>> = y
            .iter()
            .map(|v| v.iter().map(|u| u + 0.3 * s.standard_normal()).collect())
            .collect();
        let m = identity_model(task, 6);
        let r = eval_task_loss(&m, &Dataset { x, y }, &SolveConfig::inference(), 0).unwrap();
        assert!(r.examples.iter().all(|e| e.regret >= -1e-9));
        assert!(r.summary().contains('±'));
    }
}
