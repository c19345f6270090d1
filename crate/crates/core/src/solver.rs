//! Projected-gradient decision solver and a brute-force grid oracle.
//!
//! The solver minimizes either the realized cost `f(y, ·)` or the expected
//! cost under a predictive Gaussian over the task's feasible set. Each
//! iteration takes a Barzilai-Borwein trial step (the configured step size on
//! the first iteration), projects, and halves the step until the Armijo
//! condition holds. Accepted steps therefore never increase the objective.
//!
//! Realized costs are piecewise smooth. At a kink where no projected step
//! decreases the objective the line search runs out of step length; this is
//! reported as [`SolveStatus::Stalled`] and the current point is returned.

use crate::error::{Error, Result};
use crate::numerics::{Purpose, RngStream};
use crate::predictor::GaussianPrediction;
use crate::task::{McSamples, TaskSpec};

const ARMIJO_C: f64 = 1e-4;
const MIN_STEP: f64 = 1e-14;
const MAX_STEP: f64 = 1e3;
/// Accepted steps that raise the objective, in a row, before giving up.
const DIVERGENCE_STREAK: usize = 10;
/// Standard deviation of restart perturbations around the initial point.
const RESTART_SCALE: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    pub max_iters: usize,
    /// First trial step.
    pub step_size: f64,
    /// Line-search shrink factor in `(0, 1)`.
    pub backoff: f64,
    /// Stop when `‖a - P(a - ∇)‖ ≤ tolerance`.
    pub tolerance: f64,
    /// Extra solves from perturbed starts; the cheapest result wins.
    pub restarts: usize,
}

impl SolveConfig {
    /// Settings for building the decision dataset from true labels.
    pub fn preprocessing() -> Self {
        Self {
            max_iters: 5000,
            step_size: 0.1,
            backoff: 0.5,
            tolerance: 1e-7,
            restarts: 0,
        }
    }

    /// Settings for test-time decisions.
    pub fn inference() -> Self {
        Self {
            max_iters: 2000,
            step_size: 0.1,
            backoff: 0.5,
            tolerance: 1e-5,
            restarts: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::Config("solver max_iters must be at least 1".into()));
        }
        if !(self.tolerance > 0.0) || !self.tolerance.is_finite() {
            return Err(Error::Config("solver tolerance must be positive".into()));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::Config("solver step_size must be positive".into()));
        }
        if !(self.backoff > 0.0 && self.backoff < 1.0) {
            return Err(Error::Config("solver backoff must be in (0, 1)".into()));
        }
        Ok(())
    }
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self::inference()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    /// Projected-gradient norm fell below the tolerance.
    Converged,
    /// No step length satisfied the Armijo condition (a kink of a
    /// nonsmooth objective, or round-off at the optimum).
    Stalled,
    IterationCap,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult {
    pub decision: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    /// Objective at the start point followed by every accepted iterate.
    pub trace: Vec<f64>,
}

impl SolveResult {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    /// True when the iteration cap stopped the solve.
    pub fn flagged(&self) -> bool {
        self.status == SolveStatus::IterationCap
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_finite(v: f64, g: &[f64], a: &[f64]) -> Result<()> {
    if !v.is_finite() || g.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite objective or gradient at {a:?}"
        )));
    }
    Ok(())
}

/// Projected gradient with Armijo backtracking from `start`.
///
/// `objective` returns the value and gradient; `project` maps onto the
/// feasible set. The start point is projected first.
pub fn minimize<F, P>(
    objective: F,
    project: P,
    start: &[f64],
    cfg: &SolveConfig,
) -> Result<SolveResult>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
    P: Fn(&[f64]) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    let mut a = project(start)?;
    let (mut f, mut g) = objective(&a)?;
    check_finite(f, &g, &a)?;
    let mut trace = vec![f];
    let mut step = cfg.step_size;
    let mut rising = 0;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;

    for iter in 0..cfg.max_iters {
        let probe: Vec<f64> = a.iter().zip(&g).map(|(x, d)| x - d).collect();
        let pg = project(&probe)?;
        let pg_norm = pg
            .iter()
            .zip(&a)
            .map(|(p, x)| (p - x).powi(2))
            .sum::<f64>()
            .sqrt();
        if pg_norm <= cfg.tolerance {
            return Ok(SolveResult {
                decision: a,
                cost: f,
                iterations: iter,
                status: SolveStatus::Converged,
                trace,
            });
        }

        if let Some((pa, pgrad)) = &prev {
            let s: Vec<f64> = a.iter().zip(pa).map(|(x, y)| x - y).collect();
            let yv: Vec<f64> = g.iter().zip(pgrad).map(|(x, y)| x - y).collect();
            let sy = dot(&s, &yv);
            step = if sy > 0.0 {
                (dot(&s, &s) / sy).clamp(MIN_STEP, MAX_STEP)
            } else {
                cfg.step_size
            };
        }

        let mut t = step;
        let accepted = loop {
            let trial: Vec<f64> = a.iter().zip(&g).map(|(x, d)| x - t * d).collect();
            let cand = project(&trial)?;
            let (fc, gc) = objective(&cand)?;
            let dir: Vec<f64> = cand.iter().zip(&a).map(|(c, x)| c - x).collect();
            if fc.is_finite() && fc <= f + ARMIJO_C * dot(&g, &dir) {
                check_finite(fc, &gc, &cand)?;
                break Some((cand, fc, gc));
            }
            t *= cfg.backoff;
            if t < MIN_STEP {
                break None;
            }
        };
        let Some((cand, fc, gc)) = accepted else {
            return Ok(SolveResult {
                decision: a,
                cost: f,
                iterations: iter,
                status: SolveStatus::Stalled,
                trace,
            });
        };
        rising = if fc > f { rising + 1 } else { 0 };
        if rising >= DIVERGENCE_STREAK {
            return Err(Error::Numerical(format!(
                "solver diverged: objective rose for {DIVERGENCE_STREAK} consecutive steps"
            )));
        }
        prev = Some((
            std::mem::replace(&mut a, cand),
            std::mem::replace(&mut g, gc),
        ));
        f = fc;
        trace.push(f);
    }
    Ok(SolveResult {
        decision: a,
        cost: f,
        iterations: cfg.max_iters,
        status: SolveStatus::IterationCap,
        trace,
    })
}

/// Runs [`minimize`] from `start` and from `cfg.restarts` perturbed starts,
/// returning the lowest-cost result.
fn minimize_with_restarts<F, P>(
    objective: F,
    project: P,
    start: &[f64],
    cfg: &SolveConfig,
) -> Result<SolveResult>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
    P: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut best = minimize(&objective, &project, start, cfg)?;
    for r in 0..cfg.restarts {
        let mut stream = RngStream::keyed(0, 0, r as u64, Purpose::Restart);
        let s: Vec<f64> = start
            .iter()
            .map(|v| v + RESTART_SCALE * stream.standard_normal())
            .collect();
        let res = minimize(&objective, &project, &s, cfg)?;
        if res.cost < best.cost {
            best = res;
        }
    }
    Ok(best)
}

/// `argmin_a f(y, a)` over the feasible set, started at `y`.
pub fn argmin_true_cost(task: &TaskSpec, y: &[f64], cfg: &SolveConfig) -> Result<SolveResult> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("label must be finite".into()));
    }
    let obj = |a: &[f64]| task.cost_grads(y, a).map(|(f, ga, _)| (f, ga));
    minimize_with_restarts(obj, |a: &[f64]| task.project(a), y, cfg)
}

/// `argmin_a E_{N(μ, σ)} f(y, a)` over the feasible set, started at `μ`.
///
/// In Monte-Carlo mode `mc` must hold the noise set, which is reused for
/// every evaluation so the solve is a deterministic sample-average problem.
pub fn argmin_expected_cost(
    task: &TaskSpec,
    pred: &GaussianPrediction,
    cfg: &SolveConfig,
    mc: Option<&McSamples>,
) -> Result<SolveResult> {
    let obj = |a: &[f64]| task.expected_cost(pred, a, mc).map(|e| (e.value, e.grad_a));
    minimize_with_restarts(obj, |a: &[f64]| task.project(a), &pred.mu, cfg)
}

/// Objective minimized by [`grid_oracle`].
#[derive(Clone, Debug)]
pub enum OracleObjective<'a> {
    TrueCost(&'a [f64]),
    ExpectedCost(&'a GaussianPrediction),
}

fn grid_axis(lo: f64, hi: f64, resolution: f64) -> Vec<f64> {
    if hi <= lo {
        return vec![lo];
    }
    let n = ((hi - lo) / resolution).ceil() as usize;
    (0..=n)
        .map(|i| (lo + i as f64 * resolution).min(hi))
        .collect()
}

/// Exhaustive grid minimizer with spacing `resolution` inside `bounds`.
///
/// Decisions of dimension at most 2 get a full grid restricted to feasible
/// points. Higher dimensions are minimized one coordinate at a time, which is
/// exact for separable objectives; if the result is infeasible (a binding
/// ramp constraint couples coordinates) the oracle refuses with
/// [`Error::Unsupported`]. Used as an independent reference in tests.
pub fn grid_oracle(
    task: &TaskSpec,
    objective: &OracleObjective<'_>,
    bounds: &[(f64, f64)],
    resolution: f64,
) -> Result<Vec<f64>> {
    let d = task.decision_dim();
    if bounds.len() != d {
        return Err(Error::Domain(
            "bounds must have one interval per decision dimension".into(),
        ));
    }
    if !(resolution > 0.0) {
        return Err(Error::Config("grid resolution must be positive".into()));
    }
    let eval = |a: &[f64]| -> Result<f64> {
        match objective {
            OracleObjective::TrueCost(y) => task.cost(y, a),
            OracleObjective::ExpectedCost(pred) => {
                task.closed_form_expected_cost(pred, a).map(|e| e.value)
            }
        }
    };
    let axes: Vec<Vec<f64>> = bounds
        .iter()
        .map(|&(lo, hi)| grid_axis(lo, hi, resolution))
        .collect();
    let separable = matches!(task.kind, crate::task::TaskKind::Synthetic2d(_));

    if d <= 2 && !separable {
        let mut best = (f64::INFINITY, vec![]);
        let second: &[f64] = if d == 2 { &axes[1] } else { &[0.0] };
        for &u in &axes[0] {
            for &v in second {
                let a = if d == 2 { vec![u, v] } else { vec![u] };
                if !task.is_feasible(&a, 1e-12) {
                    continue;
                }
                let c = eval(&a)?;
                if c < best.0 {
                    best = (c, a);
                }
            }
        }
        if best.1.is_empty() {
            return Err(Error::Unsupported(
                "no feasible grid point inside the bounds".into(),
            ));
        }
        return Ok(best.1);
    }

    let mut a: Vec<f64> = bounds.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect();
    for i in 0..d {
        let mut best = (f64::INFINITY, a[i]);
        for &u in &axes[i] {
            a[i] = u;
            let c = eval(&a)?;
            if c < best.0 {
                best = (c, u);
            }
        }
        a[i] = best.1;
    }
    if !task.is_feasible(&a, 1e-12) {
        return Err(Error::Unsupported(
            "coordinate-wise grid minimizer is infeasible; the objective is not separable here"
                .into(),
        ));
    }
    Ok(a)
}
