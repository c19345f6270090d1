//! Gaussian-mixture proposal and self-normalized importance weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{effective_sample_size, normalize_log_weights, RngStream, LN_2PI};

/// `π(a | x) = (1/K) Σ_k N(a; a*, σ_k² I)` with `M` draws per example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalConfig {
    /// Per-component isotropic standard deviations; `K = sigmas.len()`.
    pub sigmas: Vec<f64>,
    /// Draws per example (`M`).
    pub samples: usize,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self {
            sigmas: vec![0.02, 0.05, 0.1],
            samples: 512,
        }
    }
}

impl ProposalConfig {
    pub fn components(&self) -> usize {
        self.sigmas.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigmas.is_empty() {
            return Err(Error::Config(
                "proposal needs at least one component".into(),
            ));
        }
        if self.sigmas.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::Config("proposal sigmas must be positive".into()));
        }
        if self.samples < 2 {
            return Err(Error::Config("proposal needs at least 2 samples".into()));
        }
        Ok(())
    }
}

/// Proposal draws with their log densities.
#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    pub samples: Vec<Vec<f64>>,
    pub log_pi: Vec<f64>,
}

/// `log π(a)` for the mixture centred at `center`.
pub fn log_proposal_density(a: &[f64], center: &[f64], cfg: &ProposalConfig) -> Result<f64> {
    let r2: f64 = a.iter().zip(center).map(|(x, c)| (x - c).powi(2)).sum();
    Ok(MixtureDensity::new(cfg, a.len()).log_density(r2))
}

/// Per-component constants of the isotropic mixture in dimension `d`.
struct MixtureDensity {
    /// `(log normalizer - log K, 1 / (2 σ²))` per component.
    comps: Vec<(f64, f64)>,
}

impl MixtureDensity {
    fn new(cfg: &ProposalConfig, d: usize) -> Self {
        let d = d as f64;
        let log_k = (cfg.components() as f64).ln();
        let comps = cfg
            .sigmas
            .iter()
            .map(|s| (-0.5 * d * (LN_2PI + 2.0 * s.ln()) - log_k, 0.5 / (s * s)))
            .collect();
        Self { comps }
    }

    /// Log density at squared distance `r2` from the centre.
    fn log_density(&self, r2: f64) -> f64 {
        let max = self
            .comps
            .iter()
            .map(|(c, h)| c - h * r2)
            .fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = self
            .comps
            .iter()
            .map(|(c, h)| (c - h * r2 - max).exp())
            .sum();
        max + sum.ln()
    }
}

/// Draws `M` samples: a uniformly chosen component, then isotropic noise.
/// When `append_center` is set the centre itself is added as sample `M + 1`.
pub fn propose(
    center: &[f64],
    cfg: &ProposalConfig,
    append_center: bool,
    stream: &mut RngStream,
) -> Result<Proposal> {
    cfg.validate()?;
    let k = cfg.components();
    let n = cfg.samples + usize::from(append_center);
    let density = MixtureDensity::new(cfg, center.len());
    let mut samples = Vec::with_capacity(n);
    let mut log_pi = Vec::with_capacity(n);
    for _ in 0..cfg.samples {
        let s = cfg.sigmas[stream.below(k)];
        let mut r2 = 0.0;
        let a: Vec<f64> = center
            .iter()
            .map(|c| {
                let e = s * stream.standard_normal();
                r2 += e * e;
                c + e
            })
            .collect();
        log_pi.push(density.log_density(r2));
        samples.push(a);
    }
    if append_center {
        log_pi.push(density.log_density(0.0));
        samples.push(center.to_vec());
    }
    Ok(Proposal { samples, log_pi })
}

/// Normalized importance weights for the model (`w̃`) and the oracle
/// posterior (`ŵ`).
#[derive(Clone, Debug, PartialEq)]
pub struct SnisWeights {
    pub model: Vec<f64>,
    pub oracle: Vec<f64>,
    pub ess_model: f64,
    pub ess_oracle: f64,
}

/// `w̃ ∝ exp(-E_m) / π_m` over all samples and `ŵ ∝ exp(-τ f_m) / π_m` over
/// the first `oracle_costs.len()` samples (an appended anchor sample has no
/// oracle weight). `energies` are already scaled by `τ`.
pub fn snis_weights(
    energies: &[f64],
    oracle_costs: &[f64],
    log_pi: &[f64],
    tau: f64,
) -> Result<SnisWeights> {
    if energies.len() != log_pi.len() || oracle_costs.len() > energies.len() {
        return Err(Error::Domain(format!(
            "weight inputs disagree: {} energies, {} costs, {} log densities",
            energies.len(),
            oracle_costs.len(),
            log_pi.len()
        )));
    }
    let lw_model: Vec<f64> = energies.iter().zip(log_pi).map(|(e, l)| -e - l).collect();
    let lw_oracle: Vec<f64> = oracle_costs
        .iter()
        .zip(log_pi)
        .map(|(f, l)| -tau * f - l)
        .collect();
    let model = normalize_log_weights(&lw_model)?;
    let oracle = if oracle_costs.is_empty() {
        vec![]
    } else {
        normalize_log_weights(&lw_oracle)?
    };
    let ess_oracle = if oracle.is_empty() {
        0.0
    } else {
        effective_sample_size(&oracle)
    };
    Ok(SnisWeights {
        ess_model: effective_sample_size(&model),
        ess_oracle,
        model,
        oracle,
    })
}
