//! Run configuration (TOML).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use soebm_core::ebm::{ProposalConfig, POWER_TAU, SYNTHETIC_TAU};
use soebm_core::predictor::DEFAULT_INIT_SIGMA;
use soebm_core::task::{PowerGenConfig, PowerTaskParams, Synthetic2dParams};
use soebm_core::{Error, ExpectationMode, Result, SolveConfig, TaskSpec, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSelector {
    Synthetic2d,
    Power,
}

/// What `train` fits after the data are in place.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Gaussian likelihood only.
    TwoStage,
    #[default]
    Soebm,
    /// KL term only.
    AblationNoMle,
    /// Likelihood of optimal decisions only.
    AblationNoKl,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::TwoStage => "two-stage",
            Mode::Soebm => "soebm",
            Mode::AblationNoMle => "ablation-no-mle",
            Mode::AblationNoKl => "ablation-no-kl",
        }
    }

    pub fn uses_energy(self) -> bool {
        self != Mode::TwoStage
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Examples before splitting.
    pub n: usize,
    pub val_frac: f64,
    pub test_frac: f64,
    /// Label noise of the synthetic task.
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default)]
    pub power: PowerGenConfig,
}

fn default_noise() -> f64 {
    0.03
}

/// Cost coefficients; the power horizon comes from the data generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    #[serde(default = "default_gamma_under")]
    pub gamma_under: f64,
    #[serde(default = "default_gamma_over")]
    pub gamma_over: f64,
    #[serde(default = "default_ramp")]
    pub ramp: f64,
    #[serde(default)]
    pub synthetic: Synthetic2dParams,
    #[serde(default = "default_expectation")]
    pub expectation: ExpectationMode,
}

fn default_gamma_under() -> f64 {
    PowerTaskParams::paper(1).gamma_under
}

fn default_gamma_over() -> f64 {
    PowerTaskParams::paper(1).gamma_over
}

fn default_ramp() -> f64 {
    PowerTaskParams::paper(1).ramp
}

fn default_expectation() -> ExpectationMode {
    ExpectationMode::ClosedForm
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            gamma_under: default_gamma_under(),
            gamma_over: default_gamma_over(),
            ramp: default_ramp(),
            synthetic: Synthetic2dParams::default(),
            expectation: default_expectation(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    #[serde(default = "default_init_sigma")]
    pub init_sigma: f64,
}

fn default_init_sigma() -> f64 {
    DEFAULT_INIT_SIGMA
}

/// The two-stage (likelihood) fit, also used as SO-EBM initialization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default = "default_true")]
    pub train_dropout: bool,
}

fn default_true() -> bool {
    true
}

/// Energy-objective training. The ablation flags of [`TrainConfig`] follow
/// from the mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyTrainConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Defaults per task when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_grad_norm: Option<f64>,
    #[serde(default = "default_true")]
    pub train_dropout: bool,
    /// Record the validation task loss after every epoch.
    #[serde(default)]
    pub track_validation: bool,
    #[serde(default)]
    pub proposal: ProposalConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandscapeConfig {
    pub index: usize,
    /// Half-width of the displacement range along each direction.
    pub range: f64,
    /// Points per axis.
    pub resolution: usize,
}

impl Default for LandscapeConfig {
    fn default() -> Self {
        Self {
            index: 0,
            range: 2.0,
            resolution: 41,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub task: TaskSelector,
    pub seed: u64,
    #[serde(default)]
    pub mode: Mode,
    /// Skip the likelihood pretraining before energy training.
    #[serde(default)]
    pub cold_start: bool,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub cost: CostConfig,
    pub network: NetworkConfig,
    pub pretrain: PretrainConfig,
    pub train: EnergyTrainConfig,
    #[serde(default = "SolveConfig::inference")]
    pub solve: SolveConfig,
    #[serde(default = "SolveConfig::preprocessing")]
    pub preprocess: SolveConfig,
    #[serde(default)]
    pub landscape: LandscapeConfig,
}

impl RunConfig {
    /// Paper settings for `task`, writing under `out_dir`.
    pub fn defaults(task: TaskSelector, out_dir: impl Into<PathBuf>) -> Self {
        let data = match task {
            TaskSelector::Synthetic2d => DataConfig {
                n: 500,
                val_frac: 0.0,
                test_frac: 0.2,
                noise: default_noise(),
                power: PowerGenConfig::default(),
            },
            TaskSelector::Power => DataConfig {
                n: 600,
                val_frac: 0.1,
                test_frac: 0.2,
                noise: default_noise(),
                power: PowerGenConfig::default(),
            },
        };
        let paper = TrainConfig::paper(1.0);
        Self {
            schema_version: SCHEMA_VERSION,
            task,
            seed: 0,
            mode: Mode::Soebm,
            cold_start: false,
            out_dir: out_dir.into(),
            data,
            cost: CostConfig::default(),
            network: NetworkConfig {
                hidden: vec![200, 200],
                dropout: 0.2,
                init_sigma: DEFAULT_INIT_SIGMA,
            },
            pretrain: PretrainConfig {
                epochs: 100,
                batch_size: 32,
                learning_rate: 1e-3,
                train_dropout: true,
            },
            train: EnergyTrainConfig {
                lambda: paper.lambda,
                epochs: paper.epochs,
                batch_size: paper.batch_size,
                learning_rate: paper.learning_rate,
                tau: None,
                max_grad_norm: None,
                train_dropout: true,
                track_validation: false,
                proposal: paper.proposal,
            },
            solve: SolveConfig::inference(),
            preprocess: SolveConfig::preprocessing(),
            landscape: LandscapeConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let d = &self.data;
        if d.n < 2 {
            return Err(Error::Config("data.n must be at least 2".into()));
        }
        let fracs_ok = (0.0..1.0).contains(&d.val_frac)
            && (0.0..1.0).contains(&d.test_frac)
            && d.val_frac + d.test_frac < 1.0;
        if !fracs_ok {
            return Err(Error::Config(
                "data.val_frac and data.test_frac must be in [0, 1) and sum below 1".into(),
            ));
        }
        let n_test = (d.n as f64 * d.test_frac).round() as usize;
        let n_val = (d.n as f64 * d.val_frac).round() as usize;
        if n_test == 0 || n_test + n_val >= d.n {
            return Err(Error::Config(
                "the split must leave non-empty train and test sets".into(),
            ));
        }
        if !(d.noise >= 0.0) || !d.noise.is_finite() {
            return Err(Error::Config(
                "data.noise must be a finite non-negative number".into(),
            ));
        }
        if self.task == TaskSelector::Power {
            let p = &d.power;
            if p.horizon == 0 || p.feature_dim < p.informative_features() {
                return Err(Error::Config(format!(
                    "data.power.feature_dim must be at least {} for horizon {}",
                    p.informative_features(),
                    p.horizon
                )));
            }
            let finite = [
                p.base_load,
                p.daily_amplitude,
                p.weekend_drop,
                p.noise_ar,
                p.noise_std,
            ];
            if finite.iter().any(|v| !v.is_finite())
                || !(p.noise_std >= 0.0)
                || !(p.noise_ar.abs() < 1.0)
            {
                return Err(Error::Config(
                    "data.power generator settings out of range".into(),
                ));
            }
        }
        let n = &self.network;
        if n.hidden.is_empty() || n.hidden.contains(&0) {
            return Err(Error::Config(
                "network.hidden needs at least one positive width".into(),
            ));
        }
        if !(0.0..1.0).contains(&n.dropout) {
            return Err(Error::Config("network.dropout must be in [0, 1)".into()));
        }
        if !(n.init_sigma > 0.0) || !n.init_sigma.is_finite() {
            return Err(Error::Config("network.init_sigma must be positive".into()));
        }
        let p = &self.pretrain;
        if p.batch_size == 0 || !(p.learning_rate > 0.0) || !p.learning_rate.is_finite() {
            return Err(Error::Config(
                "pretrain.batch_size and pretrain.learning_rate must be positive".into(),
            ));
        }
        let l = &self.landscape;
        if l.resolution < 2 || !(l.range > 0.0) || !l.range.is_finite() {
            return Err(Error::Config(
                "landscape.resolution must be at least 2 and landscape.range positive".into(),
            ));
        }
        self.solve.validate()?;
        self.preprocess.validate()?;
        self.task_spec()?.validate()?;
        self.train_config()?.validate()?;
        Ok(())
    }

    pub fn task_spec(&self) -> Result<TaskSpec> {
        let spec = match self.task {
            TaskSelector::Synthetic2d => TaskSpec::synthetic2d(self.cost.synthetic.clone()),
            TaskSelector::Power => TaskSpec::power(PowerTaskParams {
                gamma_under: self.cost.gamma_under,
                gamma_over: self.cost.gamma_over,
                ramp: self.cost.ramp,
                horizon: self.data.power.horizon,
            }),
        };
        Ok(spec.with_expectation(self.cost.expectation))
    }

    pub fn tau(&self) -> f64 {
        self.train.tau.unwrap_or(match self.task {
            TaskSelector::Synthetic2d => SYNTHETIC_TAU,
            TaskSelector::Power => POWER_TAU,
        })
    }

    /// Energy-training settings for the configured mode.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        Ok(TrainConfig {
            lambda: t.lambda,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            proposal: t.proposal.clone(),
            seed: self.seed,
            disable_mle: self.mode == Mode::AblationNoMle,
            disable_kl: self.mode == Mode::AblationNoKl,
            tau: self.tau(),
            max_grad_norm: t.max_grad_norm,
            train_dropout: t.train_dropout,
        })
    }

    /// Likelihood pretraining settings; the energy-only fields are unused.
    pub fn pretrain_config(&self) -> TrainConfig {
        let p = &self.pretrain;
        TrainConfig {
            epochs: p.epochs,
            batch_size: p.batch_size,
            learning_rate: p.learning_rate,
            seed: self.seed,
            train_dropout: p.train_dropout,
            ..TrainConfig::paper(self.tau())
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.out_dir.join("data")
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(self.mode.name())
    }
}
