//! Pipeline behind the `soebm` binary: data generation, preprocessing,
//! training, evaluation and landscape export.
//!
//! Everything lives under the configured output directory:
//!
//! ```text
//! data/{train,val,test}.csv         split datasets (empty splits are not written)
//! data/decisions.csv, decisions.key preprocessed optimal decisions and their cache key
//! <mode>/model.ckpt, run.key        checkpoint after the latest epoch
//! <mode>/history.jsonl              one record per epoch
//! <mode>/timing.json                wall-clock seconds per epoch (not reproducible)
//! <mode>/eval.csv, eval.json        per-example and aggregate metrics
//! <mode>/paired.csv                 per-example difference to the two-stage model
//! <mode>/landscape_<i>.csv          energy and cost over a random 2-D slice
//! ```
//!
//! Energy modes start from the two-stage model in `two-stage/`, training it
//! first when it is missing or was produced under a different config.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod landscape;

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use soebm_core::ebm::{eval_task_loss, EpochRecord, ExampleEval, Objective};
use soebm_core::numerics::{Purpose, RngStream};
use soebm_core::solver::argmin_true_cost;
use soebm_core::task::{gen_power_dataset, gen_synthetic2d_dataset};
use soebm_core::{
    Checkpoint, Dataset, DecisionDataset, EnergyModel, Error, EvalReport, History, MlpParams,
    Result, TrainConfig, Trainer,
};

pub use config::{Mode, RunConfig, TaskSelector};
pub use landscape::LandscapeGrid;

/// Process exit code for an error: 2 config/usage, 3 numerical, 4 I/O.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Domain(_) | Error::Unsupported(_) => 2,
        Error::Numerical(_) | Error::Training(_) => 3,
        Error::Io(_) | Error::Parse(_) => 4,
    }
}

pub const TRAIN_CSV: &str = "train.csv";
pub const VAL_CSV: &str = "val.csv";
pub const TEST_CSV: &str = "test.csv";
pub const DECISIONS_CSV: &str = "decisions.csv";
pub const DECISIONS_KEY: &str = "decisions.key";
pub const CHECKPOINT: &str = "model.ckpt";
pub const RUN_KEY: &str = "run.key";
pub const HISTORY: &str = "history.jsonl";
pub const TIMING: &str = "timing.json";

fn hex_digest(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Canonical bytes of config sections for cache keys.
fn key_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    serde_json::to_vec(v).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
}

/// Writes through a temporary file so an interrupted run never leaves a
/// truncated file behind.
fn write_atomic(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    write(&tmp)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn remove_if_exists(path: &Path) -> Result<()> {
    match fs::remove_file(path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e.into()),
        _ => Ok(()),
    }
}

fn read_key(path: &Path) -> Option<String> {
    fs::read_to_string(path).ok().map(|s| s.trim().to_string())
}

/// Rejects datasets whose widths disagree with the config.
pub fn check_shapes(cfg: &RunConfig, data: &Dataset, what: &str) -> Result<()> {
    data.validate()?;
    let m = match cfg.task {
        TaskSelector::Synthetic2d => 2,
        TaskSelector::Power => cfg.data.power.feature_dim,
    };
    let p = cfg.task_spec()?.label_dim();
    if !data.is_empty() && (data.feature_dim() != m || data.label_dim() != p) {
        return Err(Error::Config(format!(
            "{what} has {} features and {} labels, config expects {m} and {p}",
            data.feature_dim(),
            data.label_dim()
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Generates the dataset from the run seed and writes the split CSVs.
pub fn gen_data(cfg: &RunConfig) -> Result<SplitSizes> {
    cfg.validate()?;
    let mut stream = RngStream::keyed(cfg.seed, 0, 0, Purpose::Data);
    let data = match cfg.task {
        TaskSelector::Synthetic2d => {
            gen_synthetic2d_dataset(cfg.data.n, cfg.data.noise, &mut stream)?
        }
        TaskSelector::Power => gen_power_dataset(cfg.data.n, &cfg.data.power, &mut stream)?,
    };
    let (train, val, test) = data.split(
        cfg.data.val_frac,
        cfg.data.test_frac,
        &mut RngStream::keyed(cfg.seed, 0, 0, Purpose::Split),
    )?;
    let dir = cfg.data_dir();
    fs::create_dir_all(&dir)?;
    for (set, name) in [(&train, TRAIN_CSV), (&val, VAL_CSV), (&test, TEST_CSV)] {
        let path = dir.join(name);
        if set.is_empty() {
            remove_if_exists(&path)?;
        } else {
            write_atomic(&path, |p| set.write_csv(p))?;
        }
    }
    Ok(SplitSizes {
        train: train.len(),
        val: val.len(),
        test: test.len(),
    })
}

/// Reads a split; a missing file means the split is empty.
pub fn read_split(cfg: &RunConfig, name: &str) -> Result<Option<Dataset>> {
    let path = cfg.data_dir().join(name);
    if !path.exists() {
        return Ok(None);
    }
    let d = Dataset::read_csv(&path)?;
    check_shapes(cfg, &d, name)?;
    Ok(Some(d))
}

fn read_required(cfg: &RunConfig, name: &str) -> Result<Dataset> {
    let d = Dataset::read_csv(&cfg.data_dir().join(name))?;
    check_shapes(cfg, &d, name)?;
    Ok(d)
}

/// Cache key of the decision dataset: the training CSV, the task costs and
/// the preprocessing solver settings.
fn decisions_key(cfg: &RunConfig, train_bytes: &[u8]) -> Result<String> {
    #[derive(Serialize)]
    struct Inputs<'a> {
        task: TaskSelector,
        horizon: usize,
        cost: &'a config::CostConfig,
        preprocess: &'a soebm_core::SolveConfig,
    }
    let inputs = Inputs {
        task: cfg.task,
        horizon: cfg.data.power.horizon,
        cost: &cfg.cost,
        preprocess: &cfg.preprocess,
    };
    Ok(hex_digest(&[train_bytes, &key_bytes(&inputs)?]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PreprocessOutcome {
    pub rows: usize,
    /// The existing decision file matched the inputs and was kept.
    pub cached: bool,
}

/// Solves for the realized-cost optimum of every training example.
pub fn preprocess(cfg: &RunConfig) -> Result<PreprocessOutcome> {
    cfg.validate()?;
    let dir = cfg.data_dir();
    let train_bytes = fs::read(dir.join(TRAIN_CSV))?;
    let key = decisions_key(cfg, &train_bytes)?;
    let (csv_path, key_path) = (dir.join(DECISIONS_CSV), dir.join(DECISIONS_KEY));
    if csv_path.exists() && read_key(&key_path).as_deref() == Some(key.as_str()) {
        let rows = DecisionDataset::read_csv(&csv_path)?.len();
        return Ok(PreprocessOutcome { rows, cached: true });
    }
    let train = Dataset::read_csv_from(train_bytes.as_slice())?;
    check_shapes(cfg, &train, TRAIN_CSV)?;
    let task = cfg.task_spec()?;
    let mut out = DecisionDataset {
        x: train.x.clone(),
        a: Vec::with_capacity(train.len()),
        cost: vec![],
    };
    let mut failed = Vec::new();
    for (i, y) in train.y.iter().enumerate() {
        match argmin_true_cost(&task, y, &cfg.preprocess) {
            Ok(r) if !r.flagged() => {
                out.a.push(r.decision);
                out.cost.push(r.cost);
            }
            Ok(_) | Err(Error::Numerical(_)) => failed.push(i),
            Err(e) => return Err(e),
        }
    }
    if !failed.is_empty() {
        return Err(Error::Numerical(format!(
            "preprocessing solver failed on training examples {failed:?}"
        )));
    }
    remove_if_exists(&key_path)?;
    write_atomic(&csv_path, |p| out.write_csv(p))?;
    fs::write(&key_path, format!("{key}\n"))?;
    Ok(PreprocessOutcome {
        rows: out.len(),
        cached: false,
    })
}

fn load_decisions(cfg: &RunConfig, train_bytes: &[u8]) -> Result<DecisionDataset> {
    let dir = cfg.data_dir();
    let key = decisions_key(cfg, train_bytes)?;
    let csv_path = dir.join(DECISIONS_CSV);
    if !csv_path.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} not found; run `preprocess` first", csv_path.display()),
        )));
    }
    if read_key(&dir.join(DECISIONS_KEY)).as_deref() != Some(key.as_str()) {
        return Err(Error::Config(
            "decision dataset is stale for this config; run `preprocess` again".into(),
        ));
    }
    DecisionDataset::read_csv(&csv_path)
}

/// Options shared by the commands that train.
#[derive(Clone, Copy, Debug, Default)]
pub struct TrainOptions {
    /// Continue from the checkpoint in the run directory.
    pub resume: bool,
    /// Print one line per epoch.
    pub verbose: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub model: EnergyModel,
    pub epochs_done: usize,
    /// Wall-clock seconds of the epochs run by this call.
    pub epoch_seconds: Vec<f64>,
    pub history: History,
}

#[derive(Serialize, Deserialize)]
struct Timing {
    epoch_seconds: Vec<f64>,
    mean_epoch_seconds: f64,
}

/// What `fit` trains and where.
struct Stage<'a> {
    dir: PathBuf,
    key: String,
    tcfg: TrainConfig,
    objective: Objective,
    init: &'a dyn Fn() -> Result<EnergyModel>,
}

/// Identifies a training run for `--resume`. The epoch budget is left out so
/// a finished run can be extended.
fn stage_key(cfg: &RunConfig, train_bytes: &[u8], parts: &[&[u8]]) -> Result<String> {
    let base = key_bytes(&(cfg.seed, &cfg.network, cfg.task, &cfg.cost))?;
    let mut all: Vec<&[u8]> = vec![train_bytes, &base];
    all.extend_from_slice(parts);
    Ok(hex_digest(&all))
}

fn fit(
    stage: Stage,
    data: &Dataset,
    decisions: Option<&DecisionDataset>,
    val: Option<(&Dataset, &soebm_core::SolveConfig)>,
    opts: TrainOptions,
) -> Result<TrainOutcome> {
    fs::create_dir_all(&stage.dir)?;
    let (ckpt_path, key_path, hist_path) = (
        stage.dir.join(CHECKPOINT),
        stage.dir.join(RUN_KEY),
        stage.dir.join(HISTORY),
    );
    let mut trainer = if opts.resume && ckpt_path.exists() {
        if read_key(&key_path).as_deref() != Some(stage.key.as_str()) {
            return Err(Error::Config(format!(
                "config or data changed since {} was written; rerun without --resume",
                ckpt_path.display()
            )));
        }
        let ckpt = Checkpoint::load(&ckpt_path)?;
        let adam = ckpt
            .adam
            .ok_or_else(|| Error::Parse("checkpoint has no optimizer state".into()))?;
        let model = (stage.init)()?;
        let model = EnergyModel::new(ckpt.params, model.task, model.tau)?;
        let mut t = Trainer::resume(
            model,
            adam,
            stage.tcfg,
            stage.objective,
            ckpt.epochs_done as usize,
        )?;
        if hist_path.exists() {
            let mut h = History::read_jsonl(BufReader::new(fs::File::open(&hist_path)?))?;
            h.records.truncate(t.epochs_done);
            t.history = h;
        }
        t
    } else {
        let t = Trainer::new((stage.init)()?, stage.tcfg, stage.objective)?;
        remove_if_exists(&ckpt_path)?;
        remove_if_exists(&hist_path)?;
        fs::write(&key_path, format!("{}\n", stage.key))?;
        // Epoch-0 checkpoint so an immediate interruption can resume.
        save_checkpoint(&t, &ckpt_path)?;
        t
    };
    let mut secs = Vec::new();
    while trainer.epochs_done < trainer.cfg.epochs {
        let start = Instant::now();
        let mut rec = trainer.run_epoch(data, decisions)?;
        if let Some((set, solve)) = val {
            rec.eval_task_loss =
                Some(eval_task_loss(&trainer.model, set, solve, trainer.cfg.seed)?.mean_task_loss);
        }
        secs.push(start.elapsed().as_secs_f64());
        if opts.verbose {
            println!(
                "{}: epoch {}/{} {:.3} s {}",
                stage.dir.display(),
                rec.epoch,
                trainer.cfg.epochs,
                secs[secs.len() - 1],
                describe(&rec)
            );
        }
        trainer.history.records.push(rec);
        save_checkpoint(&trainer, &ckpt_path)?;
        write_atomic(&hist_path, |p| {
            trainer
                .history
                .write_jsonl(std::io::BufWriter::new(fs::File::create(p)?))
        })?;
    }
    if !secs.is_empty() {
        let timing = Timing {
            mean_epoch_seconds: secs.iter().sum::<f64>() / secs.len() as f64,
            epoch_seconds: secs.clone(),
        };
        let text =
            serde_json::to_string_pretty(&timing).map_err(|e| Error::Parse(e.to_string()))?;
        fs::write(stage.dir.join(TIMING), text)?;
    }
    Ok(TrainOutcome {
        epochs_done: trainer.epochs_done,
        model: trainer.model,
        epoch_seconds: secs,
        history: trainer.history,
    })
}

fn describe(r: &EpochRecord) -> String {
    let mut parts = Vec::new();
    let mut add = |name: &str, v: Option<f64>| {
        if let Some(v) = v {
            parts.push(format!("{name} {v:.5}"));
        }
    };
    add("nll", r.mean_nll);
    add("energy(a*)", r.mean_energy_at_astar);
    add("kl_cross", r.mean_kl_cross);
    add("ess", r.ess_model_mean);
    add("ess_oracle", r.ess_oracle_mean);
    add("val_task_loss", r.eval_task_loss);
    parts.join(" ")
}

fn save_checkpoint(t: &Trainer, path: &Path) -> Result<()> {
    let ckpt = Checkpoint {
        params: t.model.params.clone(),
        adam: Some(t.adam.clone()),
        epochs_done: t.epochs_done as u64,
    };
    write_atomic(path, |p| ckpt.save(p))
}

/// Freshly initialized model from the run seed.
pub fn init_model(cfg: &RunConfig) -> Result<EnergyModel> {
    let task = cfg.task_spec()?;
    let input = match cfg.task {
        TaskSelector::Synthetic2d => 2,
        TaskSelector::Power => cfg.data.power.feature_dim,
    };
    let widths: Vec<usize> = std::iter::once(input)
        .chain(cfg.network.hidden.iter().copied())
        .collect();
    let params = MlpParams::init(
        &widths,
        task.label_dim(),
        cfg.network.dropout,
        cfg.network.init_sigma,
        &mut RngStream::keyed(cfg.seed, 0, 0, Purpose::Init),
    )?;
    EnergyModel::new(params, task, cfg.tau())
}

fn two_stage_stage<'a>(
    cfg: &RunConfig,
    train_bytes: &[u8],
    init: &'a dyn Fn() -> Result<EnergyModel>,
) -> Result<Stage<'a>> {
    Ok(Stage {
        dir: cfg.out_dir.join(Mode::TwoStage.name()),
        key: stage_key(
            cfg,
            train_bytes,
            &[
                b"two-stage",
                &key_bytes(&config::PretrainConfig {
                    epochs: 0,
                    ..cfg.pretrain.clone()
                })?,
            ],
        )?,
        tcfg: cfg.pretrain_config(),
        objective: Objective::Nll,
        init,
    })
}

/// Trains the configured mode. Energy modes train (or reuse) the two-stage
/// model first unless `cold_start` is set.
pub fn train(cfg: &RunConfig, opts: TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_bytes = fs::read(cfg.data_dir().join(TRAIN_CSV))?;
    let data = Dataset::read_csv_from(train_bytes.as_slice())?;
    check_shapes(cfg, &data, TRAIN_CSV)?;
    let val = if cfg.train.track_validation {
        read_split(cfg, VAL_CSV)?
    } else {
        None
    };
    let val = val.as_ref().map(|v| (v, &cfg.solve));
    let fresh = || init_model(cfg);
    if cfg.mode == Mode::TwoStage {
        return fit(
            two_stage_stage(cfg, &train_bytes, &fresh)?,
            &data,
            None,
            val,
            opts,
        );
    }
    let decisions = load_decisions(cfg, &train_bytes)?;
    let start = if cfg.cold_start {
        fresh()?
    } else {
        let stage = two_stage_stage(cfg, &train_bytes, &fresh)?;
        let reuse = read_key(&stage.dir.join(RUN_KEY)).as_deref() == Some(stage.key.as_str());
        let pre = fit(
            stage,
            &data,
            None,
            None,
            TrainOptions {
                resume: reuse,
                ..opts
            },
        )?;
        EnergyModel::new(pre.model.params, cfg.task_spec()?, cfg.tau())?
    };
    let start_digest = hex_digest(&[&checkpoint_bytes(&start.params)?]);
    let init = move || Ok(start.clone());
    let stage = Stage {
        dir: cfg.run_dir(),
        key: stage_key(
            cfg,
            &train_bytes,
            &[
                cfg.mode.name().as_bytes(),
                &key_bytes(&config::EnergyTrainConfig {
                    epochs: 0,
                    ..cfg.train.clone()
                })?,
                start_digest.as_bytes(),
                &[cfg.cold_start as u8],
            ],
        )?,
        tcfg: cfg.train_config()?,
        objective: Objective::Energy,
        init: &init,
    };
    fit(stage, &data, Some(&decisions), val, opts)
}

fn checkpoint_bytes(params: &MlpParams) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    Checkpoint {
        params: params.clone(),
        adam: None,
        epochs_done: 0,
    }
    .write_to(&mut buf)?;
    Ok(buf)
}

/// Loads the trained model of the configured mode.
pub fn load_model(cfg: &RunConfig, mode: Mode) -> Result<EnergyModel> {
    let ckpt = Checkpoint::load(&cfg.out_dir.join(mode.name()).join(CHECKPOINT))?;
    EnergyModel::new(ckpt.params, cfg.task_spec()?, cfg.tau())
}

/// Per-example comparison against the two-stage model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedSummary {
    /// Examples where neither solve was flagged.
    pub n: usize,
    pub baseline_mean_task_loss: f64,
    pub mean_task_loss: f64,
    /// Mean of `task_loss - baseline_task_loss`.
    pub mean_diff: f64,
    pub std_diff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mode: Mode,
    pub seed: u64,
    pub n: usize,
    pub flagged: usize,
    pub mean_task_loss: f64,
    pub std_task_loss: f64,
    pub mean_regret: f64,
    pub mean_nll: f64,
    /// `mean ± std` of the task loss.
    pub summary: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paired: Option<PairedSummary>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOutcome {
    pub report: EvalReport,
    pub summary: EvalSummary,
}

fn write_examples(path: &Path, rows: &[ExampleEval]) -> Result<()> {
    write_atomic(path, |p| {
        let mut w = csv::Writer::from_path(p)?;
        w.write_record([
            "index",
            "task_loss",
            "optimal_cost",
            "regret",
            "nll",
            "flagged",
        ])?;
        for e in rows {
            w.write_record([
                e.index.to_string(),
                e.task_loss.to_string(),
                e.optimal_cost.to_string(),
                e.regret.to_string(),
                e.nll.to_string(),
                u8::from(e.flagged).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })
}

/// Reads back a per-example metrics file.
pub fn read_examples(path: &Path) -> Result<Vec<ExampleEval>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |k: usize| -> Result<f64> {
            rec.get(k)
                .ok_or_else(|| Error::Parse("short metrics row".into()))?
                .parse()
                .map_err(|e| Error::Parse(format!("metrics column {k}: {e}")))
        };
        out.push(ExampleEval {
            index: f(0)? as usize,
            task_loss: f(1)?,
            optimal_cost: f(2)?,
            regret: f(3)?,
            nll: f(4)?,
            flagged: f(5)? != 0.0,
        });
    }
    Ok(out)
}

fn paired(report: &EvalReport, base: &EvalReport, path: &Path) -> Result<PairedSummary> {
    let pairs: Vec<(usize, f64, f64)> = report
        .examples
        .iter()
        .zip(&base.examples)
        .filter(|(e, b)| !e.flagged && !b.flagged)
        .map(|(e, b)| (e.index, b.task_loss, e.task_loss))
        .collect();
    write_atomic(path, |p| {
        let mut w = csv::Writer::from_path(p)?;
        w.write_record(["index", "baseline_task_loss", "task_loss", "diff"])?;
        for (i, b, e) in &pairs {
            w.write_record([
                i.to_string(),
                b.to_string(),
                e.to_string(),
                (e - b).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    let n = pairs.len();
    if n == 0 {
        return Err(Error::Numerical(
            "no example was solved by both models".into(),
        ));
    }
    let nf = n as f64;
    let mean = |k: fn(&(usize, f64, f64)) -> f64| pairs.iter().map(k).sum::<f64>() / nf;
    let mean_diff = mean(|p| p.2 - p.1);
    let var = pairs
        .iter()
        .map(|p| (p.2 - p.1 - mean_diff).powi(2))
        .sum::<f64>()
        / (nf - 1.0).max(1.0);
    Ok(PairedSummary {
        n,
        baseline_mean_task_loss: mean(|p| p.1),
        mean_task_loss: mean(|p| p.2),
        mean_diff,
        std_diff: var.sqrt(),
    })
}

/// Evaluates the configured mode on the test split. Energy modes are also
/// compared example by example with the two-stage model when it exists.
pub fn eval(cfg: &RunConfig) -> Result<EvalOutcome> {
    cfg.validate()?;
    let model = load_model(cfg, cfg.mode)?;
    let test = read_required(cfg, TEST_CSV)?;
    let report = eval_task_loss(&model, &test, &cfg.solve, cfg.seed)?;
    let dir = cfg.run_dir();
    write_examples(&dir.join("eval.csv"), &report.examples)?;
    let base_path = cfg.out_dir.join(Mode::TwoStage.name()).join(CHECKPOINT);
    let paired = if cfg.mode != Mode::TwoStage && base_path.exists() {
        let base = eval_task_loss(
            &load_model(cfg, Mode::TwoStage)?,
            &test,
            &cfg.solve,
            cfg.seed,
        )?;
        Some(paired(&report, &base, &dir.join("paired.csv"))?)
    } else {
        None
    };
    let summary = EvalSummary {
        mode: cfg.mode,
        seed: cfg.seed,
        n: report.examples.len(),
        flagged: report.flagged,
        mean_task_loss: report.mean_task_loss,
        std_task_loss: report.std_task_loss,
        mean_regret: report.mean_regret,
        mean_nll: report.mean_nll,
        summary: report.summary(),
        paired,
    };
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Parse(e.to_string()))?;
    write_atomic(&dir.join("eval.json"), |p| Ok(fs::write(p, text + "\n")?))?;
    Ok(EvalOutcome { report, summary })
}

/// Energy and true-cost grids for test example `index`, centred on its
/// realized-cost optimum.
pub fn landscape(cfg: &RunConfig, index: usize) -> Result<(LandscapeGrid, PathBuf)> {
    cfg.validate()?;
    let model = load_model(cfg, cfg.mode)?;
    let test = read_required(cfg, TEST_CSV)?;
    if index >= test.len() {
        return Err(Error::Config(format!(
            "landscape index {index} out of range (test set has {} examples)",
            test.len()
        )));
    }
    let (x, y) = (&test.x[index], &test.y[index]);
    let center = argmin_true_cost(&model.task, y, &cfg.preprocess)?.decision;
    let (v1, v2) = landscape::random_directions(center.len(), cfg.seed, index)?;
    let l = &cfg.landscape;
    let grid = LandscapeGrid::compute(
        &model,
        x,
        y,
        center,
        v1,
        v2,
        l.range,
        l.resolution,
        cfg.seed,
        index,
    )?;
    let path = cfg.run_dir().join(format!("landscape_{index}.csv"));
    write_atomic(&path, |p| grid.write_csv(p))?;
    Ok((grid, path))
}
