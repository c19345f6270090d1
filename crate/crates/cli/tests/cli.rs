use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use soebm_cli::*;
use soebm_core::task::ramp_violation;
use soebm_core::{Checkpoint, Dataset, DecisionDataset};

fn small(task: TaskSelector, dir: &Path) -> RunConfig {
    let mut c = RunConfig::defaults(task, dir);
    c.data.n = if task == TaskSelector::Power { 40 } else { 60 };
    c.network.hidden = vec![16];
    c.pretrain.epochs = 3;
    c.pretrain.batch_size = 8;
    c.train.epochs = 2;
    c.train.batch_size = 8;
    c.train.proposal.samples = 32;
    c
}

fn write_cfg(c: &RunConfig, dir: &Path) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, c.to_toml().unwrap()).unwrap();
    p
}

fn soebm(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_soebm"))
        .args(args)
        .output()
        .unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

/// Every file under `root` except wall-clock sidecars, by relative path.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != TIMING && p.extension().is_none_or(|x| x != "toml")
            {
                out.insert(
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

#[test]
fn synthetic_split_sizes_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = RunConfig::defaults(TaskSelector::Synthetic2d, tmp.path());
    c.seed = 3;
    let s = gen_data(&c).unwrap();
    assert_eq!((s.train, s.val, s.test), (400, 0, 100));
    assert!(!c.data_dir().join(VAL_CSV).exists());
    let first = fs::read(c.data_dir().join(TRAIN_CSV)).unwrap();
    gen_data(&c).unwrap();
    assert_eq!(fs::read(c.data_dir().join(TRAIN_CSV)).unwrap(), first);
    let back = Dataset::read_csv(&c.data_dir().join(TEST_CSV)).unwrap();
    assert_eq!(back.len(), 100);
}

#[test]
fn power_header_widths() {
    let tmp = tempfile::tempdir().unwrap();
    let c = small(TaskSelector::Power, tmp.path());
    gen_data(&c).unwrap();
    let text = fs::read_to_string(c.data_dir().join(TRAIN_CSV)).unwrap();
    let head: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    assert_eq!(head.iter().filter(|h| h.starts_with("x_")).count(), 150);
    assert_eq!(head.iter().filter(|h| h.starts_with("y_")).count(), 24);
    assert_eq!(head.len(), 174);
}

#[test]
fn preprocess_caches_and_meets_optimality() {
    let tmp = tempfile::tempdir().unwrap();
    let c = small(TaskSelector::Synthetic2d, tmp.path());
    gen_data(&c).unwrap();
    assert!(!preprocess(&c).unwrap().cached);
    let first = fs::read(c.data_dir().join(DECISIONS_CSV)).unwrap();
    let again = preprocess(&c).unwrap();
    assert!(again.cached);
    assert_eq!(again.rows, 48);
    assert_eq!(fs::read(c.data_dir().join(DECISIONS_CSV)).unwrap(), first);

    let train = Dataset::read_csv(&c.data_dir().join(TRAIN_CSV)).unwrap();
    let dec = DecisionDataset::read_csv(&c.data_dir().join(DECISIONS_CSV)).unwrap();
    assert_eq!(dec.x, train.x);
    for (a, y) in dec.a.iter().zip(&train.y) {
        // Every label lies in [-1.5, 4.5], where the optimum is the label.
        for (ai, yi) in a.iter().zip(y) {
            assert!((ai - yi).abs() < 1e-3, "{ai} vs {yi}");
        }
    }

    // A changed cost invalidates the cache.
    let mut c2 = c.clone();
    c2.cost.synthetic.quad_weight = 0.7;
    assert!(!preprocess(&c2).unwrap().cached);
}

#[test]
fn power_decisions_are_ramp_feasible() {
    let tmp = tempfile::tempdir().unwrap();
    let c = small(TaskSelector::Power, tmp.path());
    gen_data(&c).unwrap();
    preprocess(&c).unwrap();
    let dec = DecisionDataset::read_csv(&c.data_dir().join(DECISIONS_CSV)).unwrap();
    assert_eq!(dec.len(), 28);
    for a in &dec.a {
        assert!(ramp_violation(a, c.cost.ramp) <= 1e-8);
    }
}

#[test]
fn resume_continues_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let full = small(TaskSelector::Synthetic2d, &tmp.path().join("full"));
    gen_data(&full).unwrap();
    preprocess(&full).unwrap();
    train(&full, TrainOptions::default()).unwrap();

    let mut part = small(TaskSelector::Synthetic2d, &tmp.path().join("part"));
    gen_data(&part).unwrap();
    preprocess(&part).unwrap();
    part.train.epochs = 1;
    train(&part, TrainOptions::default()).unwrap();
    part.train.epochs = 2;
    let t = train(
        &part,
        TrainOptions {
            resume: true,
            verbose: false,
        },
    )
    .unwrap();
    assert_eq!(t.epoch_seconds.len(), 1);

    for f in [CHECKPOINT, HISTORY] {
        let a = fs::read(full.run_dir().join(f)).unwrap();
        let b = fs::read(part.run_dir().join(f)).unwrap();
        assert!(a == b, "{f} differs after resume");
    }
    assert_eq!(
        Checkpoint::load(&part.run_dir().join(CHECKPOINT))
            .unwrap()
            .epochs_done,
        2
    );

    // A changed config refuses to resume.
    part.train.learning_rate *= 2.0;
    let err = train(
        &part,
        TrainOptions {
            resume: true,
            verbose: false,
        },
    )
    .unwrap_err();
    assert_eq!(exit_code(&err), 2);
}

#[test]
fn eval_aggregates_and_paired_output() {
    let tmp = tempfile::tempdir().unwrap();
    let c = small(TaskSelector::Synthetic2d, tmp.path());
    gen_data(&c).unwrap();
    preprocess(&c).unwrap();
    train(&c, TrainOptions::default()).unwrap();
    let e = eval(&c).unwrap();
    let rows = read_examples(&c.run_dir().join("eval.csv")).unwrap();
    assert_eq!(rows, e.report.examples);
    let kept: Vec<_> = rows.iter().filter(|r| !r.flagged).collect();
    let mean = kept.iter().map(|r| r.task_loss).sum::<f64>() / kept.len() as f64;
    assert!((mean - e.summary.mean_task_loss).abs() < 1e-12);
    let json: EvalSummary =
        serde_json::from_str(&fs::read_to_string(c.run_dir().join("eval.json")).unwrap()).unwrap();
    assert_eq!(json, e.summary);
    let p = e.summary.paired.expect("two-stage model exists");
    assert_eq!(p.n, kept.len());
    assert!((p.mean_task_loss - mean).abs() < 1e-12);
    assert!(c.run_dir().join("paired.csv").exists());
}

#[test]
fn landscape_center_and_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = small(TaskSelector::Synthetic2d, tmp.path());
    c.landscape.resolution = 11;
    gen_data(&c).unwrap();
    preprocess(&c).unwrap();
    train(&c, TrainOptions::default()).unwrap();
    let (g, path) = landscape(&c, 4).unwrap();
    assert_eq!(g.energy.len(), 121);
    let model = load_model(&c, c.mode).unwrap();
    let test = Dataset::read_csv(&c.data_dir().join(TEST_CSV)).unwrap();
    assert_eq!(
        g.energy[5 * 11 + 5],
        model.energy(&test.x[4], &g.center, None).unwrap().value
    );
    assert_eq!(
        g.true_cost[5 * 11 + 5],
        model.task.cost(&test.y[4], &g.center).unwrap()
    );
    let bytes = fs::read(&path).unwrap();
    assert_eq!(LandscapeGrid::read_csv(&path).unwrap(), g);
    landscape(&c, 4).unwrap();
    assert_eq!(fs::read(&path).unwrap(), bytes);
    let err = landscape(&c, 12).unwrap_err();
    assert_eq!(exit_code(&err), 2);
}

#[test]
fn binary_pipeline_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let mut snaps = Vec::new();
    for run in ["a", "b"] {
        let dir = tmp.path().join(run);
        fs::create_dir_all(&dir).unwrap();
        let cfg = write_cfg(&small(TaskSelector::Synthetic2d, Path::new("unused")), &dir);
        let cfg = cfg.to_str().unwrap();
        let out = dir.join("out");
        let out = out.to_str().unwrap();
        for cmd in ["gen-data", "preprocess", "train", "eval", "landscape"] {
            let (code, stdout, stderr) =
                soebm(&["--config", cfg, "--out", out, "--seed", "9", cmd]);
            assert_eq!(code, 0, "{cmd}: {stdout}{stderr}");
        }
        let (code, stdout, _) = soebm(&[
            "--config",
            cfg,
            "--out",
            out,
            "--seed",
            "9",
            "--mode",
            "ablation-no-kl",
            "train",
        ]);
        assert_eq!(code, 0);
        assert!(stdout.contains("s/epoch"));
        snaps.push(snapshot(&dir.join("out")));
    }
    assert!(snaps[0].contains_key(Path::new("soebm/landscape_0.csv")));
    assert!(snaps[0].contains_key(Path::new("ablation-no-kl/model.ckpt")));
    assert!(snaps[0].contains_key(Path::new("two-stage/history.jsonl")));
    assert_eq!(
        snaps[0].keys().collect::<Vec<_>>(),
        snaps[1].keys().collect::<Vec<_>>()
    );
    for (k, v) in &snaps[0] {
        assert!(snaps[1][k] == *v, "{} differs between reruns", k.display());
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let c = small(TaskSelector::Synthetic2d, &tmp.path().join("out"));
    let cfg = write_cfg(&c, tmp.path());
    let cfg = cfg.to_str().unwrap();

    assert_eq!(soebm(&["gen-data"]).0, 2, "missing --config");
    assert_eq!(soebm(&["--config", cfg, "--mode", "bogus", "train"]).0, 2);
    assert_eq!(
        soebm(&["--config", "/nonexistent/run.toml", "gen-data"]).0,
        4
    );

    let typo = tmp.path().join("typo.toml");
    fs::write(&typo, c.to_toml().unwrap().replace("lambda = ", "lamda = ")).unwrap();
    assert_eq!(
        soebm(&["--config", typo.to_str().unwrap(), "gen-data"]).0,
        2
    );
    let bad = tmp.path().join("bad.toml");
    fs::write(
        &bad,
        c.to_toml()
            .unwrap()
            .replace("lambda = 1.0", "lambda = -1.0"),
    )
    .unwrap();
    assert_eq!(soebm(&["--config", bad.to_str().unwrap(), "gen-data"]).0, 2);

    assert_eq!(
        soebm(&["--config", cfg, "eval"]).0,
        4,
        "missing data and checkpoint"
    );
    assert_eq!(soebm(&["--config", cfg, "gen-data"]).0, 0);
    assert_eq!(
        soebm(&["--config", cfg, "train"]).0,
        4,
        "decisions not preprocessed"
    );
    assert_eq!(soebm(&["--config", cfg, "eval"]).0, 4, "checkpoint missing");
    assert_eq!(soebm(&["--config", cfg, "preprocess"]).0, 0);
    let (code, stdout, _) = soebm(&["--config", cfg, "preprocess"]);
    assert_eq!(code, 0);
    assert!(stdout.contains("cache hit"));
    assert_eq!(
        soebm(&["--config", cfg, "--mode", "two-stage", "train"]).0,
        0
    );
    assert_eq!(
        soebm(&[
            "--config",
            cfg,
            "--mode",
            "two-stage",
            "landscape",
            "--index",
            "99"
        ])
        .0,
        2
    );

    let blocker = tmp.path().join("file");
    fs::write(&blocker, "").unwrap();
    let out = blocker.join("sub");
    assert_eq!(
        soebm(&["--config", cfg, "--out", out.to_str().unwrap(), "gen-data"]).0,
        4
    );

    // Stale decisions after a cost change are a config error.
    let changed = tmp.path().join("changed.toml");
    fs::write(
        &changed,
        c.to_toml()
            .unwrap()
            .replace("quad_weight = 0.5", "quad_weight = 0.6"),
    )
    .unwrap();
    assert_eq!(
        soebm(&["--config", changed.to_str().unwrap(), "train"]).0,
        2
    );
}

#[test]
fn shipped_configs_load_and_round_trip() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["synthetic2d.toml", "power.toml"] {
        let c = RunConfig::load(&root.join(name)).unwrap();
        assert_eq!(RunConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
    }
}
