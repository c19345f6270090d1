use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use soebm_cli::{exit_code, Mode, RunConfig, TrainOptions};
use soebm_core::{Error, Result};

/// Energy-based surrogate training for stochastic optimization.
#[derive(Parser)]
#[command(name = "soebm", version)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config mode.
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the dataset and write the train/validation/test splits.
    GenData,
    /// Solve for the optimal decision of every training example.
    Preprocess,
    /// Train the model for the selected mode.
    Train {
        /// Continue from the last checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate decision quality on the test split.
    Eval,
    /// Export energy and true-cost grids around one test example.
    Landscape {
        /// Test example; defaults to the config value.
        #[arg(long)]
        index: Option<usize>,
    },
}

fn load(cli: &Cli) -> Result<RunConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config <path> is required".into()))?;
    let mut cfg = RunConfig::load(path).map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(
            io.kind(),
            format!("{}: {io}", path.display()),
        )),
        e => e,
    })?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = cli.mode {
        cfg.mode = mode;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load(cli)?;
    match cli.command {
        Command::GenData => {
            let s = soebm_cli::gen_data(&cfg)?;
            println!(
                "wrote {} (train {}, val {}, test {})",
                cfg.data_dir().display(),
                s.train,
                s.val,
                s.test
            );
        }
        Command::Preprocess => {
            let p = soebm_cli::preprocess(&cfg)?;
            let how = if p.cached { "cache hit" } else { "solved" };
            println!("{} decisions ({how})", p.rows);
        }
        Command::Train { resume } => {
            let t = soebm_cli::train(
                &cfg,
                TrainOptions {
                    resume,
                    verbose: true,
                },
            )?;
            if !t.epoch_seconds.is_empty() {
                let mean = t.epoch_seconds.iter().sum::<f64>() / t.epoch_seconds.len() as f64;
                println!(
                    "{}: {} epochs, {mean:.3} s/epoch",
                    cfg.mode.name(),
                    t.epochs_done
                );
            } else {
                println!(
                    "{}: already trained ({} epochs)",
                    cfg.mode.name(),
                    t.epochs_done
                );
            }
        }
        Command::Eval => {
            let e = soebm_cli::eval(&cfg)?;
            let s = &e.summary;
            println!(
                "{}: task loss {} regret {:.4} nll {:.4} ({} examples, {} flagged)",
                cfg.mode.name(),
                s.summary,
                s.mean_regret,
                s.mean_nll,
                s.n,
                s.flagged
            );
            if let Some(p) = &s.paired {
                println!(
                    "paired vs two-stage: mean diff {:+.4} ± {:.4} over {}",
                    p.mean_diff, p.std_diff, p.n
                );
            }
        }
        Command::Landscape { index } => {
            let (grid, path) = soebm_cli::landscape(&cfg, index.unwrap_or(cfg.landscape.index))?;
            println!(
                "wrote {} ({}x{}, v1·v2 = {:.4})",
                path.display(),
                grid.resolution,
                grid.resolution,
                grid.v1_dot_v2()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
