use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vitcn::error::{Error, ErrorKind, Result};
use vitcn::harness::checkpoint::Checkpoint;
use vitcn::harness::gradcheck::{check_model, MODEL_TOLERANCE};
use vitcn::harness::{evaluate, train, MetricsReport, TrainConfig};
use vitcn::model::{LossKind, ModelConfig, Preset};
use vitcn::rpm::{generate, read_dataset, write_dataset, Configuration, RpmProblem};

#[derive(Parser)]
#[command(name = "vitcn", about = "Vision-transformer contrast network for Raven-style matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset of problems.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
        /// `center` or `grid2`.
        #[arg(long)]
        config: String,
        #[arg(long)]
        seed: u64,
    },
    /// Train on a dataset split 60/20/20; writes CKPT and CKPT.metrics.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `tiny` or `desk`.
        #[arg(long)]
        preset: String,
        /// `ce` or `contrast`.
        #[arg(long)]
        loss: String,
        #[arg(long)]
        epochs: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Epochs without validation improvement before stopping.
        #[arg(long)]
        patience: Option<usize>,
    },
    /// Score a checkpoint on every problem of a dataset.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Where to write key=value metrics.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Finite-difference check of the whole model.
    Gradcheck {
        #[arg(long)]
        preset: String,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        draws: usize,
    },
}

/// Path of the metrics file written next to a checkpoint.
fn metrics_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".metrics");
    PathBuf::from(s)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Generate { out, count, config, seed } => {
            let config = Configuration::parse(&config)?;
            if count == 0 {
                return Err(Error::Config("--count must be positive".into()));
            }
            let problems = generate(count, config, seed);
            write_dataset(&problems, &out)?;
            println!("wrote {count} {config} problems to {}", out.display());
            Ok(true)
        }
        Command::Train {
            data,
            out,
            preset,
            loss,
            epochs,
            seed,
            batch,
            lr,
            patience,
        } => {
            let mut cfg = TrainConfig::new(Preset::parse(&preset)?, LossKind::parse(&loss)?, epochs, seed);
            if let Some(b) = batch {
                cfg.batch_size = b;
            }
            if let Some(lr) = lr {
                cfg.base_lr = lr;
            }
            if let Some(p) = patience {
                cfg.patience = p;
            }
            cfg.data = data;
            cfg.checkpoint = out.clone();
            let outcome = train(&cfg, |r| {
                eprintln!(
                    "epoch {:>3}  train loss {:.5}  acc {:6.2}%  val loss {:.5}  acc {:6.2}%",
                    r.epoch,
                    r.train_loss,
                    100.0 * r.train_accuracy,
                    r.val_loss,
                    100.0 * r.val_accuracy
                )
            })?;
            outcome.best.save(&out)?;
            outcome.report.write_key_values(&metrics_path(&out))?;
            print!("{}", outcome.report.to_table());
            Ok(true)
        }
        Command::Eval { data, ckpt, report } => {
            let ck = Checkpoint::load(&ckpt)?;
            let problems = read_dataset(&data)?;
            let refs: Vec<&RpmProblem> = problems.iter().collect();
            let start = std::time::Instant::now();
            let mut metrics = MetricsReport::new(vec![("checkpoint".into(), ckpt.display().to_string())], 0);
            metrics.evaluation = Some(evaluate(&ck.model, &refs, LossKind::CrossEntropy)?);
            metrics.wall_clock_secs = start.elapsed().as_secs_f64();
            print!("{}", metrics.to_table());
            if let Some(path) = report {
                metrics.write_key_values(&path)?;
            }
            Ok(true)
        }
        Command::Gradcheck { preset, seed, draws } => {
            let preset = Preset::parse(&preset)?;
            if preset != Preset::Tiny {
                return Err(Error::Config("gradcheck runs at the tiny preset only".into()));
            }
            let check = check_model(ModelConfig::preset(preset), seed, draws, 3)?;
            println!(
                "checked {} coordinates over {draws} draws; max relative error {:.3e} (threshold {MODEL_TOLERANCE:e})",
                check.report.checked,
                check.max_rel_error()
            );
            println!("worst: {}", check.describe_worst());
            Ok(check.passed())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            match e.kind() {
                ErrorKind::Contract => ExitCode::from(1),
                ErrorKind::Io => ExitCode::from(2),
            }
        }
    }
}
