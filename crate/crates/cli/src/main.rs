use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Result};
use clap::{Args, Parser, Subcommand};
use ujscc_cli::commands::{self, EvalOptions, GradcheckOptions};
use ujscc_cli::{DatasetSpec, RunConfig};
use ujscc_core::codec::Setting;
use ujscc_core::pipeline::TrainingScheme;

#[derive(Parser)]
#[command(name = "ujscc", version, about = "Universal joint source-channel coding simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write model.ujsc and history.csv
    Train(TrainArgs),
    /// Evaluate checkpoints at explicit SNR points
    Eval(EvalArgs),
    /// Evaluate checkpoints over an evenly spaced SNR range
    Sweep(SweepArgs),
    /// Parameter counts: total, BN and per layer
    Params(ModelArgs),
    /// Encoder and decoder FLOPs per modulation order
    Flops {
        #[command(flatten)]
        model: ModelArgs,
        /// One-based order; all orders when omitted
        #[arg(long)]
        k: Option<usize>,
    },
    /// Monte-Carlo symbol error rate against the closed form
    Ser {
        #[arg(long, value_delimiter = ',', default_value = "2,4,16,64,256")]
        m: Vec<usize>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_value = "0,2,5,8,12,16,20,23,26")]
        snr: Vec<f64>,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of the noiseless training graph
    Gradcheck {
        #[arg(long, default_value = "basic")]
        setting: Setting,
        #[arg(long)]
        c1: Option<usize>,
        #[arg(long)]
        c2: Option<usize>,
        /// One-based orders to check
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        k: Vec<usize>,
        /// Coordinates checked per parameter tensor
        #[arg(long, default_value_t = 2)]
        per_tensor: usize,
        #[arg(long, default_value_t = 2)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value = "basic")]
    setting: Setting,
    #[arg(long, default_value = "ujscc")]
    scheme: TrainingScheme,
    #[arg(long)]
    c1: Option<usize>,
    #[arg(long)]
    c2: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Config file of `section.key = value` lines; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    setting: Option<String>,
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// CIFAR-10 binary directory or `synthetic:<count>`; defaults to UJSCC_DATA_DIR
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    c1: Option<usize>,
    #[arg(long)]
    c2: Option<usize>,
    /// Use at most this many training images
    #[arg(long)]
    limit: Option<usize>,
    /// Any config entry as `section.key=value`; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl TrainArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| anyhow!("--set expects KEY=VALUE, got `{kv}`"))?;
            cfg.set(k, v)?;
        }
        let flags: [(&str, Option<String>); 11] = [
            ("run.setting", self.setting.clone()),
            ("run.scheme", self.scheme.clone()),
            ("run.seed", self.seed.map(|v| v.to_string())),
            ("run.dataset", self.dataset.clone()),
            ("run.out", self.out.as_ref().map(|p| p.display().to_string())),
            ("train.epochs", self.epochs.map(|v| v.to_string())),
            ("train.batch_size", self.batch_size.map(|v| v.to_string())),
            ("train.lr", self.lr.map(|v| v.to_string())),
            ("model.c1", self.c1.map(|v| v.to_string())),
            ("model.c2", self.c2.map(|v| v.to_string())),
            ("train.limit", self.limit.map(|v| v.to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct EvalCommon {
    /// Checkpoint file; repeat to combine per-band TE files
    #[arg(long = "checkpoint", required = true)]
    checkpoints: Vec<PathBuf>,
    #[arg(long, default_value_t = 1)]
    trials: usize,
    /// Overrides the dataset recorded in the checkpoint
    #[arg(long)]
    dataset: Option<DatasetSpec>,
    /// Use at most this many test images
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the CSV here
    #[arg(long)]
    out: Option<PathBuf>,
}

impl EvalCommon {
    fn options(&self, snr_grid: Vec<f64>) -> EvalOptions {
        EvalOptions {
            checkpoints: self.checkpoints.clone(),
            snr_grid,
            trials: self.trials,
            dataset: self.dataset.clone(),
            limit: self.limit,
            batch_size: self.batch_size,
            seed: self.seed,
            out: self.out.clone(),
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: EvalCommon,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_value = "2,8,16,23,27")]
    snr: Vec<f64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: EvalCommon,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    from: f64,
    #[arg(long, default_value_t = 30.0)]
    to: f64,
    #[arg(long, default_value_t = 1.0)]
    step: f64,
}

fn run(cli: Cli) -> Result<bool> {
    let text = match cli.command {
        Command::Train(a) => commands::cmd_train(&a.resolve()?)?,
        Command::Eval(a) => commands::cmd_eval(&a.common.options(a.snr))?,
        Command::Sweep(a) => commands::cmd_eval(&a.common.options(commands::snr_range(a.from, a.to, a.step)?))?,
        Command::Params(m) => commands::cmd_params(m.setting, m.scheme, m.c1, m.c2)?,
        Command::Flops { model: m, k } => commands::cmd_flops(m.setting, m.scheme, k, m.c1, m.c2)?,
        Command::Ser {
            m,
            snr,
            trials,
            seed,
            out,
        } => commands::cmd_ser(&m, &snr, trials, seed, out.as_deref())?,
        Command::Gradcheck {
            setting,
            c1,
            c2,
            k,
            per_tensor,
            batch,
            seed,
            tol,
        } => {
            let (text, ok) = commands::cmd_gradcheck(&GradcheckOptions {
                setting,
                c1,
                c2,
                orders: k,
                per_tensor,
                batch,
                seed,
                tolerance: tol,
            })?;
            print!("{text}");
            return Ok(ok);
        }
    };
    print!("{text}");
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: gradient check failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
