use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fiberwatch_cli::{
    cmd_calibrate, cmd_eval, cmd_gen, cmd_monitor, cmd_train_ae, cmd_train_diag, CliResult, Context, RunConfig,
};

#[derive(Debug, Parser)]
#[command(name = "fiberwatch", version, about = "Synthetic OTDR fault detection, diagnosis and monitoring")]
struct Cli {
    /// JSON run configuration; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random stream (required here or in the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for datasets, models, reports and traces.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the anomaly and diagnosis datasets.
    Gen {
        #[arg(long)]
        ae_size: Option<usize>,
        #[arg(long)]
        diag_size: Option<usize>,
        /// Also write this many monitor traces (half faulty, half clean).
        #[arg(long, default_value_t = 0)]
        traces: usize,
    },
    /// Train the GRU autoencoder on normal sequences.
    TrainAe {
        /// Maximum epochs.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Calibrate the detection threshold on the validation split.
    Calibrate,
    /// Train the attention BiGRU diagnoser.
    TrainDiag {
        #[arg(long)]
        epochs: Option<usize>,
        /// Weight of the classification loss.
        #[arg(long)]
        lambda1: Option<f64>,
        /// Weight of the localization loss.
        #[arg(long)]
        lambda2: Option<f64>,
        /// Also train the flat five-class comparison model.
        #[arg(long)]
        flat: bool,
    },
    /// Evaluate every model and write the report files.
    Eval,
    /// Monitor trace files or directories and stream alerts to stdout.
    Monitor {
        /// Trace JSON files, or directories scanned for them.
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        /// Window stride in samples.
        #[arg(long)]
        stride: Option<usize>,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match &cli.command {
        Command::Gen { ae_size, diag_size, .. } => {
            if let Some(n) = ae_size {
                config.generator.ae_size = *n;
            }
            if let Some(n) = diag_size {
                config.generator.diag_size = *n;
            }
        }
        Command::TrainAe { epochs: Some(e) } => config.ae_training.max_epochs = *e,
        Command::TrainDiag {
            epochs, lambda1, lambda2, ..
        } => {
            if let Some(e) = epochs {
                config.diag_training.max_epochs = *e;
            }
            if let Some(l) = lambda1 {
                config.diagnoser.loss_weights.lambda_1 = *l;
            }
            if let Some(l) = lambda2 {
                config.diagnoser.loss_weights.lambda_2 = *l;
            }
        }
        Command::Monitor { stride: Some(s), .. } => config.monitor.stride = *s,
        _ => {}
    }
    let ctx = Context::new(config, cli.seed, cli.out.clone())?;
    let mut log = io::stderr().lock();
    match cli.command {
        Command::Gen { traces, .. } => cmd_gen(&ctx, traces, &mut log).map(drop),
        Command::TrainAe { .. } => cmd_train_ae(&ctx, &mut log).map(drop),
        Command::Calibrate => cmd_calibrate(&ctx, &mut log).map(drop),
        Command::TrainDiag { flat, .. } => cmd_train_diag(&ctx, flat, &mut log).map(drop),
        Command::Eval => cmd_eval(&ctx, &mut log).map(drop),
        Command::Monitor { traces, .. } => {
            let mut out = io::stdout().lock();
            cmd_monitor(&ctx, &traces, &mut out, &mut log).map(drop)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(io::stderr(), "error: {e}");
            ExitCode::from(e.kind.code() as u8)
        }
    }
}
