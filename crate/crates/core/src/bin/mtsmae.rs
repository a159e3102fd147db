use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use mtsmae::run::{self, Overrides, Profile, RunConfig, SweepAxis};
use mtsmae::{Error, ErrorKind};

/// Masked-autoencoder pretraining and forecasting for multivariate series.
#[derive(Parser)]
#[command(name = "mtsmae", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run configuration (TOML). Profile defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every stochastic step; overrides the file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    profile: Option<ProfileArg>,
    /// Overwrite a non-empty output directory.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Desk,
    Full,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic series from a TOML spec.
    Synth {
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Masked-reconstruction pretraining.
    Pretrain {
        #[arg(long)]
        out: PathBuf,
    },
    /// Forecast training; from scratch unless --init names a pretraining checkpoint.
    Finetune {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Rolling evaluation of a fine-tuned checkpoint on the test split.
    Evaluate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, visible_alias = "init")]
        ckpt: PathBuf,
    },
    /// Pretrain, fine-tune and evaluate once per value of one axis.
    Sweep {
        #[arg(long)]
        out: PathBuf,
        /// mask_ratio, decoder_depth or input_len
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Training => 4,
        ErrorKind::Io => 5,
    }
}

fn kind_name(kind: ErrorKind) -> &'static str {
    match kind {
        ErrorKind::Config => "config",
        ErrorKind::Data => "data",
        ErrorKind::Training => "training",
        ErrorKind::Io => "io",
    }
}

fn fail(kind: ErrorKind, message: &str) -> ExitCode {
    let one_line = message.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!(
        "error: kind={} code={} message={one_line}",
        kind_name(kind),
        exit_code(kind)
    );
    ExitCode::from(exit_code(kind))
}

fn execute(cli: Cli) -> Result<serde_json::Value, Error> {
    let overrides = Overrides {
        profile: cli.global.profile.map(|p| match p {
            ProfileArg::Desk => Profile::Desk,
            ProfileArg::Full => Profile::Full,
        }),
        seed: cli.global.seed,
    };
    let force = cli.global.force;
    let config = || RunConfig::load(cli.global.config.as_deref(), &overrides);
    Ok(match &cli.command {
        Command::Synth { spec, out } => {
            let frame = run::cmd_synth(spec, out, force)?;
            json!({ "rows": frame.len(), "features": frame.n_features(), "csv": out })
        }
        Command::Pretrain { out } => {
            let s = run::cmd_pretrain(&config()?, out, force)?;
            json!({ "epoch_losses": s.epoch_losses, "checkpoint": s.checkpoint })
        }
        Command::Finetune { out, init } => {
            let s = run::cmd_finetune(&config()?, init.as_deref(), out, force)?;
            json!({
                "best_epoch": s.best_epoch,
                "best_val": s.best_val,
                "epochs_run": s.epochs_run,
                "stopped_early": s.stopped_early,
                "checkpoint": s.checkpoint,
            })
        }
        Command::Evaluate { out, ckpt } => {
            let s = run::cmd_evaluate(&config()?, ckpt, out, force)?;
            json!({
                "mse": s.mse,
                "mae": s.mae,
                "baseline_mse": s.baseline_mse,
                "baseline_mae": s.baseline_mae,
                "windows": s.windows,
            })
        }
        Command::Sweep {
            out,
            axis,
            values,
            jobs,
        } => {
            let axis: SweepAxis = axis.parse()?;
            let rows = run::cmd_sweep(&config()?, axis, values, *jobs, out, force)?;
            json!({ "axis": axis.to_string(), "rows": rows.len(), "summary": out.join("summary.csv") })
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MTSMAE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            return fail(ErrorKind::Config, first);
        }
    };
    match execute(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.kind(), &e.to_string()),
    }
}
