use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use st3d_cli::{
    cmd_eval, cmd_gradcheck, cmd_inspect, cmd_predict, cmd_train, set_threads, CliResult, Overrides, RunConfig,
};

/// Train and run 3D residual networks for video action recognition.
#[derive(Parser)]
#[command(name = "st3d", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Network depth: 18 or 34.
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    /// Directory holding the frame folders named in the manifest.
    #[arg(long)]
    root: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory (train) or predictions file (predict).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for the numeric kernels.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a manifest, writing metrics and checkpoints to --out.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Initial learning rate; 0 performs a single dry-run epoch.
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Video-level top-1/top-5 accuracy on a labelled manifest.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Per-video top-5 predictions.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Print the layer table with output shapes and parameter counts.
    Inspect {
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference check of every backward pass.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        threads: Option<usize>,
        /// Perturb one layer's analytic gradient (negative control).
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
}

fn config_for(common: &Common, lr: Option<f64>, epochs: Option<usize>) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load_or_default(common.config.as_deref())?;
    cfg.apply(&Overrides {
        seed: common.seed,
        depth: common.depth,
        classes: common.classes,
        root: common.root.clone(),
        manifest: common.manifest.clone(),
        out: common.out.clone(),
        lr,
        epochs,
    });
    cfg.validate()?;
    set_threads(common.threads)?;
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Train {
            common,
            resume,
            lr,
            epochs,
        } => {
            let cfg = config_for(&common, lr, epochs)?;
            cmd_train(&cfg, resume.as_deref(), &mut out)
        }
        Command::Eval { common, checkpoint } => {
            let cfg = config_for(&common, None, None)?;
            cmd_eval(&cfg, &checkpoint, &mut out)
        }
        Command::Predict { common, checkpoint } => {
            let cfg = config_for(&common, None, None)?;
            cmd_predict(&cfg, &checkpoint, common.out.as_deref(), &mut out)
        }
        Command::Inspect { common } => {
            let cfg = config_for(&common, None, None)?;
            cmd_inspect(&cfg, &mut out)
        }
        Command::Gradcheck { seed, threads, corrupt } => {
            set_threads(threads)?;
            cmd_gradcheck(seed, corrupt.as_deref(), &mut out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = std::io::stdout().flush();
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
