use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fbpick_cli::commands;
use fbpick_cli::{CliError, CliResult, Preset, RunConfig};

/// First-break picking with a Monte Carlo dropout U-Net.
#[derive(Parser)]
#[command(name = "fbpick", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON); keys not given fall back to the preset.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Base defaults; overrides the config file's `preset` key.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Override one config key, e.g. `--set training.max_epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Run seed (`seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (`paths.out`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus: one directory per survey plus manifest.json.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Dataset directory to create (`paths.data`).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train on the configured regime; writes a checkpoint, training log and T_p calibration.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory with manifest.json (`paths.data`).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Initial weights; required by the finetuning regime (`paths.pretrained`).
        #[arg(long)]
        pretrained: Option<PathBuf>,
    },
    /// Pick first breaks; one `<name>.picks.csv` per gather file.
    Pick {
        #[command(flatten)]
        common: Common,
        /// Checkpoint manifest (`paths.checkpoint`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        gathers: Vec<PathBuf>,
    },
    /// Score pick reports against the labels stored in the gather files.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Directory of pick reports; repeat for several runs to get mean and std.
        #[arg(long = "picks", required = true)]
        picks: Vec<PathBuf>,
        gathers: Vec<PathBuf>,
    },
    /// Noise sweep over the configured SNR levels plus the clean baseline.
    Robustness {
        #[command(flatten)]
        common: Common,
        /// Checkpoint manifest (`paths.checkpoint`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        gathers: Vec<PathBuf>,
    },
}

fn path_override(key: &str, p: &Option<PathBuf>, into: &mut Vec<String>) -> CliResult<()> {
    if let Some(p) = p {
        let s = p.to_str().ok_or_else(|| CliError::Config(format!("{key}: path is not UTF-8")))?;
        into.push(format!("{key}={}", serde_json::Value::String(s.into())));
    }
    Ok(())
}

fn resolve(common: &Common, extra: &[(&str, &Option<PathBuf>)]) -> CliResult<RunConfig> {
    let mut o = common.overrides.clone();
    if let Some(s) = common.seed {
        o.push(format!("seed={s}"));
    }
    path_override("paths.out", &common.out, &mut o)?;
    for (k, p) in extra {
        path_override(k, p, &mut o)?;
    }
    RunConfig::resolve(common.config.as_deref(), common.preset, &o)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth { common, data } => {
            let cfg = resolve(&common, &[("paths.data", &data)])?;
            commands::synth(&cfg)?;
        }
        Command::Train { common, data, pretrained } => {
            let cfg = resolve(&common, &[("paths.data", &data), ("paths.pretrained", &pretrained)])?;
            commands::train(&cfg)?;
        }
        Command::Pick { common, checkpoint, gathers } => {
            let cfg = resolve(&common, &[("paths.checkpoint", &checkpoint)])?;
            let s = commands::pick(&cfg, &gathers)?;
            if !s.failed.is_empty() {
                return Err(CliError::Data(format!("{} of {} gathers failed", s.failed.len(), gathers.len())));
            }
        }
        Command::Eval { common, picks, gathers } => {
            let cfg = resolve(&common, &[])?;
            commands::eval(&cfg, &picks, &gathers)?;
        }
        Command::Robustness { common, checkpoint, gathers } => {
            let cfg = resolve(&common, &[("paths.checkpoint", &checkpoint)])?;
            commands::robustness(&cfg, &gathers)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fbpick: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
