use clap::{Parser, Subcommand};
use kwmlp::cli;
use kwmlp::config::{Arch, RunConfig};
use kwmlp::data::Split;
use kwmlp::error::{Error, Result};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "kwmlp", version, about = "Gated-MLP keyword spotting on Speech Commands")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a config file (plus --key value overrides).
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Config overrides as `--key value` pairs, e.g. `--epochs 1`.
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        data_root: Option<String>,
    },
    /// Classify one WAV clip; prints top-5 labels with probabilities.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        wav: PathBuf,
    },
    /// Extract MFCC features: one WAV (--wav [--out blob]) or a whole
    /// dataset cache (--config with data_root + cache_dir).
    Features {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        wav: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Report the parameter count with a per-component breakdown.
    Params {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Exit nonzero if outside the reference budget.
        #[arg(long)]
        check: bool,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Report multiply-accumulates per forward pass (1 MAC = 1 FLOP).
    Flops {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        check: bool,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Double-precision finite-difference gradient suite at toy scale.
    Gradcheck {
        #[arg(long, default_value = "kwmlp")]
        arch: String,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
    /// Run both arms of a comparison: `prenorm` (norm placement) or
    /// `mixer` (architecture), with a shared seed and data order.
    Ablate {
        which: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
}

/// Split trailing `--key value` pairs.
fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = raw.iter();
    while let Some(key) = it.next() {
        let key = key
            .strip_prefix("--")
            .ok_or_else(|| Error::config(format!("expected --key, got {key:?}")))?;
        let value = it
            .next()
            .ok_or_else(|| Error::config(format!("override --{key} is missing a value")))?;
        out.push((key.to_string(), value.clone()));
    }
    Ok(out)
}

fn load_config(path: Option<&PathBuf>, overrides: &[String]) -> Result<RunConfig> {
    RunConfig::load(path.map(|p| p.as_path()), &parse_overrides(overrides)?)
}

fn parse_arch(name: &str) -> Result<Arch> {
    match name {
        "kwmlp" => Ok(Arch::KwMlp),
        "mixer" => Ok(Arch::Mixer),
        other => Err(Error::config(format!("unknown arch {other:?}; expected kwmlp or mixer"))),
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Train { config, overrides } => {
            let cfg = load_config(config.as_ref(), &overrides)?;
            cli::cmd_train(&cfg)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval { ckpt, split, data_root } => {
            cli::cmd_eval(&ckpt, Split::parse(&split)?, data_root.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Infer { ckpt, wav } => {
            cli::cmd_infer(&ckpt, &wav)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Features { config, wav, out, overrides } => {
            let cfg = load_config(config.as_ref(), &overrides)?;
            cli::cmd_features(&cfg, wav.as_deref(), out.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Params { config, check, overrides } => {
            let cfg = load_config(config.as_ref(), &overrides)?;
            let ok = cli::cmd_params(&cfg, check)?;
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
        Command::Flops { config, check, overrides } => {
            let cfg = load_config(config.as_ref(), &overrides)?;
            let ok = cli::cmd_flops(&cfg, check)?;
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
        Command::Gradcheck { arch, seeds } => {
            let (_, pass) = cli::cmd_gradcheck(parse_arch(&arch)?, seeds)?;
            Ok(if pass { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
        Command::Ablate { which, config, overrides } => {
            let cfg = load_config(config.as_ref(), &overrides)?;
            cli::cmd_ablate(cli::AblateKind::parse(&which)?, &cfg)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
