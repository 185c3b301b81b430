//! Command implementations behind the binary: training, evaluation,
//! inference, feature extraction, cost reporting, gradient checking, and
//! the two comparison experiments. Everything here is a plain function so
//! integration tests drive the same code paths as the executable.

use crate::ckpt::{self, Checkpoint};
use crate::config::{Arch, OptimizerKind, RunConfig, SchedulingKind};
use crate::data::{scan_dataset_expecting, CacheMode, Loader, Split};
use crate::dsp;
use crate::error::{Error, Result};
use crate::model::{self, mixer, ModelConfig, NormPlacement};
use crate::rng::{stream, Stream};
use crate::train::{self, EpochRow, Network, TrainOptions};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Environment variable overriding the feature-cache directory.
pub const CACHE_DIR_ENV: &str = "KWMLP_CACHE_DIR";

fn out_dir(cfg: &RunConfig) -> PathBuf {
    PathBuf::from(cfg.out_dir.clone().unwrap_or_else(|| "runs".to_string()))
}

fn cache_mode(cfg: &RunConfig, n_entries: usize) -> CacheMode {
    let dir = std::env::var(CACHE_DIR_ENV)
        .ok()
        .or_else(|| cfg.cache_dir.clone());
    match dir {
        Some(d) => CacheMode::Disk(PathBuf::from(d)),
        // Feature matrices are ~15 KB each; hold small sets in memory and
        // recompute for big ones rather than ballooning RAM.
        None if n_entries <= 30_000 => CacheMode::Memory,
        None => CacheMode::None,
    }
}

fn open_loader(cfg: &RunConfig, expected_labels: Option<&[String]>) -> Result<Loader> {
    let root = cfg
        .data_root
        .as_ref()
        .ok_or_else(|| Error::config("data_root is required (config key or --data-root)"))?;
    let index = scan_dataset_expecting(Path::new(root), expected_labels)?;
    if expected_labels.is_none() && index.n_classes() != cfg.num_classes {
        return Err(Error::config(format!(
            "dataset has {} labels but num_classes = {}; set num_classes to match",
            index.n_classes(),
            cfg.num_classes
        )));
    }
    let mode = cache_mode(cfg, index.entries.len());
    Ok(Loader::new(index, cfg.mfcc_config(), mode))
}

fn fresh_network(cfg: &RunConfig) -> Result<Network> {
    let mut rng = stream(cfg.seed, Stream::Init, 0);
    Ok(match cfg.arch {
        Arch::KwMlp => Network::KwMlp(model::ModelParams::init(cfg.model_config(), &mut rng)?),
        Arch::Mixer => Network::Mixer(mixer::MixerParams::init(cfg.mixer_config(), &mut rng)?),
    })
}

pub struct TrainArtifacts {
    pub metrics_csv: PathBuf,
    pub best_ckpt: PathBuf,
    pub final_ckpt: PathBuf,
    pub rows: Vec<EpochRow>,
    pub best_val_acc: f64,
}

/// Train per the config; writes the metrics CSV row by row and retains the
/// best-validation checkpoint plus the final one.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainArtifacts> {
    cmd_train_with(cfg, "", &TrainOptions {
        subset: cfg.train_subset,
        stop_at_train_acc: None,
    })
}

/// `prefix` namespaces the artifacts inside out_dir (ablation arms share a
/// directory): `""` writes metrics.csv / best.ckpt / final.ckpt /
/// config.json, a prefix writes `<prefix>.csv`, `<prefix>.best.ckpt`, ...
pub fn cmd_train_with(cfg: &RunConfig, prefix: &str, opts: &TrainOptions) -> Result<TrainArtifacts> {
    cfg.validate()?;
    println!("run seed: {}", cfg.seed);
    let mut loader = open_loader(cfg, None)?;
    let labels = loader.index.labels.clone();
    let mut net = fresh_network(cfg)?;

    let name = |plain: &str, prefixed: &str| -> String {
        if prefix.is_empty() {
            plain.to_string()
        } else {
            format!("{prefix}{prefixed}")
        }
    };
    let dir = out_dir(cfg);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(name("config.json", ".config.json")), cfg.to_json())?;
    let metrics_csv = dir.join(name("metrics.csv", ".csv"));
    let mut csv = fs::File::create(&metrics_csv)?;
    writeln!(csv, "{}", EpochRow::CSV_HEADER)?;

    let train_cfg = cfg.train_config();
    let outcome = train::train(&mut net, &mut loader, &train_cfg, opts, |row| {
        let _ = writeln!(csv, "{}", row.to_csv());
        let _ = csv.flush();
        println!(
            "epoch {:>4}/{} lr {:.6} train_loss {:.4} val_loss {:.4} val_acc {:.4}",
            row.epoch, train_cfg.epochs, row.lr, row.train_loss, row.val_loss, row.val_acc
        );
    })?;

    let best_ckpt = dir.join(name("best.ckpt", ".best.ckpt"));
    ckpt::save(&best_ckpt, &Checkpoint::from_network(cfg, &labels, &outcome.best))?;
    let final_ckpt = dir.join(name("final.ckpt", ".final.ckpt"));
    ckpt::save(&final_ckpt, &Checkpoint::from_network(cfg, &labels, &net))?;
    println!(
        "best val_acc {:.4} at epoch {}; checkpoints in {}",
        outcome.best_val_acc,
        outcome.best_epoch,
        dir.display()
    );
    Ok(TrainArtifacts {
        metrics_csv,
        best_ckpt,
        final_ckpt,
        rows: outcome.rows,
        best_val_acc: outcome.best_val_acc,
    })
}

/// Evaluate a checkpoint on one split; prints and returns (accuracy, loss).
pub fn cmd_eval(ckpt_path: &Path, split: Split, data_root: Option<&str>) -> Result<(f64, f64)> {
    let checkpoint = ckpt::load(ckpt_path)?;
    let net = checkpoint.to_network()?;
    let mut cfg = checkpoint.config.clone();
    if let Some(root) = data_root {
        cfg.data_root = Some(root.to_string());
    }
    let mut loader = open_loader(&cfg, Some(&checkpoint.labels))?;
    let entries = loader.entries(split);
    let (acc, loss) = train::evaluate(&net, &mut loader, &entries, cfg.label_smoothing)?;
    println!("accuracy {acc:.4} loss {loss:.4} over {} clips", entries.len());
    Ok((acc, loss))
}

/// Classify one WAV; prints and returns the top-5 labels with softmax
/// probabilities, highest first.
pub fn cmd_infer(ckpt_path: &Path, wav: &Path) -> Result<Vec<(String, f32)>> {
    let checkpoint = ckpt::load(ckpt_path)?;
    let net = checkpoint.to_network()?;
    let clip = dsp::load_wav(wav)?;
    let clip = dsp::pad_or_trim(clip, dsp::CLIP_SAMPLES);
    let mfcc = dsp::compute_mfcc(&clip, &checkpoint.config.mfcc_config())?;
    let logits = net.logits(&mfcc.to_tensor())?;

    let mx = logits.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f32> = logits.iter().map(|&l| (l - mx).exp()).collect();
    let z: f32 = exps.iter().sum();
    let mut ranked: Vec<(String, f32)> = checkpoint
        .labels
        .iter()
        .cloned()
        .zip(exps.iter().map(|e| e / z))
        .collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite probabilities"));
    ranked.truncate(5);
    for (label, p) in &ranked {
        println!("{label}: {p:.4}");
    }
    Ok(ranked)
}

/// Extract features: a single WAV to a cache blob, or warm a whole
/// dataset's cache directory.
pub fn cmd_features(cfg: &RunConfig, wav: Option<&Path>, out: Option<&Path>) -> Result<()> {
    match wav {
        Some(wav_path) => {
            let clip = dsp::load_wav(wav_path)?;
            let clip = dsp::pad_or_trim(clip, dsp::CLIP_SAMPLES);
            let mfcc = dsp::compute_mfcc(&clip, &cfg.mfcc_config())?;
            let (rows, cols) = mfcc.shape();
            println!("{rows}x{cols}");
            if let Some(out_path) = out {
                dsp::cache::write_blob(out_path, &mfcc)?;
                println!("wrote {}", out_path.display());
            }
            Ok(())
        }
        None => {
            let cache = std::env::var(CACHE_DIR_ENV).ok().or_else(|| cfg.cache_dir.clone());
            let cache = cache.ok_or_else(|| {
                Error::config("dataset mode needs cache_dir (or KWMLP_CACHE_DIR) to write into")
            })?;
            let root = cfg
                .data_root
                .as_ref()
                .ok_or_else(|| Error::config("dataset mode needs data_root"))?;
            let index = scan_dataset_expecting(Path::new(root), None)?;
            let mut loader = Loader::new(index, cfg.mfcc_config(), CacheMode::Disk(PathBuf::from(cache)));
            let n = loader.warm_cache()?;
            println!("cached {n} feature files");
            Ok(())
        }
    }
}

/// Parameter budget gate: within this fraction of the reference count.
pub fn params_within_gate(total: usize) -> bool {
    let lo = model::REFERENCE_PARAMS as f64 * (1.0 - model::REFERENCE_PARAMS_TOLERANCE);
    let hi = model::REFERENCE_PARAMS as f64 * (1.0 + model::REFERENCE_PARAMS_TOLERANCE);
    (total as f64) >= lo && (total as f64) <= hi
}

pub fn macs_within_gate(total: u64) -> bool {
    let lo = model::REFERENCE_MACS as f64 * (1.0 - model::REFERENCE_MACS_TOLERANCE);
    let hi = model::REFERENCE_MACS as f64 * (1.0 + model::REFERENCE_MACS_TOLERANCE);
    (total as f64) >= lo && (total as f64) <= hi
}

/// Print the per-component parameter count; with `check`, report whether
/// the default-architecture budget gate holds (KW-MLP only).
pub fn cmd_params(cfg: &RunConfig, check: bool) -> Result<bool> {
    let net = fresh_network(cfg)?;
    let count = net.count_params();
    for (component, n) in &count.breakdown {
        println!("{component:<48} {n:>10}");
    }
    println!("{:<48} {:>10}", "total", count.total);
    if !check {
        return Ok(true);
    }
    match cfg.arch {
        Arch::KwMlp => {
            let ok = params_within_gate(count.total);
            println!(
                "check: {} (reference {} +-{}%)",
                if ok { "PASS" } else { "FAIL" },
                model::REFERENCE_PARAMS,
                model::REFERENCE_PARAMS_TOLERANCE * 100.0
            );
            Ok(ok)
        }
        Arch::Mixer => Err(Error::config("--check has a reference budget for the kwmlp arch only")),
    }
}

/// Print the MAC count (1 MAC = 1 FLOP); with `check`, gate against the
/// reference budget (KW-MLP only).
pub fn cmd_flops(cfg: &RunConfig, check: bool) -> Result<bool> {
    let macs = match cfg.arch {
        Arch::KwMlp => model::count_macs(&cfg.model_config()),
        Arch::Mixer => mixer::count_macs(&cfg.mixer_config()),
    };
    println!("{macs} MACs per forward ({:.4} G)", macs as f64 / 1e9);
    if !check {
        return Ok(true);
    }
    match cfg.arch {
        Arch::KwMlp => {
            let ok = macs_within_gate(macs);
            println!(
                "check: {} (reference {} +-{}%)",
                if ok { "PASS" } else { "FAIL" },
                model::REFERENCE_MACS,
                model::REFERENCE_MACS_TOLERANCE * 100.0
            );
            Ok(ok)
        }
        Arch::Mixer => Err(Error::config("--check has a reference budget for the kwmlp arch only")),
    }
}

/// The toy configuration the double-precision gradient suite runs at.
pub fn gradcheck_toy_model() -> ModelConfig {
    ModelConfig {
        f_bins: 8,
        n_tokens: 6,
        dim: 8,
        dim_proj: 16,
        n_blocks: 2,
        n_classes: 3,
        norm: NormPlacement::Post,
    }
}

pub fn gradcheck_toy_mixer() -> mixer::MixerConfig {
    mixer::MixerConfig {
        f_bins: 5,
        n_tokens: 6,
        dim: 8,
        token_hidden: 4,
        channel_hidden: 16,
        n_blocks: 2,
        n_classes: 3,
    }
}

/// Run the toy-scale finite-difference suite; returns the worst error and
/// whether every seed stayed within 1e-4.
pub fn cmd_gradcheck(arch: Arch, seeds: u64) -> Result<(f64, bool)> {
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        let err = match arch {
            Arch::KwMlp => model::gradient_check(&gradcheck_toy_model(), seed, 1e-4)?,
            Arch::Mixer => mixer::gradient_check(&gradcheck_toy_mixer(), seed, 1e-4)?,
        };
        println!("seed {seed}: max relative error {err:.3e}");
        worst = worst.max(err);
    }
    let pass = worst <= 1e-4;
    println!("gradcheck {}: worst {worst:.3e}", if pass { "PASS" } else { "FAIL" });
    Ok((worst, pass))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblateKind {
    /// Post-norm vs pre-norm placement, all else identical.
    Prenorm,
    /// KW-MLP vs the mixer under its own recipe.
    Mixer,
}

impl AblateKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "prenorm" => Ok(AblateKind::Prenorm),
            "mixer" => Ok(AblateKind::Mixer),
            other => Err(Error::config(format!(
                "unknown ablation {other:?}; expected prenorm or mixer"
            ))),
        }
    }
}

/// Run both arms of a comparison with a shared seed and data order, writing
/// one aligned per-epoch validation CSV per arm. Returns the two CSV paths
/// (baseline arm first).
pub fn cmd_ablate(kind: AblateKind, cfg: &RunConfig) -> Result<(PathBuf, PathBuf)> {
    let opts = TrainOptions {
        subset: cfg.train_subset,
        stop_at_train_acc: None,
    };
    match kind {
        AblateKind::Prenorm => {
            let post = RunConfig {
                norm_placement: NormPlacement::Post,
                arch: Arch::KwMlp,
                ..cfg.clone()
            };
            let pre = RunConfig {
                norm_placement: NormPlacement::Pre,
                ..post.clone()
            };
            println!("== post-norm arm ==");
            let a = cmd_train_with(&post, "ablate_postnorm", &opts)?;
            println!("== pre-norm arm ==");
            let b = cmd_train_with(&pre, "ablate_prenorm", &opts)?;
            Ok((a.metrics_csv, b.metrics_csv))
        }
        AblateKind::Mixer => {
            let kwmlp = RunConfig {
                arch: Arch::KwMlp,
                ..cfg.clone()
            };
            // The comparison arm trains under its own recipe: Adam,
            // exponential decay, batch 64; epochs stay aligned with the
            // baseline so the curves share an x-axis.
            let mixer_cfg = RunConfig {
                arch: Arch::Mixer,
                optimizer: OptimizerKind::Adam,
                scheduling: SchedulingKind::Exponential,
                batch_size: 64,
                warmup_epochs: 0,
                block_survival_prob: 1.0,
                ..cfg.clone()
            };
            println!("== kw-mlp arm ==");
            let a = cmd_train_with(&kwmlp, "ablate_kwmlp", &opts)?;
            println!("== mixer arm ==");
            let b = cmd_train_with(&mixer_cfg, "ablate_mixer", &opts)?;
            Ok((a.metrics_csv, b.metrics_csv))
        }
    }
}
