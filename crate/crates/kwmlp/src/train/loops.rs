//! The train and evaluate loops over either architecture.

use super::optim::{AdamW, GradStore};
use super::{label_smoothed_ce, lr_at, sample_block_mask, Schedule, TrainConfig};
use crate::data::Loader;
use crate::error::{Error, Result};
use crate::model::{self, mixer, ParamCount, ParamKind};
use crate::rng::{stream, Stream};
use crate::tensor::graph::{Graph, Var};
use crate::tensor::{Real, Tensor};

/// Either architecture behind one training/evaluation surface.
#[derive(Debug, Clone)]
pub enum Network {
    KwMlp(model::ModelParams),
    Mixer(mixer::MixerParams),
}

pub enum NetworkVars {
    KwMlp(model::ModelVars),
    Mixer(mixer::MixerVars),
}

impl NetworkVars {
    pub fn flat(&self) -> Vec<Var> {
        match self {
            NetworkVars::KwMlp(v) => v.flat(),
            NetworkVars::Mixer(v) => v.flat(),
        }
    }
}

impl Network {
    pub fn n_classes(&self) -> usize {
        match self {
            Network::KwMlp(p) => p.config.n_classes,
            Network::Mixer(p) => p.config.n_classes,
        }
    }

    /// Block count for stochastic depth; the mixer trains without it.
    pub fn droppable_blocks(&self) -> Option<usize> {
        match self {
            Network::KwMlp(p) => Some(p.config.n_blocks),
            Network::Mixer(_) => None,
        }
    }

    pub fn visit(&self, f: &mut impl FnMut(&str, ParamKind, &Tensor<f32>)) {
        match self {
            Network::KwMlp(p) => p.visit(f),
            Network::Mixer(p) => p.visit(f),
        }
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&str, ParamKind, &mut Tensor<f32>)) {
        match self {
            Network::KwMlp(p) => p.visit_mut(f),
            Network::Mixer(p) => p.visit_mut(f),
        }
    }

    pub fn insert_params<F: Real>(&self, g: &mut Graph<F>, trainable: bool) -> NetworkVars {
        match self {
            Network::KwMlp(p) => NetworkVars::KwMlp(model::insert_params(p, g, trainable)),
            Network::Mixer(p) => NetworkVars::Mixer(mixer::insert_params(p, g, trainable)),
        }
    }

    /// Forward to logits. `mask` applies to KW-MLP blocks; `None` means all
    /// active.
    pub fn forward_graph<F: Real>(
        &self,
        g: &mut Graph<F>,
        vars: &NetworkVars,
        input: Var,
        mask: Option<&[bool]>,
    ) -> Result<Var> {
        match (self, vars) {
            (Network::KwMlp(p), NetworkVars::KwMlp(v)) => {
                let all = vec![true; p.config.n_blocks];
                let mask = mask.unwrap_or(&all);
                model::forward(g, v, &p.config, input, mask)
            }
            (Network::Mixer(p), NetworkVars::Mixer(v)) => mixer::forward(g, v, &p.config, input),
            _ => Err(Error::contract("network/vars architecture mismatch")),
        }
    }

    pub fn logits(&self, feature: &Tensor<f32>) -> Result<Vec<f32>> {
        match self {
            Network::KwMlp(p) => model::logits(p, feature),
            Network::Mixer(p) => mixer::logits(p, feature),
        }
    }

    pub fn count_params(&self) -> ParamCount {
        match self {
            Network::KwMlp(p) => model::count_params(p),
            Network::Mixer(p) => mixer::count_params(p),
        }
    }

    pub fn count_macs(&self) -> u64 {
        match self {
            Network::KwMlp(p) => model::count_macs(&p.config),
            Network::Mixer(p) => mixer::count_macs(&p.config),
        }
    }

    pub fn arch_name(&self) -> &'static str {
        match self {
            Network::KwMlp(_) => "kwmlp",
            Network::Mixer(_) => "mixer",
        }
    }
}

/// One metrics row, appended per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

impl EpochRow {
    pub const CSV_HEADER: &'static str = "epoch,step,lr,train_loss,val_loss,val_acc";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch, self.step, self.lr, self.train_loss, self.val_loss, self.val_acc
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Deterministic subset of the train split (seeded draw), for quick
    /// comparison runs on a slice of the data.
    pub subset: Option<usize>,
    /// Stop once the train split reaches this accuracy (checked after each
    /// epoch's validation pass).
    pub stop_at_train_acc: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub rows: Vec<EpochRow>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    /// Parameters at the best-validation epoch.
    pub best: Network,
    /// Train accuracy at the last epoch run, when `stop_at_train_acc`
    /// tracking was on.
    pub final_train_acc: Option<f64>,
}

/// Deterministic no-augmentation pass over `entries`: mean label-smoothed
/// loss and top-1 accuracy.
pub fn evaluate(
    net: &Network,
    loader: &mut Loader,
    entries: &[usize],
    smoothing: f64,
) -> Result<(f64, f64)> {
    if entries.is_empty() {
        return Err(Error::contract("evaluate on an empty split"));
    }
    let mut loss_sum = 0.0f64;
    let mut correct = 0usize;
    for &entry in entries {
        let mfcc = loader.mfcc(entry)?;
        let label = loader.label(entry);
        let mut g: Graph<f32> = Graph::new();
        let vars = net.insert_params(&mut g, false);
        let input = g.constant(mfcc.to_tensor());
        let logits = net.forward_graph(&mut g, &vars, input, None)?;
        let loss = label_smoothed_ce(&mut g, logits, &[label], smoothing)?;
        loss_sum += g.value(loss).data()[0] as f64;
        let out = g.value(logits).data();
        let argmax = out
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
            .expect("non-empty logits")
            .0;
        correct += (argmax == label) as usize;
    }
    Ok((
        correct as f64 / entries.len() as f64,
        loss_sum / entries.len() as f64,
    ))
}

/// Run the full recipe. Per epoch: a seeded shuffle of the train entries,
/// SpecAugment per clip, one block-drop mask per batch, per-clip tapes with
/// `1/B`-scaled losses accumulated into one AdamW step per batch, then a
/// deterministic validation pass. The best-validation parameters are
/// retained in the outcome; `on_epoch` sees each metrics row as it lands.
pub fn train(
    net: &mut Network,
    loader: &mut Loader,
    cfg: &TrainConfig,
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut train_entries = loader.entries(crate::data::Split::Train);
    if let Some(n) = opts.subset {
        if n < train_entries.len() {
            let mut rng = stream(cfg.seed, Stream::Subset, 0);
            rng.shuffle(&mut train_entries);
            train_entries.truncate(n);
            train_entries.sort_unstable();
        }
    }
    if train_entries.is_empty() {
        return Err(Error::contract("train split is empty"));
    }
    let val_entries = loader.entries(crate::data::Split::Val);
    if val_entries.is_empty() {
        return Err(Error::contract("validation split is empty"));
    }

    let steps_per_epoch = train_entries.len().div_ceil(cfg.batch_size) as u64;
    let mut optimizer = AdamW::new(net, cfg.weight_decay);
    let mut grads = GradStore::zeros_like(net);
    let mut rows = Vec::with_capacity(cfg.epochs);
    let mut best_epoch = 0usize;
    let mut best_val_acc = f64::NEG_INFINITY;
    let mut best: Option<Network> = None;
    let mut global_step = 0u64;
    let mut final_train_acc = None;

    for epoch in 0..cfg.epochs {
        let mut drop_rng = stream(cfg.seed, Stream::BlockDrop, epoch as u64);
        let batches = crate::data::batch_stream(
            loader,
            train_entries.clone(),
            cfg.batch_size,
            Some(stream(cfg.seed, Stream::Shuffle, epoch as u64)),
            Some((cfg.augment, stream(cfg.seed, Stream::Augment, epoch as u64))),
        );

        let mut loss_sum = 0.0f64;
        let mut seen = 0usize;
        let mut last_lr = 0.0f64;
        for batch in batches {
            let batch = batch?;
            let mask = net
                .droppable_blocks()
                .map(|blocks| sample_block_mask(blocks, cfg.block_survival, &mut drop_rng));
            let lr = lr_at(global_step, steps_per_epoch, cfg);
            last_lr = lr;
            grads.reset();
            for i in 0..batch.len() {
                let mut g: Graph<f32> = Graph::new();
                let vars = net.insert_params(&mut g, true);
                let input = g.constant(batch.clip(i));
                let logits = net.forward_graph(&mut g, &vars, input, mask.as_deref())?;
                let clip_loss =
                    label_smoothed_ce(&mut g, logits, &[batch.labels[i]], cfg.label_smoothing)?;
                let scaled = g.scale(clip_loss, 1.0 / batch.len() as f64);
                g.backward(scaled)?;
                loss_sum += g.value(clip_loss).data()[0] as f64;
                grads.accumulate(&g, &vars.flat());
            }
            seen += batch.len();
            optimizer.step(net, &grads, lr as f32);
            global_step += 1;
        }

        let (val_acc, val_loss) = evaluate(net, loader, &val_entries, cfg.label_smoothing)?;
        let row = EpochRow {
            epoch: epoch + 1,
            step: global_step,
            lr: last_lr,
            train_loss: loss_sum / seen as f64,
            val_loss,
            val_acc,
        };
        on_epoch(&row);
        rows.push(row);

        if val_acc > best_val_acc {
            best_val_acc = val_acc;
            best_epoch = epoch + 1;
            best = Some(net.clone());
        }

        if let Some(target) = opts.stop_at_train_acc {
            let (train_acc, _) = evaluate(net, loader, &train_entries, cfg.label_smoothing)?;
            final_train_acc = Some(train_acc);
            if train_acc >= target {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        rows,
        best_epoch,
        best_val_acc,
        best: best.unwrap_or_else(|| net.clone()),
        final_train_acc,
    })
}

/// Schedule helper for the comparison recipe: the mixer trains with Adam
/// (decay 0) under exponential decay rather than warmup + cosine.
pub fn mixer_default_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 150,
        batch_size: 64,
        base_lr: 0.001,
        warmup_epochs: 0,
        schedule: Schedule::Exponential { decay_per_epoch: 0.985 },
        weight_decay: 0.0,
        label_smoothing: 0.1,
        block_survival: 1.0,
        augment: super::SpecAugment::default(),
        seed,
    }
}
