//! Speech Commands directory ingestion and batch serving.
//!
//! The dataset layout is one subdirectory per label full of `.wav` clips,
//! plus `validation_list.txt` and `testing_list.txt` holding
//! `label/file.wav` lines; everything not listed is the train split.
//! `_background_noise_` is ignored. Label ids are the lexicographic rank of
//! the label directory names found on disk; nothing is hardcoded, so the
//! same scanner serves the real 35-keyword set and synthetic fixtures.

pub mod synth;

use crate::dsp::{self, cache, Mfcc, MfccConfig};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;
use crate::train::{spec_augment, SpecAugment};
use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn parse(name: &str) -> Result<Split> {
        match name {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" | "testing" => Ok(Split::Test),
            other => Err(Error::config(format!(
                "unknown split {other:?}; expected train, val, or test"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Entry {
    /// `label/file.wav`, as the list files spell it.
    pub rel_path: String,
    pub label: usize,
    pub split: Split,
}

#[derive(Debug, Clone)]
pub struct DatasetIndex {
    pub root: PathBuf,
    /// Lexicographically sorted label names; id = sort position.
    pub labels: Vec<String>,
    pub entries: Vec<Entry>,
}

impl DatasetIndex {
    pub fn n_classes(&self) -> usize {
        self.labels.len()
    }

    /// Entry ids of one split, in deterministic (path-sorted) order.
    pub fn split_entries(&self, split: Split) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn wav_path(&self, entry: usize) -> PathBuf {
        self.root.join(&self.entries[entry].rel_path)
    }
}

fn read_list(path: &Path) -> Result<BTreeSet<String>> {
    let text = fs::read_to_string(path).map_err(|e| {
        Error::config(format!("missing split list {}: {e}", path.display()))
    })?;
    Ok(text
        .lines()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect())
}

/// Scan a dataset root. `expected_labels`, when given (e.g. from a
/// checkpoint), pins the label set: directories outside it are skipped with
/// a warning, and a missing expected directory is an error.
pub fn scan_dataset_expecting(root: &Path, expected_labels: Option<&[String]>) -> Result<DatasetIndex> {
    let validation = read_list(&root.join("validation_list.txt"))?;
    let testing = read_list(&root.join("testing_list.txt"))?;

    let mut labels: Vec<String> = Vec::new();
    for dir in fs::read_dir(root)? {
        let dir = dir?;
        if !dir.file_type()?.is_dir() {
            continue;
        }
        let name = dir.file_name().to_string_lossy().to_string();
        if name == "_background_noise_" || name.starts_with('.') || name.starts_with('_') {
            continue;
        }
        if let Some(expected) = expected_labels {
            if !expected.iter().any(|l| l == &name) {
                eprintln!("warning: skipping label directory {name:?} outside the expected label set");
                continue;
            }
        }
        labels.push(name);
    }
    labels.sort_unstable();
    if let Some(expected) = expected_labels {
        let mut want: Vec<String> = expected.to_vec();
        want.sort_unstable();
        if labels != want {
            return Err(Error::config(format!(
                "dataset at {} is missing expected label directories: found {labels:?}",
                root.display()
            )));
        }
    }
    if labels.is_empty() {
        return Err(Error::config(format!(
            "no label directories under {}",
            root.display()
        )));
    }

    let mut entries = Vec::new();
    for (label_id, label) in labels.iter().enumerate() {
        let mut files: Vec<String> = fs::read_dir(root.join(label))?
            .filter_map(|f| f.ok())
            .map(|f| f.file_name().to_string_lossy().to_string())
            .filter(|n| n.ends_with(".wav"))
            .collect();
        files.sort_unstable();
        for file in files {
            let rel_path = format!("{label}/{file}");
            let split = if testing.contains(&rel_path) {
                Split::Test
            } else if validation.contains(&rel_path) {
                Split::Val
            } else {
                Split::Train
            };
            entries.push(Entry {
                rel_path,
                label: label_id,
                split,
            });
        }
    }
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        labels,
        entries,
    })
}

pub fn scan_dataset(root: &Path) -> Result<DatasetIndex> {
    scan_dataset_expecting(root, None)
}

/// Where MFCCs come from on repeat access.
#[derive(Debug, Clone)]
pub enum CacheMode {
    /// Recompute every time.
    None,
    /// Keep every feature matrix in memory (fine for small sets).
    Memory,
    /// Blob files mirroring the dataset tree under this directory.
    Disk(PathBuf),
}

/// Serves per-clip MFCCs with optional caching. Cached features are
/// bit-identical to freshly computed ones (the pipeline is deterministic
/// and blobs store raw f32).
pub struct Loader {
    pub index: DatasetIndex,
    mfcc_cfg: MfccConfig,
    mode: CacheMode,
    mem: Vec<Option<Mfcc>>,
}

impl Loader {
    pub fn new(index: DatasetIndex, mfcc_cfg: MfccConfig, mode: CacheMode) -> Self {
        let mem = match mode {
            CacheMode::Memory => vec![None; index.entries.len()],
            _ => Vec::new(),
        };
        Loader {
            index,
            mfcc_cfg,
            mode,
            mem,
        }
    }

    pub fn entries(&self, split: Split) -> Vec<usize> {
        self.index.split_entries(split)
    }

    pub fn label(&self, entry: usize) -> usize {
        self.index.entries[entry].label
    }

    pub fn mfcc_config(&self) -> &MfccConfig {
        &self.mfcc_cfg
    }

    fn compute(&self, entry: usize) -> Result<Mfcc> {
        let clip = dsp::load_wav(&self.index.wav_path(entry))?;
        let clip = dsp::pad_or_trim(clip, dsp::CLIP_SAMPLES);
        dsp::compute_mfcc(&clip, &self.mfcc_cfg)
    }

    pub fn mfcc(&mut self, entry: usize) -> Result<Mfcc> {
        match &self.mode {
            CacheMode::None => self.compute(entry),
            CacheMode::Memory => {
                if self.mem[entry].is_none() {
                    self.mem[entry] = Some(self.compute(entry)?);
                }
                Ok(self.mem[entry].clone().expect("just filled"))
            }
            CacheMode::Disk(dir) => {
                let blob = dir.join(format!("{}.mfcc", self.index.entries[entry].rel_path));
                if let Ok(cached) = cache::read_blob(&blob) {
                    return Ok(cached);
                }
                let fresh = self.compute(entry)?;
                cache::write_blob(&blob, &fresh)?;
                Ok(fresh)
            }
        }
    }

    /// Precompute the whole cache (no-op unless in disk mode).
    pub fn warm_cache(&mut self) -> Result<usize> {
        let ids: Vec<usize> = (0..self.index.entries.len()).collect();
        for &id in &ids {
            self.mfcc(id)?;
        }
        Ok(ids.len())
    }
}

/// A served batch: features as a `[B, 40, 98]` tensor plus aligned labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub features: Tensor<f32>,
    pub labels: Vec<usize>,
    pub entries: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Copy out clip `i` as a `[rows, cols]` feature tensor.
    pub fn clip(&self, i: usize) -> Tensor<f32> {
        let rows = self.features.shape()[1];
        let cols = self.features.shape()[2];
        let stride = rows * cols;
        Tensor::new(
            vec![rows, cols],
            self.features.data()[i * stride..(i + 1) * stride].to_vec(),
        )
        .expect("slice length matches")
    }
}

/// Epoch stream over `entries`: an optional seeded permutation, then
/// consecutive batches (the last one may be partial, never dropped).
/// `augment` applies SpecAugment per clip from its own stream. Evaluation
/// callers pass `None` for both, giving an unshuffled, unaugmented pass.
pub struct BatchStream<'a> {
    loader: &'a mut Loader,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
    augment: Option<(SpecAugment, SplitMix64)>,
}

pub fn batch_stream<'a>(
    loader: &'a mut Loader,
    mut entries: Vec<usize>,
    batch_size: usize,
    shuffle: Option<SplitMix64>,
    augment: Option<(SpecAugment, SplitMix64)>,
) -> BatchStream<'a> {
    assert!(batch_size > 0, "batch_size must be >= 1");
    if let Some(mut rng) = shuffle {
        rng.shuffle(&mut entries);
    }
    BatchStream {
        loader,
        order: entries,
        batch_size,
        pos: 0,
        augment,
    }
}

impl Iterator for BatchStream<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let ids = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(self.fill(ids))
    }
}

impl BatchStream<'_> {
    fn fill(&mut self, ids: Vec<usize>) -> Result<Batch> {
        let mut features: Vec<f32> = Vec::new();
        let mut labels = Vec::with_capacity(ids.len());
        let mut shape = (0usize, 0usize);
        for &id in &ids {
            let mut mfcc = self.loader.mfcc(id)?;
            if let Some((cfg, rng)) = &mut self.augment {
                spec_augment(&mut mfcc, cfg, rng);
            }
            shape = mfcc.shape();
            features.extend_from_slice(mfcc.data());
            labels.push(self.loader.label(id));
        }
        Ok(Batch {
            features: Tensor::new(vec![ids.len(), shape.0, shape.1], features)?,
            labels,
            entries: ids,
        })
    }
}
