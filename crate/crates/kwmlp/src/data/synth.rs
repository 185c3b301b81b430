//! Synthetic tone dataset in the Speech Commands layout, used by the
//! overfit sanity check and pipeline tests. Each class is a pure tone at a
//! log-spaced frequency; clips vary in amplitude, phase, and a little
//! additive noise, and a tenth of them are shorter than a second to
//! exercise padding.

use crate::dsp::write_wav_mono16;
use crate::error::Result;
use crate::rng::SplitMix64;
use std::fs;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct ToneDatasetSpec {
    pub n_classes: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for ToneDatasetSpec {
    fn default() -> Self {
        // 200 train clips over 5 classes, plus small val/test splits.
        ToneDatasetSpec {
            n_classes: 5,
            train_per_class: 40,
            val_per_class: 8,
            test_per_class: 8,
            seed: 2024,
        }
    }
}

/// Class frequencies, log-spaced inside the mel filterbank range.
pub fn class_frequencies(n_classes: usize) -> Vec<f32> {
    let lo: f32 = 350.0;
    let hi: f32 = 6000.0;
    (0..n_classes)
        .map(|k| {
            let t = if n_classes == 1 { 0.0 } else { k as f32 / (n_classes - 1) as f32 };
            lo * (hi / lo).powf(t)
        })
        .collect()
}

/// Write the dataset under `root`: one `tone_<freq>` directory per class
/// and the two split list files.
pub fn write_tone_dataset(root: &Path, spec: &ToneDatasetSpec) -> Result<()> {
    let freqs = class_frequencies(spec.n_classes);
    let mut rng = SplitMix64::new(spec.seed);
    let mut validation = String::new();
    let mut testing = String::new();

    for (class, &freq) in freqs.iter().enumerate() {
        let label = format!("tone_{:04}", freq.round() as u32);
        fs::create_dir_all(root.join(&label))?;
        let total = spec.train_per_class + spec.val_per_class + spec.test_per_class;
        for i in 0..total {
            let amp = rng.uniform_f32(0.3, 0.7);
            let phase = rng.uniform_f32(0.0, 2.0 * std::f32::consts::PI);
            let len = if i % 10 == 9 {
                11_000 + rng.below(5_000)
            } else {
                16_000
            };
            let samples: Vec<f32> = (0..len)
                .map(|t| {
                    let s = (2.0 * std::f32::consts::PI * freq * t as f32 / 16_000.0 + phase).sin();
                    s * amp + (rng.next_f32() - 0.5) * 0.008
                })
                .collect();
            let file = format!("clip_{class}_{i:03}.wav");
            write_wav_mono16(&root.join(&label).join(&file), &samples, 16_000)?;
            let rel = format!("{label}/{file}");
            if i >= spec.train_per_class + spec.val_per_class {
                testing.push_str(&rel);
                testing.push('\n');
            } else if i >= spec.train_per_class {
                validation.push_str(&rel);
                validation.push('\n');
            }
        }
    }
    fs::write(root.join("validation_list.txt"), validation)?;
    fs::write(root.join("testing_list.txt"), testing)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{scan_dataset, Split};

    #[test]
    fn generated_dataset_scans_with_expected_splits() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ToneDatasetSpec {
            n_classes: 3,
            train_per_class: 5,
            val_per_class: 2,
            test_per_class: 2,
            seed: 7,
        };
        write_tone_dataset(dir.path(), &spec).unwrap();
        let index = scan_dataset(dir.path()).unwrap();
        assert_eq!(index.n_classes(), 3);
        assert_eq!(index.split_entries(Split::Train).len(), 15);
        assert_eq!(index.split_entries(Split::Val).len(), 6);
        assert_eq!(index.split_entries(Split::Test).len(), 6);
    }
}
