//! Audio frontend: WAV decoding and MFCC extraction.
//!
//! The feature pipeline for a 1 s, 16 kHz clip is
//! 30 ms Hann windows hopped by 10 ms (480/160 samples, no center padding,
//! frame i covering samples `[i*160, i*160+480)`), zero-padded 512-point
//! FFT, power spectrum, 40 triangular mel filters, `log(power + floor)`,
//! and an orthonormal DCT-II keeping all 40 coefficients (40 mel bins leave
//! no room to drop coefficient 0). That yields exactly
//! `1 + (16000-480)/160 = 98` frames, i.e. a 40x98 feature matrix.
//!
//! Conventions the output depends on, fixed here so golden values stay
//! stable: HTK mel scale `2595 log10(1 + f/700)` between 20 Hz and 8 kHz,
//! peak-1 triangles applied to the power spectrum, periodic Hann window
//! `0.5 (1 - cos(2 pi n / N))`, log floor 1e-6 added inside the log, and
//! no per-feature normalization afterwards.
//!
//! Everything in this module is a pure function of its inputs; clips may be
//! processed in parallel by the caller.

pub mod cache;
pub mod fft;
pub mod wav;

pub use wav::{load_wav, write_wav_mono16};

use crate::error::{Error, Result};
use fft::Fft;

/// Decoded mono audio at 16 kHz, samples in `[-1, 1)`.
#[derive(Debug, Clone)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

/// Feature extraction settings. Defaults implement the 40x98 layout above.
#[derive(Debug, Clone, PartialEq)]
pub struct MfccConfig {
    /// Analysis window in samples (480 = 30 ms at 16 kHz).
    pub window_length: usize,
    /// Hop between frame starts in samples (160 = 10 ms).
    pub hop_length: usize,
    /// Zero-padded FFT size; must be >= `window_length`.
    pub fft_size: usize,
    pub n_mels: usize,
    pub n_mfcc: usize,
    /// Filterbank edges in Hz.
    pub fmin: f64,
    pub fmax: f64,
    /// Added to mel energies inside the log; keeps silence finite.
    pub log_floor: f32,
}

impl Default for MfccConfig {
    fn default() -> Self {
        MfccConfig {
            window_length: 480,
            hop_length: 160,
            fft_size: 512,
            n_mels: 40,
            n_mfcc: 40,
            fmin: 20.0,
            fmax: 8000.0,
            log_floor: 1e-6,
        }
    }
}

impl MfccConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fft_size < self.window_length {
            return Err(Error::config(format!(
                "fft_size {} < window_length {}",
                self.fft_size, self.window_length
            )));
        }
        if !self.fft_size.is_power_of_two() {
            return Err(Error::config(format!("fft_size {} is not a power of two", self.fft_size)));
        }
        if self.n_mfcc > self.n_mels {
            return Err(Error::config(format!(
                "n_mfcc {} > n_mels {}",
                self.n_mfcc, self.n_mels
            )));
        }
        if self.hop_length >= self.window_length {
            return Err(Error::config(format!(
                "hop_length {} must be < window_length {}",
                self.hop_length, self.window_length
            )));
        }
        if self.hop_length == 0 || self.n_mels == 0 || self.n_mfcc == 0 {
            return Err(Error::config("zero-sized mfcc parameter"));
        }
        if !(0.0 <= self.fmin && self.fmin < self.fmax) {
            return Err(Error::config(format!("bad mel range {}..{}", self.fmin, self.fmax)));
        }
        Ok(())
    }

    /// Frame count for a clip of `len` samples (no center padding).
    pub fn frames_for(&self, len: usize) -> usize {
        if len < self.window_length {
            0
        } else {
            1 + (len - self.window_length) / self.hop_length
        }
    }
}

/// Cepstral feature matrix: `n_coeffs` rows (frequency axis) by `n_frames`
/// columns (time axis), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Mfcc {
    n_coeffs: usize,
    n_frames: usize,
    data: Vec<f32>,
}

impl Mfcc {
    pub fn new(n_coeffs: usize, n_frames: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != n_coeffs * n_frames {
            return Err(Error::contract(format!(
                "mfcc data length {} != {n_coeffs} x {n_frames}",
                data.len()
            )));
        }
        Ok(Mfcc {
            n_coeffs,
            n_frames,
            data,
        })
    }

    pub fn n_coeffs(&self) -> usize {
        self.n_coeffs
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_coeffs, self.n_frames)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn at(&self, coeff: usize, frame: usize) -> f32 {
        self.data[coeff * self.n_frames + frame]
    }

    /// One time column (all coefficients of a frame).
    pub fn frame_column(&self, frame: usize) -> Vec<f32> {
        (0..self.n_coeffs).map(|c| self.at(c, frame)).collect()
    }

    /// View as a `[n_coeffs, n_frames]` tensor for the model.
    pub fn to_tensor(&self) -> crate::tensor::Tensor<f32> {
        crate::tensor::Tensor::new(vec![self.n_coeffs, self.n_frames], self.data.clone())
            .expect("mfcc dims are consistent by construction")
    }
}

/// Zero-pad (at the end) or truncate (from the end) to exactly `target` samples.
pub fn pad_or_trim(mut clip: AudioClip, target: usize) -> AudioClip {
    clip.samples.resize(target, 0.0);
    clip
}

/// Standard length of a dataset clip: one second at 16 kHz.
pub const CLIP_SAMPLES: usize = 16_000;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// The `n_mels + 2` triangle corner frequencies in Hz, equally spaced on
/// the mel scale between `fmin` and `fmax`. Filter `m` spans
/// `[points[m], points[m+2]]` and peaks at `points[m+1]`.
pub fn mel_points(cfg: &MfccConfig) -> Vec<f64> {
    let lo = hz_to_mel(cfg.fmin);
    let hi = hz_to_mel(cfg.fmax);
    (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect()
}

/// Triangular filterbank over FFT power bins: per filter, the first bin it
/// touches and the weight of each covered bin (peak 1).
fn mel_filterbank(cfg: &MfccConfig, sample_rate: u32) -> Vec<(usize, Vec<f32>)> {
    let points = mel_points(cfg);
    let n_bins = cfg.fft_size / 2 + 1;
    let bin_hz = sample_rate as f64 / cfg.fft_size as f64;
    (0..cfg.n_mels)
        .map(|m| {
            let (lo, mid, hi) = (points[m], points[m + 1], points[m + 2]);
            let first = (lo / bin_hz).ceil() as usize;
            let last = ((hi / bin_hz).floor() as usize).min(n_bins - 1);
            let mut weights = Vec::new();
            for bin in first..=last {
                let f = bin as f64 * bin_hz;
                let w = if f < mid {
                    (f - lo) / (mid - lo)
                } else {
                    (hi - f) / (hi - mid)
                };
                weights.push(w.max(0.0) as f32);
            }
            (first, weights)
        })
        .collect()
}

/// Orthonormal DCT-II matrix, `n_mfcc` rows by `n_mels` columns:
/// `D[k][n] = a_k cos(pi k (2n+1) / (2 n_mels))` with `a_0 = sqrt(1/N)`,
/// `a_k = sqrt(2/N)`. Its transpose is its inverse when square.
pub fn dct_matrix(n_mfcc: usize, n_mels: usize) -> Vec<f32> {
    let n = n_mels as f64;
    let mut mat = Vec::with_capacity(n_mfcc * n_mels);
    for k in 0..n_mfcc {
        let alpha = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        for j in 0..n_mels {
            let angle = std::f64::consts::PI * k as f64 * (2 * j + 1) as f64 / (2.0 * n);
            mat.push((alpha * angle.cos()) as f32);
        }
    }
    mat
}

/// Log-mel energies per frame, frame-major (`frames x n_mels`). This is the
/// pre-DCT stage of [`compute_mfcc`].
pub fn log_mel_spectrogram(clip: &AudioClip, cfg: &MfccConfig) -> Result<(Vec<f32>, usize)> {
    cfg.validate()?;
    let frames = cfg.frames_for(clip.samples.len());
    if frames == 0 {
        return Err(Error::contract(format!(
            "clip of {} samples is shorter than one {}-sample window; pad_or_trim first",
            clip.samples.len(),
            cfg.window_length
        )));
    }
    let window: Vec<f32> = (0..cfg.window_length)
        .map(|i| {
            let phase = 2.0 * std::f64::consts::PI * i as f64 / cfg.window_length as f64;
            (0.5 * (1.0 - phase.cos())) as f32
        })
        .collect();
    let plan = Fft::new(cfg.fft_size);
    let filters = mel_filterbank(cfg, clip.sample_rate);

    let mut out = Vec::with_capacity(frames * cfg.n_mels);
    let mut frame_buf = vec![0.0f32; cfg.window_length];
    for f in 0..frames {
        let start = f * cfg.hop_length;
        for (i, slot) in frame_buf.iter_mut().enumerate() {
            *slot = clip.samples[start + i] * window[i];
        }
        let power = plan.power_spectrum(&frame_buf);
        for (first, weights) in &filters {
            let mut energy = 0.0f32;
            for (w, &p) in weights.iter().zip(&power[*first..]) {
                energy += w * p;
            }
            out.push((energy + cfg.log_floor).ln());
        }
    }
    Ok((out, frames))
}

/// Full MFCC pipeline; output is `n_mfcc x frames` (frequency rows by time
/// columns).
pub fn compute_mfcc(clip: &AudioClip, cfg: &MfccConfig) -> Result<Mfcc> {
    let (log_mel, frames) = log_mel_spectrogram(clip, cfg)?;
    let dct = dct_matrix(cfg.n_mfcc, cfg.n_mels);
    let mut data = vec![0.0f32; cfg.n_mfcc * frames];
    for f in 0..frames {
        let mel = &log_mel[f * cfg.n_mels..(f + 1) * cfg.n_mels];
        for k in 0..cfg.n_mfcc {
            let row = &dct[k * cfg.n_mels..(k + 1) * cfg.n_mels];
            let mut acc = 0.0f32;
            for (&d, &m) in row.iter().zip(mel) {
                acc += d * m;
            }
            data[k * frames + f] = acc;
        }
    }
    Mfcc::new(cfg.n_mfcc, frames, data)
}
