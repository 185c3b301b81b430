//! Gated-MLP keyword spotting on Google Speech Commands V2-35.
//!
//! A dependency-light implementation of the KW-MLP classifier and its full
//! training recipe: WAV decoding and MFCC extraction, a minimal reverse-mode
//! autodiff engine, the gated-MLP model with Spatial Gating Units, an
//! MLP-Mixer variant for comparison, AdamW with warmup + cosine annealing,
//! SpecAugment, stochastic block drop, and parameter/MAC counters.
//!
//! Everything numerical runs on plain `Vec`-backed row-major tensors; the
//! data path is `f32`, and the same code runs at `f64` for gradient
//! checking. All randomness flows from a single run seed through named
//! per-purpose streams (see [`rng`]), so runs are bit-reproducible.

pub mod ckpt;
pub mod cli;
pub mod config;
pub mod data;
pub mod dsp;
pub mod error;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
