//! RIFF/WAVE decoding for the dataset's clip format: PCM 16-bit mono 16 kHz.
//!
//! Anything else (compressed encodings, stereo, other rates or depths) is
//! rejected with an error naming the offending field. A minimal writer for
//! the same format backs test fixtures and the synthetic tone dataset.

use super::AudioClip;
use crate::error::{Error, Result};
use std::fs;
use std::io::Write;
use std::path::Path;

pub const REQUIRED_SAMPLE_RATE: u32 = 16_000;

pub fn load_wav(path: &Path) -> Result<AudioClip> {
    let bytes = fs::read(path)?;
    parse_wav(&bytes).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Decode a RIFF/WAVE byte stream. Split from [`load_wav`] so tests can
/// feed hand-built buffers.
pub fn parse_wav(bytes: &[u8]) -> Result<AudioClip> {
    let header = |msg: &str| Error::Parse(format!("not a RIFF/WAVE file: {msg}"));
    if bytes.len() < 12 {
        return Err(header("shorter than the 12-byte header"));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(header("missing RIFF tag"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(header("missing WAVE tag"));
    }

    let mut fmt: Option<FmtChunk> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .ok_or_else(|| Error::Parse("chunk size overflows".into()))?;
        if body_end > bytes.len() {
            return Err(Error::Parse(format!(
                "truncated chunk {:?}: declares {size} bytes, {} remain",
                String::from_utf8_lossy(id),
                bytes.len() - body_start
            )));
        }
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => fmt = Some(FmtChunk::parse(body)?),
            b"data" => data = Some(body),
            _ => {} // LIST, fact, ... are skipped
        }
        // Chunks are word-aligned; odd sizes carry a pad byte.
        pos = body_end + (size & 1);
    }

    let fmt = fmt.ok_or_else(|| Error::Parse("no fmt chunk".into()))?;
    fmt.check()?;
    let data = data.ok_or_else(|| Error::Parse("no data chunk".into()))?;
    if data.len() % 2 != 0 {
        return Err(Error::Parse("data chunk holds a partial 16-bit sample".into()));
    }
    let samples = data
        .chunks_exact(2)
        .map(|pair| i16::from_le_bytes([pair[0], pair[1]]) as f32 / 32768.0)
        .collect();
    Ok(AudioClip {
        samples,
        sample_rate: fmt.sample_rate,
    })
}

struct FmtChunk {
    audio_format: u16,
    channels: u16,
    sample_rate: u32,
    bits_per_sample: u16,
}

impl FmtChunk {
    fn parse(body: &[u8]) -> Result<Self> {
        if body.len() < 16 {
            return Err(Error::Parse(format!("fmt chunk too short: {} bytes", body.len())));
        }
        Ok(FmtChunk {
            audio_format: u16::from_le_bytes([body[0], body[1]]),
            channels: u16::from_le_bytes([body[2], body[3]]),
            sample_rate: u32::from_le_bytes(body[4..8].try_into().unwrap()),
            bits_per_sample: u16::from_le_bytes([body[14], body[15]]),
        })
    }

    fn check(&self) -> Result<()> {
        if self.audio_format != 1 {
            return Err(Error::Format {
                field: "audio_format",
                detail: format!("expected PCM (1), got {}", self.audio_format),
            });
        }
        if self.channels != 1 {
            return Err(Error::Format {
                field: "channels",
                detail: format!("expected mono (1), got {}", self.channels),
            });
        }
        if self.sample_rate != REQUIRED_SAMPLE_RATE {
            return Err(Error::Format {
                field: "sample_rate",
                detail: format!("expected {REQUIRED_SAMPLE_RATE} Hz, got {}", self.sample_rate),
            });
        }
        if self.bits_per_sample != 16 {
            return Err(Error::Format {
                field: "bits_per_sample",
                detail: format!("expected 16, got {}", self.bits_per_sample),
            });
        }
        Ok(())
    }
}

/// Write mono PCM16 WAV. Input samples are clamped to `[-1, 1]` and
/// quantized with round-to-nearest.
pub fn write_wav_mono16(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    let data_len = (samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + samples.len() * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in samples {
        let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn build_wav(format: u16, channels: u16, rate: u32, bits: u16, payload: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&(36 + payload.len() as u32).to_le_bytes());
        out.extend_from_slice(b"WAVE");
        out.extend_from_slice(b"fmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&format.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&rate.to_le_bytes());
        out.extend_from_slice(&(rate * 2).to_le_bytes());
        out.extend_from_slice(&2u16.to_le_bytes());
        out.extend_from_slice(&bits.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        out.extend_from_slice(payload);
        out
    }

    #[test]
    fn four_known_samples_scale_exactly() {
        // int16 values -32768, -1, 0, 16384 -> -1.0, -1/32768, 0.0, 0.5
        let mut payload = Vec::new();
        for v in [-32768i16, -1, 0, 16384] {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        let clip = parse_wav(&build_wav(1, 1, 16000, 16, &payload)).unwrap();
        assert_eq!(clip.samples, vec![-1.0, -1.0 / 32768.0, 0.0, 0.5]);
        assert_eq!(clip.sample_rate, 16000);
    }

    #[test]
    fn wrong_rate_channels_encoding_are_named() {
        let payload = [0u8; 4];
        let err = parse_wav(&build_wav(1, 1, 8000, 16, &payload)).unwrap_err();
        assert!(err.to_string().contains("sample_rate"), "{err}");
        let err = parse_wav(&build_wav(1, 2, 16000, 16, &payload)).unwrap_err();
        assert!(err.to_string().contains("channels"), "{err}");
        let err = parse_wav(&build_wav(3, 1, 16000, 16, &payload)).unwrap_err();
        assert!(err.to_string().contains("audio_format"), "{err}");
        let err = parse_wav(&build_wav(1, 1, 16000, 8, &payload)).unwrap_err();
        assert!(err.to_string().contains("bits_per_sample"), "{err}");
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let full = build_wav(1, 1, 16000, 16, &[0u8; 64]);
        let err = parse_wav(&full[..full.len() - 10]).unwrap_err();
        assert!(matches!(err, Error::Parse(_)), "{err}");
        let err = parse_wav(&full[..8]).unwrap_err();
        assert!(matches!(err, Error::Parse(_)), "{err}");
    }

    #[test]
    fn canonical_one_second_clip_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let samples: Vec<f32> = (0..16000)
            .map(|t| (2.0 * std::f32::consts::PI * 440.0 * t as f32 / 16000.0).sin() * 0.5)
            .collect();
        write_wav_mono16(&path, &samples, 16000).unwrap();
        let clip = load_wav(&path).unwrap();
        assert_eq!(clip.samples.len(), 16000);
        assert_eq!(clip.sample_rate, 16000);
        for (&orig, &back) in samples.iter().zip(&clip.samples) {
            assert!((orig - back).abs() <= 1.0 / 32000.0);
        }
    }
}
