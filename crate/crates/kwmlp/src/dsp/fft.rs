//! Iterative radix-2 decimation-in-time FFT.
//!
//! Sized for the 512-point frames of the MFCC frontend; any power of two
//! works. Twiddles and the bit-reversal permutation are precomputed once
//! per plan so the 98 frames of a clip share them.

/// FFT plan for a fixed power-of-two size.
pub struct Fft {
    n: usize,
    rev: Vec<u32>,
    /// exp(-2*pi*i*k/n) for k in 0..n/2, as (re, im).
    twiddles: Vec<(f32, f32)>,
}

impl Fft {
    pub fn new(n: usize) -> Self {
        assert!(n.is_power_of_two() && n >= 2, "fft size must be a power of two, got {n}");
        let bits = n.trailing_zeros();
        let rev = (0..n as u32).map(|i| i.reverse_bits() >> (32 - bits)).collect();
        let twiddles = (0..n / 2)
            .map(|k| {
                let angle = -2.0 * std::f64::consts::PI * k as f64 / n as f64;
                (angle.cos() as f32, angle.sin() as f32)
            })
            .collect();
        Fft { n, rev, twiddles }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// In-place forward transform of `n` complex points.
    pub fn forward(&self, buf: &mut [(f32, f32)]) {
        assert_eq!(buf.len(), self.n, "buffer length must match plan size");
        for i in 0..self.n {
            let j = self.rev[i] as usize;
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= self.n {
            let half = len / 2;
            let step = self.n / len;
            for base in (0..self.n).step_by(len) {
                for k in 0..half {
                    let (wr, wi) = self.twiddles[k * step];
                    let (er, ei) = buf[base + k];
                    let (or, oi) = buf[base + k + half];
                    let tr = or * wr - oi * wi;
                    let ti = or * wi + oi * wr;
                    buf[base + k] = (er + tr, ei + ti);
                    buf[base + k + half] = (er - tr, ei - ti);
                }
            }
            len *= 2;
        }
    }

    /// Power spectrum `|X[k]|^2` of a real signal, bins `0..=n/2`.
    /// `signal` shorter than `n` is zero-padded.
    pub fn power_spectrum(&self, signal: &[f32]) -> Vec<f32> {
        assert!(signal.len() <= self.n);
        let mut buf = vec![(0.0f32, 0.0f32); self.n];
        for (slot, &s) in buf.iter_mut().zip(signal) {
            slot.0 = s;
        }
        self.forward(&mut buf);
        buf[..=self.n / 2]
            .iter()
            .map(|&(re, im)| re * re + im * im)
            .collect()
    }
}
