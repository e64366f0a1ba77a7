//! Rational-ratio polyphase resampling.

use nalgebra::DMatrix;

use super::fir::{hamming_length, lowpass_taps, reflect_pad};
use crate::error::{config, contract, Result};

/// Anti-alias cutoff and half transition width, as fractions of the
/// output rate.
const CUTOFF: f64 = 0.45;
const HALF_TRANSITION: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct Resampler {
    pub up: usize,
    pub down: usize,
    /// Prototype lowpass at `fs_in·up`.
    taps: Vec<f64>,
    /// Sum of each polyphase branch; every branch is normalized to unit
    /// DC gain so constants pass through exactly.
    branch_sums: Vec<f64>,
}

fn as_integer_rate(fs: f64) -> Option<u64> {
    let r = fs.round();
    (fs > 0.0 && (fs - r).abs() <= 1e-9 * fs.max(1.0)).then_some(r as u64)
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl Resampler {
    pub fn new(fs_in: f64, fs_out: f64) -> Result<Self> {
        let (Some(a), Some(b)) = (as_integer_rate(fs_in), as_integer_rate(fs_out)) else {
            return config(format!(
                "resampling ratio {fs_in}/{fs_out} is not a ratio of integer rates"
            ));
        };
        if a < b {
            return config(format!("cannot resample upward from {fs_in} to {fs_out} Hz"));
        }
        let g = gcd(a, b);
        let (up, down) = ((b / g) as usize, (a / g) as usize);
        let fs_up = fs_in * up as f64;
        let n = hamming_length(fs_up, 2.0 * HALF_TRANSITION * fs_out);
        let taps = lowpass_taps(CUTOFF * fs_out, fs_up, n);
        let mut branch_sums = vec![0.0; up];
        for (k, &h) in taps.iter().enumerate() {
            branch_sums[k % up] += h;
        }
        Ok(Resampler {
            up,
            down,
            taps,
            branch_sums,
        })
    }

    pub fn output_len(&self, t: usize) -> usize {
        (t * self.up + self.down / 2) / self.down
    }

    /// Input samples of reflection padding needed on each side.
    pub fn padding(&self) -> usize {
        let m = (self.taps.len() - 1) / 2;
        m.div_ceil(self.up) + 1
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.up == 1 && self.down == 1 {
            return Ok(x.to_vec());
        }
        let pad = self.padding();
        if x.len() <= pad {
            return contract(format!(
                "signal of {} samples shorter than the resampler's {pad}-sample edge padding",
                x.len()
            ));
        }
        let xp = reflect_pad(x, pad);
        let (p, q) = (self.up, self.down);
        let m = (self.taps.len() - 1) / 2;
        let out_len = self.output_len(x.len());
        let mut y = Vec::with_capacity(out_len);
        for j in 0..out_len {
            // position in the upsampled, padded stream plus the filter delay
            let c = p * pad + j * q + m;
            let phase = c % p;
            let mut acc = 0.0;
            let mut k = phase;
            while k < self.taps.len() {
                acc += self.taps[k] * xp[(c - k) / p];
                k += p;
            }
            y.push(acc / self.branch_sums[phase]);
        }
        Ok(y)
    }
}

pub fn resample_1d(x: &[f64], fs_in: f64, fs_out: f64) -> Result<Vec<f64>> {
    Resampler::new(fs_in, fs_out)?.apply(x)
}

/// Resample every column of a T×C signal.
pub fn resample(x: &DMatrix<f64>, fs_in: f64, fs_out: f64) -> Result<DMatrix<f64>> {
    let r = Resampler::new(fs_in, fs_out)?;
    let (t, c) = x.shape();
    let mut out = DMatrix::zeros(r.output_len(t), c);
    for ch in 0..c {
        let y = r.apply(x.column(ch).as_slice())?;
        out.column_mut(ch).copy_from_slice(&y);
    }
    Ok(out)
}
