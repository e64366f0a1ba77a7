//! Windowed-sinc FIR design and zero-phase filtering.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{config, contract, Result};

/// Hamming windows reach about 53 dB of stopband attenuation over a
/// transition of roughly 3.3·fs/N. The extra margin keeps the 50 dB
/// points safely inside the stopband.
const HAMMING_WIDTH: f64 = 3.5;

/// Below this many taps direct convolution beats the FFT.
const DIRECT_MAX_TAPS: usize = 96;

#[derive(Debug, Clone, PartialEq)]
pub struct FirFilter {
    pub taps: Vec<f64>,
    pub fs: f64,
    pub band: (f64, f64),
}

impl FirFilter {
    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// Group delay in samples; exact for symmetric taps.
    pub fn delay(&self) -> f64 {
        (self.taps.len() as f64 - 1.0) / 2.0
    }

    /// Magnitude of the transfer function at `freq` Hz.
    pub fn gain(&self, freq: f64) -> f64 {
        let w = 2.0 * PI * freq / self.fs;
        let (mut re, mut im) = (0.0, 0.0);
        for (n, &h) in self.taps.iter().enumerate() {
            re += h * (w * n as f64).cos();
            im -= h * (w * n as f64).sin();
        }
        re.hypot(im)
    }

    pub fn gain_db(&self, freq: f64) -> f64 {
        20.0 * self.gain(freq).log10()
    }
}

pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Tap count giving a Hamming transition of `transition` Hz, forced odd.
pub fn hamming_length(fs: f64, transition: f64) -> usize {
    let n = (HAMMING_WIDTH * fs / transition).ceil() as usize;
    n | 1
}

/// Hamming-windowed sinc lowpass with unit DC gain. `n` must be odd.
pub fn lowpass_taps(cutoff: f64, fs: f64, n: usize) -> Vec<f64> {
    debug_assert!(n % 2 == 1);
    let m = (n - 1) / 2;
    let fc = cutoff / fs;
    let win = hamming(n);
    let mut taps = vec![0.0; n];
    for i in 0..=m {
        let x = i as f64 - m as f64;
        let sinc = if i == m {
            2.0 * fc
        } else {
            (2.0 * PI * fc * x).sin() / (PI * x)
        };
        // mirror so symmetry is exact, not just up to rounding
        taps[i] = sinc * win[i];
        taps[n - 1 - i] = taps[i];
    }
    let dc: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= dc);
    taps
}

/// Linear-phase band-pass. Cutoffs sit half a transition outside the band
/// so the passband edges are flat and the band edges ± `transition` are in
/// the stopband. `high == fs/2` degenerates to a high-pass.
pub fn design_bandpass(low: f64, high: f64, fs: f64, transition: f64) -> Result<FirFilter> {
    let nyq = fs / 2.0;
    if !(fs > 0.0 && transition > 0.0) {
        return config(format!("band-pass needs fs > 0 and transition > 0, got {fs}, {transition}"));
    }
    if !(low > 0.0 && low < high && high <= nyq) {
        return config(format!("infeasible band {low}–{high} Hz at fs {fs}"));
    }
    let f_lo = low - transition / 2.0;
    if f_lo <= 0.0 {
        return config(format!("transition {transition} Hz too wide for low edge {low} Hz"));
    }
    let highpass = high == nyq;
    let f_hi = high + transition / 2.0;
    if !highpass && f_hi >= nyq {
        return config(format!("upper transition band of {high} Hz crosses Nyquist at fs {fs}"));
    }
    let n = hamming_length(fs, transition);
    let lo = lowpass_taps(f_lo, fs, n);
    let taps = if highpass {
        let mut t: Vec<f64> = lo.iter().map(|v| -v).collect();
        t[(n - 1) / 2] += 1.0;
        t
    } else {
        let hi = lowpass_taps(f_hi, fs, n);
        hi.iter().zip(&lo).map(|(a, b)| a - b).collect()
    };
    Ok(FirFilter {
        taps,
        fs,
        band: (low, high),
    })
}

/// Centered ("same") convolution with an odd-length kernel, zero outside
/// the signal. Reuses one FFT plan across calls.
pub struct Convolver {
    taps: Vec<f64>,
    fft: Option<FftPlan>,
}

struct FftPlan {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    kernel: Vec<Complex64>,
}

impl Convolver {
    pub fn new(taps: &[f64], signal_len: usize) -> Self {
        let fft = (taps.len() > DIRECT_MAX_TAPS).then(|| {
            let n = (signal_len + taps.len() - 1).next_power_of_two();
            let mut planner = FftPlanner::new();
            let forward = planner.plan_fft_forward(n);
            let inverse = planner.plan_fft_inverse(n);
            let mut kernel = vec![Complex64::new(0.0, 0.0); n];
            for (k, &h) in taps.iter().enumerate() {
                kernel[k].re = h;
            }
            forward.process(&mut kernel);
            FftPlan {
                n,
                forward,
                inverse,
                kernel,
            }
        });
        Convolver {
            taps: taps.to_vec(),
            fft,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let m = (self.taps.len() - 1) / 2;
        match &self.fft {
            Some(plan) if x.len() + self.taps.len() - 1 <= plan.n => {
                let mut buf = vec![Complex64::new(0.0, 0.0); plan.n];
                for (b, &v) in buf.iter_mut().zip(x) {
                    b.re = v;
                }
                plan.forward.process(&mut buf);
                for (b, k) in buf.iter_mut().zip(&plan.kernel) {
                    *b *= k;
                }
                plan.inverse.process(&mut buf);
                let scale = 1.0 / plan.n as f64;
                buf[m..m + x.len()].iter().map(|c| c.re * scale).collect()
            }
            Some(_) => Convolver::new(&self.taps, x.len()).apply(x),
            None => direct_same(x, &self.taps),
        }
    }
}

fn direct_same(x: &[f64], taps: &[f64]) -> Vec<f64> {
    let n = x.len() as isize;
    let m = ((taps.len() - 1) / 2) as isize;
    (0..n)
        .map(|t| {
            let mut acc = 0.0;
            for (k, &h) in taps.iter().enumerate() {
                let j = t + m - k as isize;
                if (0..n).contains(&j) {
                    acc += h * x[j as usize];
                }
            }
            acc
        })
        .collect()
}

/// Odd (point-symmetric) reflection about both end samples, as in
/// classic forward-backward filtering. Needs `pad < x.len()`.
pub(crate) fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    debug_assert!(pad < n);
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    out.extend_from_slice(x);
    out.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
    out
}

fn check_length(t: usize, f: &FirFilter) -> Result<()> {
    if t <= 3 * f.len() {
        return contract(format!(
            "signal of {t} samples too short for zero-phase filtering with {} taps (need > {})",
            f.len(),
            3 * f.len()
        ));
    }
    Ok(())
}

fn zero_phase_with(conv: &Convolver, x: &[f64], pad: usize) -> Vec<f64> {
    let padded = reflect_pad(x, pad);
    let forward = conv.apply(&padded);
    let mut rev: Vec<f64> = forward.into_iter().rev().collect();
    rev = conv.apply(&rev);
    rev.reverse();
    rev[pad..pad + x.len()].to_vec()
}

/// Forward-backward filtering of one signal. Output length equals input.
pub fn filt_zero_phase_1d(x: &[f64], f: &FirFilter) -> Result<Vec<f64>> {
    check_length(x.len(), f)?;
    let pad = f.len();
    let conv = Convolver::new(&f.taps, x.len() + 2 * pad);
    Ok(zero_phase_with(&conv, x, pad))
}

/// Forward-backward filtering of every column of a T×C signal.
pub fn filt_zero_phase(x: &DMatrix<f64>, f: &FirFilter) -> Result<DMatrix<f64>> {
    let (t, c) = x.shape();
    check_length(t, f)?;
    let pad = f.len();
    let conv = Convolver::new(&f.taps, t + 2 * pad);
    let mut out = DMatrix::zeros(t, c);
    for ch in 0..c {
        let y = zero_phase_with(&conv, x.column(ch).as_slice(), pad);
        out.column_mut(ch).copy_from_slice(&y);
    }
    Ok(out)
}
