//! ERB-spaced gammatone filterbank and broadband envelope.

use std::f64::consts::PI;

use crate::error::{config, Result};

pub const MIN_CENTER_HZ: f64 = 150.0;
pub const MAX_CENTER_HZ: f64 = 4000.0;
pub const COMPRESSION: f64 = 0.6;
const ENVELOPE_LOWPASS_HZ: f64 = 150.0;
/// Bandwidth scale for a 4th-order gammatone to match one ERB.
const BANDWIDTH_SCALE: f64 = 1.019;

/// Glasberg–Moore equivalent rectangular bandwidth in Hz.
pub fn erb(f: f64) -> f64 {
    24.7 * (4.37 * f / 1000.0 + 1.0)
}

/// Position on the ERB-number scale.
pub fn erb_number(f: f64) -> f64 {
    21.4 * (4.37 * f / 1000.0 + 1.0).log10()
}

pub fn erb_number_inverse(e: f64) -> f64 {
    (10f64.powf(e / 21.4) - 1.0) * 1000.0 / 4.37
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammatoneBank {
    pub center_frequencies: Vec<f64>,
    pub bandwidths: Vec<f64>,
    pub order: usize,
    pub fs: f64,
}

impl GammatoneBank {
    /// One band per ERB step from 150 Hz up to 4 kHz.
    pub fn erb_spaced(fs: f64) -> Result<Self> {
        let (e0, e1) = (erb_number(MIN_CENTER_HZ), erb_number(MAX_CENTER_HZ));
        let n = (e1 - e0).floor() as usize + 1;
        let centers = (0..n)
            .map(|i| erb_number_inverse(e0 + i as f64))
            .collect();
        Self::new(centers, fs)
    }

    pub fn new(center_frequencies: Vec<f64>, fs: f64) -> Result<Self> {
        if fs < 2.0 * MAX_CENTER_HZ {
            return config(format!(
                "gammatone bank needs fs ≥ {} Hz, got {fs}",
                2.0 * MAX_CENTER_HZ
            ));
        }
        if center_frequencies.is_empty()
            || center_frequencies.windows(2).any(|w| w[1] <= w[0])
            || center_frequencies
                .iter()
                .any(|&f| !(MIN_CENTER_HZ - 1e-9..=MAX_CENTER_HZ).contains(&f))
        {
            return config("center frequencies must be increasing within [150, 4000] Hz");
        }
        let bandwidths = center_frequencies
            .iter()
            .map(|&f| BANDWIDTH_SCALE * erb(f))
            .collect();
        Ok(GammatoneBank {
            center_frequencies,
            bandwidths,
            order: 4,
            fs,
        })
    }

    pub fn n_bands(&self) -> usize {
        self.center_frequencies.len()
    }

    /// Real output of one band: complex demodulation to baseband, a cascade
    /// of `order` one-pole lowpasses, then remodulation. Unit gain at the
    /// center frequency.
    pub fn filter_band(&self, audio: &[f64], band: usize) -> Vec<f64> {
        let w = 2.0 * PI * self.center_frequencies[band] / self.fs;
        let a = (-2.0 * PI * self.bandwidths[band] / self.fs).exp();
        let b = 1.0 - a;
        let mut state = [(0.0f64, 0.0f64); 8];
        let stages = &mut state[..self.order];
        audio
            .iter()
            .enumerate()
            .map(|(n, &x)| {
                let (s, c) = (w * n as f64).sin_cos();
                let (mut re, mut im) = (x * c, -x * s);
                for st in stages.iter_mut() {
                    st.0 = b * re + a * st.0;
                    st.1 = b * im + a * st.1;
                    (re, im) = *st;
                }
                2.0 * (re * c - im * s)
            })
            .collect()
    }
}

/// Sum over bands of compressed sub-band envelopes. Each envelope is the
/// half-wave rectified band output smoothed by a critically damped
/// two-pole 150 Hz lowpass, whose impulse response is non-negative.
pub fn gammatone_envelope(audio: &[f64], bank: &GammatoneBank) -> Result<Vec<f64>> {
    if bank.fs < 2.0 * MAX_CENTER_HZ {
        return config(format!("fs {} too low for the 4 kHz band", bank.fs));
    }
    let p = (-2.0 * PI * ENVELOPE_LOWPASS_HZ / bank.fs).exp();
    let mut total = vec![0.0; audio.len()];
    for band in 0..bank.n_bands() {
        let y = bank.filter_band(audio, band);
        let (mut l1, mut l2) = (0.0, 0.0);
        for (acc, v) in total.iter_mut().zip(y) {
            l1 = (1.0 - p) * v.max(0.0) + p * l1;
            l2 = (1.0 - p) * l1 + p * l2;
            *acc += l2.max(0.0).powf(COMPRESSION);
        }
    }
    Ok(total)
}
