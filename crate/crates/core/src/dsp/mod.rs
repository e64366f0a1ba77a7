//! EEG and audio preprocessing down to 64 Hz model input.

mod fir;
mod gammatone;
mod resample;

pub use fir::{
    design_bandpass, filt_zero_phase, filt_zero_phase_1d, hamming, hamming_length, lowpass_taps,
    Convolver, FirFilter,
};
pub use gammatone::{
    erb, erb_number, erb_number_inverse, gammatone_envelope, GammatoneBank, COMPRESSION,
    MAX_CENTER_HZ, MIN_CENTER_HZ,
};
pub use resample::{resample, resample_1d, Resampler};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bundle::{RawTrial, TrialBundle};
use crate::error::{AadError, Result};

pub const MODEL_FS: f64 = 64.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    pub band_low: f64,
    pub band_high: f64,
    pub transition: f64,
    pub fs_out: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            band_low: 0.5,
            band_high: 32.0,
            transition: 0.5,
            fs_out: MODEL_FS,
        }
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Global z-score over every sample of every channel, population std.
pub fn zscore(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (mean, sd) = mean_std(x.iter().copied());
    if !(sd > 0.0 && sd.is_finite()) {
        return Err(AadError::Degenerate(format!(
            "cannot z-score a constant or non-finite signal (std {sd})"
        )));
    }
    Ok(x.map(|v| (v - mean) / sd))
}

pub fn zscore_1d(x: &[f64]) -> Result<Vec<f64>> {
    let m = zscore(&DMatrix::from_column_slice(x.len(), 1, x))?;
    Ok(m.as_slice().to_vec())
}

/// Subtract the across-channel mean from every sample.
pub fn average_reference(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for mut row in out.row_iter_mut() {
        let m = row.mean();
        row.add_scalar_mut(-m);
    }
    out
}

/// EEG path: reference, band-pass, resample, z-score.
pub fn preprocess_eeg(eeg: &DMatrix<f64>, fs: f64, cfg: &PreprocessConfig) -> Result<DMatrix<f64>> {
    zscore(&filter_eeg(eeg, fs, cfg)?)
}

fn filter_eeg(eeg: &DMatrix<f64>, fs: f64, cfg: &PreprocessConfig) -> Result<DMatrix<f64>> {
    let f = design_bandpass(cfg.band_low, cfg.band_high, fs, cfg.transition)?;
    let x = filt_zero_phase(&average_reference(eeg), &f)?;
    resample(&x, fs, cfg.fs_out)
}

/// Audio path: gammatone envelope, band-pass, resample, z-score.
pub fn preprocess_audio(audio: &[f64], fs: f64, cfg: &PreprocessConfig) -> Result<Vec<f64>> {
    zscore_1d(&filter_audio(audio, fs, cfg)?)
}

fn filter_audio(audio: &[f64], fs: f64, cfg: &PreprocessConfig) -> Result<Vec<f64>> {
    let bank = GammatoneBank::erb_spaced(fs)?;
    let env = gammatone_envelope(audio, &bank)?;
    let f = design_bandpass(cfg.band_low, cfg.band_high, fs, cfg.transition)?;
    let env = filt_zero_phase_1d(&env, &f)?;
    resample_1d(&env, fs, cfg.fs_out)
}

/// Full pipeline for one trial. EEG and envelopes are trimmed to a common
/// length at the output rate before the final z-score.
pub fn preprocess_trial(raw: &RawTrial, cfg: &PreprocessConfig) -> Result<TrialBundle> {
    let eeg = filter_eeg(&raw.eeg, raw.fs_eeg, cfg)?;
    let env_a = filter_audio(&raw.audio_a, raw.fs_audio, cfg)?;
    let env_b = filter_audio(&raw.audio_b, raw.fs_audio, cfg)?;
    let t = eeg.nrows().min(env_a.len()).min(env_b.len());
    let bundle = TrialBundle {
        subject_id: raw.subject_id.clone(),
        trial_id: raw.trial_id.clone(),
        audio_id_attended: raw.audio_id_attended.clone(),
        audio_id_unattended: raw.audio_id_unattended.clone(),
        eeg: zscore(&eeg.rows(0, t).into_owned())?,
        env_a: zscore_1d(&env_a[..t])?,
        env_b: zscore_1d(&env_b[..t])?,
        attended: raw.attended,
        fs: cfg.fs_out,
    };
    bundle.validate()?;
    Ok(bundle)
}
