//! Synthetic two-talker cohorts from a linear forward model with known
//! ground truth.
//!
//! EEG is a spatial pattern times the kernel-filtered attended envelope,
//! plus a weaker distractor response with its own pattern and kernel, plus
//! white sensor noise scaled to a per-channel SNR.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bundle::{Candidate, RawTrial, TrialBundle};
use crate::dsp::{design_bandpass, filt_zero_phase_1d, zscore, zscore_1d, MODEL_FS};
use crate::error::{config, Result};

pub const SYNTH_CHANNELS: usize = 16;
pub const KERNEL_MS: f64 = 400.0;
pub const RAW_EEG_FS: f64 = 128.0;
pub const RAW_AUDIO_FS: f64 = 8000.0;
const ENV_BAND: (f64, f64) = (0.5, 16.0);
const ENV_TRANSITION: f64 = 0.8;
/// Corner of the one-pole low-pass that tilts the envelope spectrum.
const ENV_CORNER_HZ: f64 = 6.0;
/// Log-amplitude standard deviation of the envelope.
const MOD_DEPTH: f64 = 0.25;

// rng stream tags
const STREAM_ENV: u64 = 1 << 56;
const STREAM_TRIAL: u64 = 2 << 56;
const STREAM_SUBJECT: u64 = 3 << 56;
const STREAM_CARRIER: u64 = 4 << 56;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn randn(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Difference of two gamma-shaped bumps, t in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DogKernel {
    pub shape1: f64,
    pub scale1: f64,
    pub shape2: f64,
    pub scale2: f64,
    /// Weight of the second, later bump.
    pub ratio: f64,
}

impl DogKernel {
    /// Positive peak at 100 ms, shallow negative lobe near 270 ms.
    pub fn attended() -> Self {
        DogKernel {
            shape1: 16.0,
            scale1: 0.1 / 15.0,
            shape2: 10.0,
            scale2: 0.03,
            ratio: 0.05,
        }
    }

    /// Later and broader, peaking at 180 ms.
    pub fn distractor() -> Self {
        DogKernel {
            shape1: 8.0,
            scale1: 0.18 / 7.0,
            shape2: 10.0,
            scale2: 0.035,
            ratio: 0.05,
        }
    }

    fn bump(t: f64, shape: f64, scale: f64) -> f64 {
        // unit peak at (shape − 1)·scale
        let peak = (shape - 1.0) * scale;
        (t / peak).powf(shape - 1.0) * (-(t - peak) / scale).exp()
    }

    pub fn value(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        Self::bump(t, self.shape1, self.scale1) - self.ratio * Self::bump(t, self.shape2, self.scale2)
    }

    /// Unit-norm taps at lags 0, 1/fs, … up to 400 ms.
    pub fn taps(&self, fs: f64) -> Vec<f64> {
        let n = (KERNEL_MS / 1000.0 * fs).floor() as usize + 1;
        unit((0..n).map(|i| self.value(i as f64 / fs)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardModel {
    /// Spatial pattern of the attended response.
    pub a: Vec<f64>,
    pub kernel: DogKernel,
    pub a_distractor: Vec<f64>,
    pub kernel_distractor: DogKernel,
    /// Signal-to-noise power ratio per channel; infinite means no noise.
    pub snr_db: f64,
    pub distractor_gain: f64,
}

impl ForwardModel {
    /// Random unit patterns over `c` channels with the default kernels.
    pub fn random(c: usize, snr_db: f64, distractor_gain: f64, seed: u64) -> Self {
        let mut rng = rng_for(seed, STREAM_SUBJECT);
        ForwardModel {
            a: unit(randn(&mut rng, c)),
            kernel: DogKernel::attended(),
            a_distractor: unit(randn(&mut rng, c)),
            kernel_distractor: DogKernel::distractor(),
            snr_db,
            distractor_gain,
        }
    }

    pub fn n_channels(&self) -> usize {
        self.a.len()
    }

    /// Kernel taps at the model rate.
    pub fn h(&self) -> Vec<f64> {
        self.kernel.taps(MODEL_FS)
    }

    pub fn validate(&self) -> Result<()> {
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if self.a.is_empty() || !(norm(&self.a) > 0.0) {
            return config("spatial pattern must have nonzero norm");
        }
        if self.a_distractor.len() != self.a.len() {
            return config("distractor pattern length differs from the attended pattern");
        }
        if self.snr_db.is_nan() || !self.distractor_gain.is_finite() {
            return config("SNR and distractor gain must be numbers");
        }
        Ok(())
    }

    /// Noise-free EEG at `fs` for the given raw (unnormalized) envelopes.
    fn response(&self, s_att: &[f64], s_un: &[f64], fs: f64) -> DMatrix<f64> {
        let r_att = causal_filter(s_att, &self.kernel.taps(fs));
        let r_un = causal_filter(s_un, &self.kernel_distractor.taps(fs));
        let (t, c) = (s_att.len(), self.a.len());
        DMatrix::from_fn(t, c, |i, ch| {
            self.a[ch] * r_att[i] + self.distractor_gain * self.a_distractor[ch] * r_un[i]
        })
    }

    /// Add white noise at the configured SNR.
    fn add_noise(&self, sig: DMatrix<f64>, rng: &mut impl Rng) -> DMatrix<f64> {
        if self.snr_db == f64::INFINITY {
            return sig;
        }
        let p_sig = sig.iter().map(|v| v * v).sum::<f64>() / sig.len() as f64;
        let sd = (p_sig / 10f64.powf(self.snr_db / 10.0)).sqrt();
        sig.map(|v| v + sd * rng.sample::<f64, _>(StandardNormal))
    }
}

/// y[t] = Σ_k h[k]·x[t−k], zero before the start.
pub fn causal_filter(x: &[f64], h: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|t| h.iter().take(t + 1).enumerate().map(|(k, hk)| hk * x[t - k]).sum())
        .collect()
}

/// Non-negative envelope at `fs`: exponentiated low-pass-tilted,
/// band-limited noise.
fn raw_envelope(n: usize, fs: f64, seed: u64) -> Result<Vec<f64>> {
    let f = design_bandpass(ENV_BAND.0, ENV_BAND.1, fs, ENV_TRANSITION)?;
    // generate with margins so the filter has room and edges are cropped
    let margin = 2 * f.len();
    let mut rng = rng_for(seed, STREAM_ENV);
    let rho = (-2.0 * std::f64::consts::PI * ENV_CORNER_HZ / fs).exp();
    let mut state = 0.0;
    let w: Vec<f64> = randn(&mut rng, n + 2 * margin)
        .into_iter()
        .map(|v| {
            state = rho * state + v;
            state
        })
        .collect();
    let x = filt_zero_phase_1d(&w, &f)?;
    let x = &x[margin..margin + n];
    let sd = crate::stats::std_dev(x);
    Ok(x.iter().map(|v| (MOD_DEPTH * v / sd).exp()).collect())
}

/// Z-scored 64 Hz envelope, band-limited to 0.5–16 Hz before a
/// non-negative exponential modulation.
pub fn gen_envelope(duration_s: f64, seed: u64) -> Result<Vec<f64>> {
    if !(duration_s >= 2.0) {
        return config(format!("envelope needs at least 2 s, got {duration_s}"));
    }
    let n = (duration_s * MODEL_FS).round() as usize;
    zscore_1d(&raw_envelope(n, MODEL_FS, seed)?)
}

/// Names and stimuli of one trial.
#[derive(Debug, Clone)]
pub struct TrialSpec {
    pub subject_id: String,
    pub trial_id: String,
    pub audio_id_attended: String,
    pub audio_id_unattended: String,
    /// Seeds the stimulus envelopes.
    pub seed_attended: u64,
    pub seed_unattended: u64,
    /// Seeds noise and candidate order.
    pub seed: u64,
}

/// Envelope seed for a story, so the same audio id always carries the same
/// envelope.
fn story_seed(cohort_seed: u64, story: usize) -> u64 {
    rng_for(cohort_seed, STREAM_ENV | story as u64).random()
}

fn render(fm: &ForwardModel, duration_s: f64, spec: &TrialSpec) -> Result<TrialBundle> {
    fm.validate()?;
    let s_att = gen_envelope(duration_s, spec.seed_attended)?;
    let s_un = gen_envelope(duration_s, spec.seed_unattended)?;
    let mut rng = rng_for(spec.seed, STREAM_TRIAL);
    let attended = if rng.random::<bool>() { Candidate::A } else { Candidate::B };
    let eeg = zscore(&fm.add_noise(fm.response(&s_att, &s_un, MODEL_FS), &mut rng))?;
    let (env_a, env_b) = match attended {
        Candidate::A => (s_att, s_un),
        Candidate::B => (s_un, s_att),
    };
    Ok(TrialBundle {
        subject_id: spec.subject_id.clone(),
        trial_id: spec.trial_id.clone(),
        audio_id_attended: spec.audio_id_attended.clone(),
        audio_id_unattended: spec.audio_id_unattended.clone(),
        eeg,
        env_a,
        env_b,
        attended,
        fs: MODEL_FS,
    })
}

/// A standalone trial at 64 Hz with both envelopes and the candidate order
/// drawn from `seed`.
pub fn gen_trial(fm: &ForwardModel, duration_s: f64, seed: u64) -> Result<TrialBundle> {
    let mut rng = rng_for(seed, STREAM_TRIAL | 1);
    render(
        fm,
        duration_s,
        &TrialSpec {
            subject_id: "synth".into(),
            trial_id: format!("trial-{seed}"),
            audio_id_attended: format!("audio-{seed}-1"),
            audio_id_unattended: format!("audio-{seed}-2"),
            seed_attended: rng.random(),
            seed_unattended: rng.random(),
            seed,
        },
    )
}

/// The same trial at acquisition rates: 128 Hz EEG, and 8 kHz audio made of
/// white noise amplitude-modulated by each envelope.
pub fn gen_raw_trial(fm: &ForwardModel, duration_s: f64, spec: &TrialSpec) -> Result<RawTrial> {
    fm.validate()?;
    if !(duration_s >= 2.0) {
        return config(format!("trial needs at least 2 s, got {duration_s}"));
    }
    let n = (duration_s * RAW_EEG_FS).round() as usize;
    let s_att = raw_envelope(n, RAW_EEG_FS, spec.seed_attended)?;
    let s_un = raw_envelope(n, RAW_EEG_FS, spec.seed_unattended)?;
    let mut rng = rng_for(spec.seed, STREAM_TRIAL);
    let attended = if rng.random::<bool>() { Candidate::A } else { Candidate::B };
    let eeg = fm.add_noise(fm.response(&s_att, &s_un, RAW_EEG_FS), &mut rng);
    let audio = |env: &[f64], seed: u64| {
        let mut rng = rng_for(seed, STREAM_CARRIER);
        let n_audio = (duration_s * RAW_AUDIO_FS).round() as usize;
        (0..n_audio)
            .map(|i| {
                // linear interpolation of the envelope onto the audio grid
                let pos = i as f64 * RAW_EEG_FS / RAW_AUDIO_FS;
                let k = (pos.floor() as usize).min(env.len() - 1);
                let frac = pos - k as f64;
                let e = env[k] * (1.0 - frac) + env[(k + 1).min(env.len() - 1)] * frac;
                e * rng.sample::<f64, _>(StandardNormal)
            })
            .collect::<Vec<f64>>()
    };
    let (att_audio, un_audio) = (audio(&s_att, spec.seed_attended), audio(&s_un, spec.seed_unattended));
    let (audio_a, audio_b) = match attended {
        Candidate::A => (att_audio, un_audio),
        Candidate::B => (un_audio, att_audio),
    };
    Ok(RawTrial {
        subject_id: spec.subject_id.clone(),
        trial_id: spec.trial_id.clone(),
        audio_id_attended: spec.audio_id_attended.clone(),
        audio_id_unattended: spec.audio_id_unattended.clone(),
        attended,
        eeg,
        fs_eeg: RAW_EEG_FS,
        audio_a,
        audio_b,
        fs_audio: RAW_AUDIO_FS,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortSpec {
    pub n_subjects: usize,
    pub trials_per_subject: usize,
    pub duration_s: f64,
    pub snr_db: f64,
    pub distractor_gain: f64,
    pub channels: usize,
    /// Per-subject deviation of the spatial patterns around the shared ones.
    pub spatial_jitter: f64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            n_subjects: 8,
            trials_per_subject: 40,
            duration_s: 26.0,
            snr_db: 30.0,
            distractor_gain: 0.5,
            channels: SYNTH_CHANNELS,
            spatial_jitter: 0.5,
        }
    }
}

/// One forward model per subject. Patterns share a common component and
/// kernels vary by up to ±10 % in time scale.
pub fn subject_models(spec: &CohortSpec, seed: u64) -> Vec<ForwardModel> {
    let base = ForwardModel::random(spec.channels, spec.snr_db, spec.distractor_gain, seed);
    (0..spec.n_subjects)
        .map(|s| {
            let mut rng = rng_for(seed, STREAM_SUBJECT | (s as u64 + 1));
            let mut jitter = |v: &[f64]| {
                let z = unit(randn(&mut rng, v.len()));
                unit(v.iter().zip(z).map(|(a, b)| a + spec.spatial_jitter * b).collect())
            };
            let a = jitter(&base.a);
            let a_distractor = jitter(&base.a_distractor);
            let stretch = 1.0 + rng.random_range(-0.1..0.1);
            let mut kernel = base.kernel;
            kernel.scale1 *= stretch;
            kernel.scale2 *= stretch;
            ForwardModel {
                a,
                a_distractor,
                kernel,
                ..base.clone()
            }
        })
        .collect()
}

/// Subject `s` attends story `s·⌈n/2⌉ + j` (mod the pool) in trial `j`, so
/// neighbouring subjects share half their attended stories. The unattended
/// story sits half the pool away.
fn trial_specs(spec: &CohortSpec, seed: u64) -> Vec<(usize, TrialSpec)> {
    let half = spec.trials_per_subject.div_ceil(2);
    let pool = spec.n_subjects.max(3) * half;
    let mut out = Vec::new();
    for s in 0..spec.n_subjects {
        for j in 0..spec.trials_per_subject {
            let att = (s * half + j) % pool;
            let un = (att + pool / 2) % pool;
            let trial_seed: u64 = rng_for(seed, STREAM_TRIAL | ((s as u64) << 24) | j as u64).random();
            out.push((
                s,
                TrialSpec {
                    subject_id: format!("S{:02}", s + 1),
                    trial_id: format!("t{j:03}"),
                    audio_id_attended: format!("story{att:03}"),
                    audio_id_unattended: format!("story{un:03}"),
                    seed_attended: story_seed(seed, att),
                    seed_unattended: story_seed(seed, un),
                    seed: trial_seed,
                },
            ));
        }
    }
    out
}

fn check_cohort(spec: &CohortSpec) -> Result<()> {
    if spec.n_subjects < 2 {
        return config(format!("a cohort needs at least 2 subjects, got {}", spec.n_subjects));
    }
    if spec.trials_per_subject == 0 || spec.channels == 0 {
        return config("trials per subject and channel count must be positive");
    }
    Ok(())
}

/// Preprocessed-rate cohort, subjects in order.
pub fn gen_cohort(spec: &CohortSpec, seed: u64) -> Result<Vec<TrialBundle>> {
    check_cohort(spec)?;
    let models = subject_models(spec, seed);
    trial_specs(spec, seed)
        .iter()
        .map(|(s, ts)| render(&models[*s], spec.duration_s, ts))
        .collect()
}

/// Acquisition-rate cohort for exercising the preprocessing pipeline.
pub fn gen_raw_cohort(spec: &CohortSpec, seed: u64) -> Result<Vec<RawTrial>> {
    check_cohort(spec)?;
    let models = subject_models(spec, seed);
    trial_specs(spec, seed)
        .iter()
        .map(|(s, ts)| gen_raw_trial(&models[*s], spec.duration_s, ts))
        .collect()
}
