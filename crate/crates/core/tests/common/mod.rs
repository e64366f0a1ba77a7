#![allow(dead_code)]

use aad_core::{Candidate, TrialBundle};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(r: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.sample(StandardNormal)).collect()
}

pub fn randn_matrix(r: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_vec(rows, cols, randn(r, rows * cols))
}

pub fn bundle(
    subject: &str,
    trial: &str,
    audio: &str,
    eeg: DMatrix<f64>,
    env_a: Vec<f64>,
    env_b: Vec<f64>,
    attended: Candidate,
) -> TrialBundle {
    TrialBundle {
        subject_id: subject.into(),
        trial_id: trial.into(),
        audio_id_attended: audio.into(),
        audio_id_unattended: format!("{audio}-other"),
        eeg,
        env_a,
        env_b,
        attended,
        fs: 64.0,
    }
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}
