//! Trial containers and their on-disk layout.
//!
//! A bundle directory holds `meta.json` plus raw little-endian float32
//! arrays. Preprocessed bundles carry `eeg.bin` (row-major T×C), `envA.bin`
//! and `envB.bin`; raw bundles carry `eeg.bin` and `audioA.bin`/`audioB.bin`
//! at `fs_audio`.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{AadError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Candidate {
    A,
    B,
}

impl Candidate {
    pub fn flip(self) -> Self {
        match self {
            Candidate::A => Candidate::B,
            Candidate::B => Candidate::A,
        }
    }

    /// Training target: 1 when candidate A is attended.
    pub fn label(self) -> f64 {
        match self {
            Candidate::A => 1.0,
            Candidate::B => 0.0,
        }
    }
}

/// One preprocessed trial at the model rate.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialBundle {
    pub subject_id: String,
    pub trial_id: String,
    pub audio_id_attended: String,
    pub audio_id_unattended: String,
    /// T×C
    pub eeg: DMatrix<f64>,
    pub env_a: Vec<f64>,
    pub env_b: Vec<f64>,
    pub attended: Candidate,
    pub fs: f64,
}

impl TrialBundle {
    pub fn len(&self) -> usize {
        self.eeg.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.eeg.nrows() == 0
    }

    pub fn n_channels(&self) -> usize {
        self.eeg.ncols()
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.fs
    }

    pub fn attended_env(&self) -> &[f64] {
        match self.attended {
            Candidate::A => &self.env_a,
            Candidate::B => &self.env_b,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.eeg.nrows();
        if self.env_a.len() != t || self.env_b.len() != t {
            return Err(AadError::Data(format!(
                "trial {}: eeg has {t} samples, envelopes {} and {}",
                self.trial_id,
                self.env_a.len(),
                self.env_b.len()
            )));
        }
        if self.audio_id_attended.is_empty() || self.audio_id_unattended.is_empty() {
            return Err(AadError::Data(format!(
                "trial {}: empty audio id",
                self.trial_id
            )));
        }
        if !(self.fs > 0.0) {
            return Err(AadError::Data(format!(
                "trial {}: sampling rate {}",
                self.trial_id, self.fs
            )));
        }
        Ok(())
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        fs::create_dir_all(dir)?;
        let meta = Meta {
            subject_id: self.subject_id.clone(),
            trial_id: self.trial_id.clone(),
            audio_id_attended: self.audio_id_attended.clone(),
            audio_id_unattended: self.audio_id_unattended.clone(),
            attended: self.attended,
            fs: self.fs,
            n_samples: self.len(),
            n_channels: self.n_channels(),
            fs_audio: None,
            n_audio_samples: None,
        };
        write_meta(dir, &meta)?;
        write_f32(&dir.join("eeg.bin"), &row_major(&self.eeg))?;
        write_f32(&dir.join("envA.bin"), &self.env_a)?;
        write_f32(&dir.join("envB.bin"), &self.env_b)?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let meta = read_meta(dir)?;
        if meta.fs_audio.is_some() {
            return Err(AadError::Data(format!(
                "{} is a raw bundle; preprocess it first",
                dir.display()
            )));
        }
        let eeg = read_f32(&dir.join("eeg.bin"), meta.n_samples * meta.n_channels)?;
        let bundle = TrialBundle {
            eeg: DMatrix::from_row_slice(meta.n_samples, meta.n_channels, &eeg),
            env_a: read_f32(&dir.join("envA.bin"), meta.n_samples)?,
            env_b: read_f32(&dir.join("envB.bin"), meta.n_samples)?,
            subject_id: meta.subject_id,
            trial_id: meta.trial_id,
            audio_id_attended: meta.audio_id_attended,
            audio_id_unattended: meta.audio_id_unattended,
            attended: meta.attended,
            fs: meta.fs,
        };
        bundle.validate()?;
        Ok(bundle)
    }
}

/// One trial at acquisition rates, before preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrial {
    pub subject_id: String,
    pub trial_id: String,
    pub audio_id_attended: String,
    pub audio_id_unattended: String,
    pub attended: Candidate,
    /// T×C at `fs_eeg`
    pub eeg: DMatrix<f64>,
    pub fs_eeg: f64,
    pub audio_a: Vec<f64>,
    pub audio_b: Vec<f64>,
    pub fs_audio: f64,
}

impl RawTrial {
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        if self.audio_a.len() != self.audio_b.len() {
            return Err(AadError::Data(format!(
                "trial {}: audio lengths differ",
                self.trial_id
            )));
        }
        fs::create_dir_all(dir)?;
        let meta = Meta {
            subject_id: self.subject_id.clone(),
            trial_id: self.trial_id.clone(),
            audio_id_attended: self.audio_id_attended.clone(),
            audio_id_unattended: self.audio_id_unattended.clone(),
            attended: self.attended,
            fs: self.fs_eeg,
            n_samples: self.eeg.nrows(),
            n_channels: self.eeg.ncols(),
            fs_audio: Some(self.fs_audio),
            n_audio_samples: Some(self.audio_a.len()),
        };
        write_meta(dir, &meta)?;
        write_f32(&dir.join("eeg.bin"), &row_major(&self.eeg))?;
        write_f32(&dir.join("audioA.bin"), &self.audio_a)?;
        write_f32(&dir.join("audioB.bin"), &self.audio_b)?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let meta = read_meta(dir)?;
        let (Some(fs_audio), Some(n_audio)) = (meta.fs_audio, meta.n_audio_samples) else {
            return Err(AadError::Data(format!(
                "{} has no audio; not a raw bundle",
                dir.display()
            )));
        };
        let eeg = read_f32(&dir.join("eeg.bin"), meta.n_samples * meta.n_channels)?;
        Ok(RawTrial {
            eeg: DMatrix::from_row_slice(meta.n_samples, meta.n_channels, &eeg),
            fs_eeg: meta.fs,
            audio_a: read_f32(&dir.join("audioA.bin"), n_audio)?,
            audio_b: read_f32(&dir.join("audioB.bin"), n_audio)?,
            fs_audio,
            subject_id: meta.subject_id,
            trial_id: meta.trial_id,
            audio_id_attended: meta.audio_id_attended,
            audio_id_unattended: meta.audio_id_unattended,
            attended: meta.attended,
        })
    }
}

/// True if `dir` holds a raw (acquisition-rate) bundle.
pub fn is_raw_bundle(dir: &Path) -> Result<bool> {
    Ok(read_meta(dir)?.fs_audio.is_some())
}

/// Bundle directories directly under `root`, sorted by name.
pub fn list_bundles(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root)? {
        let path = entry?.path();
        if path.join("meta.json").is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

pub fn read_dataset(root: &Path) -> Result<Vec<TrialBundle>> {
    list_bundles(root)?
        .iter()
        .map(|d| TrialBundle::read_dir(d))
        .collect()
}

pub fn write_dataset(root: &Path, trials: &[TrialBundle]) -> Result<()> {
    for t in trials {
        t.write_dir(&root.join(bundle_dir_name(&t.subject_id, &t.trial_id)))?;
    }
    Ok(())
}

pub fn bundle_dir_name(subject: &str, trial: &str) -> String {
    format!("{subject}_{trial}")
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    subject_id: String,
    trial_id: String,
    audio_id_attended: String,
    audio_id_unattended: String,
    attended: Candidate,
    fs: f64,
    n_samples: usize,
    n_channels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fs_audio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_audio_samples: Option<usize>,
}

fn write_meta(dir: &Path, meta: &Meta) -> Result<()> {
    let mut text = serde_json::to_string_pretty(meta)?;
    text.push('\n');
    fs::write(dir.join("meta.json"), text)?;
    Ok(())
}

fn read_meta(dir: &Path) -> Result<Meta> {
    let text = fs::read_to_string(dir.join("meta.json"))?;
    Ok(serde_json::from_str(&text)?)
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn write_f32(path: &Path, data: &[f64]) -> Result<()> {
    let bytes: Vec<u8> = data
        .iter()
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect();
    fs::write(path, bytes)?;
    Ok(())
}

fn read_f32(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() != expected * 4 {
        return Err(AadError::Data(format!(
            "{}: expected {expected} float32 values, found {} bytes",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// One binary attention decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub choice: Candidate,
    /// Scores were exactly equal (or undefined) and the rule defaulted to A.
    pub tie: bool,
}

impl Decision {
    /// Positive score favours A; zero or NaN is a tie resolved to A.
    pub fn from_score(score: f64) -> Self {
        if score > 0.0 {
            Decision { choice: Candidate::A, tie: false }
        } else if score < 0.0 {
            Decision { choice: Candidate::B, tie: false }
        } else {
            Decision { choice: Candidate::A, tie: true }
        }
    }
}
