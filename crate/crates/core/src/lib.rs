//! Auditory attention decoding from EEG.
//!
//! Preprocessing, linear baselines (ridge and CCA+LDA), the causal/anticausal
//! TCN classifier, a synthetic cohort generator, the cross-validation harness
//! and spatial-filter clustering.

pub mod bundle;
pub mod catcn;
pub mod dsp;
pub mod error;
pub mod harness;
pub mod linear;
pub mod spatial;
pub mod stats;
pub mod synth;

pub use bundle::{Candidate, Decision, RawTrial, TrialBundle};
pub use error::{AadError, Result};
