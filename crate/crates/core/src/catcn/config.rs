use serde::{Deserialize, Serialize};

use aad_autodiff::Padding;

use crate::error::{config, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Causality {
    /// Output at t sees inputs at ≤ t (left padding).
    Causal,
    /// Output at t sees inputs at ≥ t (right padding).
    Anticausal,
    /// Symmetric padding; the plain TCN ablation.
    Centered,
}

/// Zero padding that keeps the length and enforces `mode`.
pub fn pad_for_causality(k: usize, dilation: usize, mode: Causality) -> Padding {
    let span = (k - 1) * dilation;
    match mode {
        Causality::Causal => Padding {
            left: span,
            right: 0,
        },
        Causality::Anticausal => Padding {
            left: 0,
            right: span,
        },
        Causality::Centered => Padding {
            left: span / 2,
            right: span - span / 2,
        },
    }
}

/// Samples seen by one output of an `n`-layer branch with kernel `k` and
/// dilations 1, 2, …, 2^(n−1).
pub fn receptive_field(k: usize, n: usize) -> usize {
    1 + (k - 1) * ((1usize << n) - 1)
}

pub fn receptive_field_ms(k: usize, n: usize, fs: f64) -> f64 {
    receptive_field(k, n) as f64 / fs * 1000.0
}

pub fn dilation(layer: usize) -> usize {
    1 << layer
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatcnConfig {
    /// EEG channel count.
    pub c: usize,
    pub cx: usize,
    pub cs: usize,
    pub nx: usize,
    pub ns: usize,
    pub k: usize,
    pub eeg_causality: Causality,
    pub stim_causality: Causality,
    pub fs: f64,
    /// Without the stem the head correlates raw channels with the raw
    /// envelope and both branches must be empty.
    #[serde(default = "yes")]
    pub stem: bool,
}

fn yes() -> bool {
    true
}

impl CatcnConfig {
    /// Nx = 3 anticausal EEG layers, Ns = 5 causal stimulus layers.
    pub fn final_model(c: usize) -> Self {
        CatcnConfig {
            c,
            cx: 32,
            cs: 32,
            nx: 3,
            ns: 5,
            k: 3,
            eeg_causality: Causality::Anticausal,
            stim_causality: Causality::Causal,
            fs: 64.0,
            stem: true,
        }
    }

    pub fn raw_input(c: usize) -> Self {
        CatcnConfig {
            cx: c,
            cs: 1,
            nx: 0,
            ns: 0,
            stem: false,
            ..Self::final_model(c)
        }
    }

    pub fn stem_only(c: usize) -> Self {
        CatcnConfig {
            nx: 0,
            ns: 0,
            ..Self::final_model(c)
        }
    }

    /// Symmetric TCN branches of equal depth.
    pub fn tcn(c: usize, depth: usize) -> Self {
        CatcnConfig {
            nx: depth,
            ns: depth,
            eeg_causality: Causality::Centered,
            stim_causality: Causality::Centered,
            ..Self::final_model(c)
        }
    }

    /// Anticausal EEG and causal stimulus branches of equal depth.
    pub fn causal(c: usize, depth: usize) -> Self {
        CatcnConfig {
            nx: depth,
            ns: depth,
            ..Self::final_model(c)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.c == 0 || self.cx == 0 || self.cs == 0 || self.k == 0 {
            return config("channel counts and kernel size must be at least 1");
        }
        if !(self.fs > 0.0) {
            return config(format!("sampling rate must be positive, got {}", self.fs));
        }
        if self.nx > 16 || self.ns > 16 {
            return config("branch depth above 16 overflows any practical window");
        }
        if !self.stem {
            if self.nx != 0 || self.ns != 0 {
                return config("branches need the stem; raw-input models have depth 0");
            }
            if self.cx != self.c || self.cs != 1 {
                return config("without a stem, cx must equal c and cs must be 1");
            }
        }
        Ok(())
    }

    pub fn eeg_rf(&self) -> usize {
        receptive_field(self.k, self.nx)
    }

    pub fn stim_rf(&self) -> usize {
        receptive_field(self.k, self.ns)
    }
}

/// Trainable parameters of one residual block.
pub fn block_params(c: usize, k: usize) -> usize {
    (c * c + c) + (k * c + c) + (c * c + c) + 2 * c
}

pub fn count_params(cfg: &CatcnConfig) -> usize {
    let stems = if cfg.stem {
        (cfg.c * cfg.cx + cfg.cx) + (cfg.cs + cfg.cs)
    } else {
        0
    };
    let blocks = cfg.nx * block_params(cfg.cx, cfg.k) + cfg.ns * block_params(cfg.cs, cfg.k);
    stems + blocks + 2 * cfg.cx * cfg.cs + 1
}

/// MACs for one decision window of `t` samples. `layers` counts one MAC per
/// weight–input product in the convolutions (both candidate passes) and the
/// classifier; biases are not products. `correlation` counts the head's
/// per-pair cross products plus one pass per signal for its variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MacCount {
    pub layers: u64,
    pub correlation: u64,
}

pub fn count_macs(cfg: &CatcnConfig, t: usize) -> MacCount {
    let t = t as u64;
    let (c, cx, cs, k) = (cfg.c as u64, cfg.cx as u64, cfg.cs as u64, cfg.k as u64);
    let block = |ch: u64| (2 * ch * ch + k * ch) * t;
    let mut layers = 0;
    if cfg.stem {
        layers += c * cx * t + 2 * cs * t;
    }
    layers += cfg.nx as u64 * block(cx) + 2 * cfg.ns as u64 * block(cs);
    layers += 2 * cx * cs;
    let correlation = 2 * cx * cs * t + (cx + 2 * cs) * t;
    MacCount {
        layers,
        correlation,
    }
}

/// "22.5K"-style rounding to one decimal of the unit.
pub fn human_count(n: u64) -> String {
    match n {
        n if n >= 1_000_000 => format!("{:.1}M", n as f64 / 1e6),
        _ => format!("{:.1}K", n as f64 / 1e3),
    }
}
