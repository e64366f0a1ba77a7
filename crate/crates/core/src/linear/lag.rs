use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{config, contract, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LagDirection {
    /// Column block l holds x(t + l).
    Future,
    /// Column block l holds x(t − l).
    Past,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PadSide {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LagSpec {
    pub n_lags: usize,
    pub direction: LagDirection,
    pub padding: PadSide,
}

impl LagSpec {
    /// Future samples, zero-padded at the end.
    pub fn future(n_lags: usize) -> Self {
        LagSpec {
            n_lags,
            direction: LagDirection::Future,
            padding: PadSide::Right,
        }
    }

    /// Past samples, zero-padded at the start.
    pub fn past(n_lags: usize) -> Self {
        LagSpec {
            n_lags,
            direction: LagDirection::Past,
            padding: PadSide::Left,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_lags == 0 {
            return config("lag count must be at least 1");
        }
        match (self.direction, self.padding) {
            (LagDirection::Future, PadSide::Right) | (LagDirection::Past, PadSide::Left) => Ok(()),
            (d, p) => config(format!("{d:?} lags are padded on the other side, not {p:?}")),
        }
    }

    /// Signed sample offset of lag `l`.
    pub fn offset(&self, l: usize) -> isize {
        match self.direction {
            LagDirection::Future => l as isize,
            LagDirection::Past => -(l as isize),
        }
    }
}

/// T×(L·C) lag matrix, channel-major within each lag block.
pub fn build_lag_matrix(x: &DMatrix<f64>, spec: LagSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let (t, c) = x.shape();
    if t <= spec.n_lags {
        return contract(format!("{t} samples cannot hold {} lags", spec.n_lags));
    }
    let mut out = DMatrix::zeros(t, spec.n_lags * c);
    for l in 0..spec.n_lags {
        let off = spec.offset(l);
        for ch in 0..c {
            let src = x.column(ch);
            let mut dst = out.column_mut(l * c + ch);
            for row in 0..t {
                let j = row as isize + off;
                if (0..t as isize).contains(&j) {
                    dst[row] = src[j as usize];
                }
            }
        }
    }
    Ok(out)
}

pub fn lag_signal(s: &[f64], spec: LagSpec) -> Result<DMatrix<f64>> {
    build_lag_matrix(&DMatrix::from_column_slice(s.len(), 1, s), spec)
}
