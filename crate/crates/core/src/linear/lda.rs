//! Two-class Fisher discriminant.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bundle::{Candidate, Decision};
use crate::error::{AadError, Result};

/// Ridge added to the pooled within-class covariance.
pub const LDA_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaClassifier {
    /// Empty until trained.
    pub w: Vec<f64>,
    pub bias: f64,
}

impl LdaClassifier {
    pub fn untrained() -> Self {
        LdaClassifier {
            w: Vec::new(),
            bias: 0.0,
        }
    }

    pub fn is_trained(&self) -> bool {
        !self.w.is_empty()
    }

    /// Fisher direction Σ⁻¹(μ_A − μ_B) with the threshold halfway between
    /// the projected class means.
    pub fn fit(features: &[Vec<f64>], labels: &[Candidate]) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(AadError::Contract("feature and label counts differ".into()));
        }
        let dim = features.first().map_or(0, Vec::len);
        if dim == 0 || features.iter().any(|f| f.len() != dim) {
            return Err(AadError::Contract("features must share a nonzero length".into()));
        }
        let class = |c: Candidate| -> Vec<DVector<f64>> {
            features
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == c)
                .map(|(f, _)| DVector::from_column_slice(f))
                .collect()
        };
        let (a, b) = (class(Candidate::A), class(Candidate::B));
        if a.len() < 2 || b.len() < 2 {
            return Err(AadError::Config(format!(
                "LDA needs two samples per class, got {} and {}",
                a.len(),
                b.len()
            )));
        }
        let mean = |xs: &[DVector<f64>]| xs.iter().fold(DVector::zeros(dim), |acc, x| acc + x) / xs.len() as f64;
        let (ma, mb) = (mean(&a), mean(&b));
        let mut pooled = DMatrix::zeros(dim, dim);
        for (xs, m) in [(&a, &ma), (&b, &mb)] {
            for x in xs.iter() {
                let d = x - m;
                pooled += &d * d.transpose();
            }
        }
        pooled /= (a.len() + b.len() - 2) as f64;
        pooled += DMatrix::identity(dim, dim) * LDA_RIDGE;
        let w = pooled
            .cholesky()
            .ok_or_else(|| AadError::Numeric("pooled LDA covariance not positive definite".into()))?
            .solve(&(&ma - &mb));
        let bias = -w.dot(&((&ma + &mb) / 2.0));
        Ok(LdaClassifier {
            w: w.as_slice().to_vec(),
            bias,
        })
    }

    /// Fit on the samples plus their negated, label-flipped mirrors. The
    /// mirrored class means are exact negatives, so the bias is exactly 0.
    pub fn fit_antisymmetric(features: &[Vec<f64>], labels: &[Candidate]) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(AadError::Contract("feature and label counts differ".into()));
        }
        let dim = features.first().map_or(0, Vec::len);
        if dim == 0 || features.iter().any(|f| f.len() != dim) {
            return Err(AadError::Contract("features must share a nonzero length".into()));
        }
        if features.len() < 2 {
            return Err(AadError::Config(format!(
                "LDA needs two samples per class, got {}",
                features.len()
            )));
        }
        // orient every sample as if A were attended
        let g: Vec<DVector<f64>> = features
            .iter()
            .zip(labels)
            .map(|(f, &l)| {
                let v = DVector::from_column_slice(f);
                if l == Candidate::A {
                    v
                } else {
                    -v
                }
            })
            .collect();
        let n = g.len();
        let ma = g.iter().fold(DVector::zeros(dim), |acc, x| acc + x) / n as f64;
        let mb = -&ma;
        let mut scatter = DMatrix::zeros(dim, dim);
        for x in &g {
            let d = x - &ma;
            scatter += &d * d.transpose();
        }
        // both mirrored classes contribute the same scatter
        let pooled = scatter * (2.0 / (2 * n - 2) as f64) + DMatrix::identity(dim, dim) * LDA_RIDGE;
        let w = pooled
            .cholesky()
            .ok_or_else(|| AadError::Numeric("pooled LDA covariance not positive definite".into()))?
            .solve(&(&ma - &mb));
        let bias = -w.dot(&((&ma + &mb) / 2.0));
        Ok(LdaClassifier {
            w: w.as_slice().to_vec(),
            bias,
        })
    }

    pub fn score(&self, feature: &[f64]) -> Result<f64> {
        if !self.is_trained() {
            return Err(AadError::State("LDA classifier used before training".into()));
        }
        if feature.len() != self.w.len() {
            return Err(AadError::Contract(format!(
                "feature of length {} for a {}-dimensional classifier",
                feature.len(),
                self.w.len()
            )));
        }
        Ok(self.w.iter().zip(feature).map(|(w, f)| w * f).sum::<f64>() + self.bias)
    }

    pub fn decide(&self, feature: &[f64]) -> Result<Decision> {
        Ok(Decision::from_score(self.score(feature)?))
    }
}
