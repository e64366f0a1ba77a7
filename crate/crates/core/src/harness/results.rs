//! Result rows, CSV round-trip and the JSON summary.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::stats::{mean, std_dev};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub model: String,
    pub mode: String,
    pub subject: String,
    pub fold: usize,
    pub window_s: f64,
    pub n_windows: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub dataset: String,
    pub model: String,
    pub mode: String,
    pub window_s: f64,
    pub n_rows: usize,
    pub n_windows: usize,
    pub mean: f64,
    pub std: f64,
}

impl ResultsTable {
    pub fn extend(&mut self, rows: impl IntoIterator<Item = ResultRow>) {
        self.rows.extend(rows);
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let rows = r.deserialize().collect::<std::result::Result<Vec<ResultRow>, _>>()?;
        Ok(ResultsTable { rows })
    }

    /// Mean ± sample std of accuracy per (dataset, model, mode, window).
    pub fn summary(&self) -> Vec<SummaryEntry> {
        let mut groups: BTreeMap<(String, String, String, u64), Vec<&ResultRow>> = BTreeMap::new();
        for r in &self.rows {
            groups
                .entry((r.dataset.clone(), r.model.clone(), r.mode.clone(), r.window_s.to_bits()))
                .or_default()
                .push(r);
        }
        let mut out: Vec<SummaryEntry> = groups
            .into_iter()
            .map(|((dataset, model, mode, w), rows)| {
                let acc: Vec<f64> = rows.iter().map(|r| r.accuracy).collect();
                SummaryEntry {
                    dataset,
                    model,
                    mode,
                    window_s: f64::from_bits(w),
                    n_rows: rows.len(),
                    n_windows: rows.iter().map(|r| r.n_windows).sum(),
                    mean: mean(&acc),
                    std: std_dev(&acc),
                }
            })
            .collect();
        out.sort_by(|a, b| {
            (&a.dataset, &a.model, &a.mode)
                .cmp(&(&b.dataset, &b.model, &b.mode))
                .then(a.window_s.total_cmp(&b.window_s))
        });
        out
    }

    /// Accuracy pooled over windows for one model at one window length.
    pub fn pooled_accuracy(&self, model: &str, window_s: f64) -> Option<f64> {
        let (mut c, mut n) = (0.0, 0usize);
        for r in self.rows.iter().filter(|r| r.model == model && r.window_s == window_s) {
            c += r.accuracy * r.n_windows as f64;
            n += r.n_windows;
        }
        (n > 0).then(|| c / n as f64)
    }

    pub fn write_summary_json(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&self.summary())?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}
