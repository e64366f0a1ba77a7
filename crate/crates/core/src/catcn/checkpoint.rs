//! `manifest.json` (config, metadata, tensor names/shapes/offsets) next to
//! `params.bin`, a flat little-endian f64 array.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::CatcnConfig;
use super::model::CatcnModel;
use crate::error::{AadError, Result};

const MANIFEST: &str = "manifest.json";
const PARAMS: &str = "params.bin";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    /// "si" or "ss".
    pub mode: String,
    pub lr: f64,
    /// Epoch the stored weights come from; 0 is the initial model.
    pub epoch: usize,
    pub val_loss: Option<f64>,
    pub seed: u64,
    /// Held-out subject and fold the weights were trained for.
    #[serde(default)]
    pub subject: Option<String>,
    #[serde(default)]
    pub fold: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    /// In f64 elements from the start of params.bin.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    config: CatcnConfig,
    meta: CheckpointMeta,
    tensors: Vec<Entry>,
    bn_momentum: f64,
    bn_updates: Vec<u64>,
}

/// Parameters, then each block's running mean and variance.
pub fn save_checkpoint(model: &CatcnModel, meta: &CheckpointMeta, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut data: Vec<f64> = Vec::with_capacity(model.n_params());
    let mut tensors = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, values: &[f64]| {
        tensors.push(Entry {
            name,
            shape,
            offset: data.len(),
        });
        data.extend_from_slice(values);
    };
    for (name, p) in model.names.iter().zip(&model.params) {
        push(name.clone(), p.shape().to_vec(), p.data());
    }
    for (i, rs) in model.running.iter().enumerate() {
        push(format!("running{i}.mean"), vec![rs.mean.len()], &rs.mean);
        push(format!("running{i}.var"), vec![rs.var.len()], &rs.var);
    }
    let manifest = Manifest {
        config: model.config.clone(),
        meta: meta.clone(),
        tensors,
        bn_momentum: model.running.first().map_or(0.1, |r| r.momentum),
        bn_updates: model.running.iter().map(|r| r.updates).collect(),
    };
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(dir.join(PARAMS), bytes)?;
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(CatcnModel, CheckpointMeta)> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)?;
    let bytes = fs::read(dir.join(PARAMS))?;
    if bytes.len() % 8 != 0 {
        return Err(AadError::Data("params.bin length is not a multiple of 8".into()));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut model = CatcnModel::new(manifest.config, 0)?;
    let mut seen = 0;
    for e in &manifest.tensors {
        let n: usize = e.shape.iter().product();
        let values = data.get(e.offset..e.offset + n).ok_or_else(|| {
            AadError::Data(format!("tensor {} runs past the end of params.bin", e.name))
        })?;
        if let Some(i) = model.param_index(&e.name) {
            if model.params[i].shape() != e.shape.as_slice() {
                return Err(AadError::Data(format!(
                    "tensor {} has shape {:?}, model expects {:?}",
                    e.name,
                    e.shape,
                    model.params[i].shape()
                )));
            }
            model.params[i].data_mut().copy_from_slice(values);
            seen += 1;
            continue;
        }
        let stats = e
            .name
            .strip_prefix("running")
            .and_then(|s| s.split_once('.'))
            .and_then(|(i, field)| Some((i.parse::<usize>().ok()?, field)));
        match stats {
            Some((i, field)) if i < model.running.len() && values.len() == model.running[i].channels() => {
                let rs = &mut model.running[i];
                match field {
                    "mean" => rs.mean.copy_from_slice(values),
                    "var" => rs.var.copy_from_slice(values),
                    _ => return Err(AadError::Data(format!("unknown tensor {}", e.name))),
                }
            }
            _ => return Err(AadError::Data(format!("unknown tensor {}", e.name))),
        }
    }
    if seen != model.params.len() {
        return Err(AadError::Data(format!(
            "checkpoint holds {seen} of {} parameters",
            model.params.len()
        )));
    }
    for (rs, &u) in model.running.iter_mut().zip(&manifest.bn_updates) {
        rs.updates = u;
        rs.momentum = manifest.bn_momentum;
    }
    Ok((model, manifest.meta))
}

impl CatcnModel {
    pub fn config_matches(&self, other: &CatcnConfig) -> bool {
        &self.config == other
    }
}
