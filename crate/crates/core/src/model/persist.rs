//! Model artifact: a directory holding `model.json` (descriptor) and
//! `params.bin` (little-endian f64 parameters in layout order).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::{EpochStats, TrainedModel};
use super::{Architecture, BackboneSpec, Classifier, ClassifierConfig, TINY};
use crate::data::{create_dir, write_json};
use crate::error::{Error, Result};

pub const DESCRIPTOR_FILE: &str = "model.json";
pub const PARAMS_FILE: &str = "params.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Descriptor {
    backbone: BackboneSpec,
    input_size: u32,
    param_count: usize,
    config: ClassifierConfig,
    history: Vec<EpochStats>,
}

pub fn save_model(model: &TrainedModel, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let c = &model.classifier;
    let descriptor = Descriptor {
        backbone: c.backbone.clone(),
        input_size: c.arch.input_size,
        param_count: c.params.len(),
        config: model.config.clone(),
        history: model.history.clone(),
    };
    write_json(&dir.join(DESCRIPTOR_FILE), &descriptor)?;
    let bytes: Vec<u8> = c.params.iter().flat_map(|p| p.to_le_bytes()).collect();
    let path = dir.join(PARAMS_FILE);
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
}

pub fn load_model(dir: &Path) -> Result<TrainedModel> {
    let desc_path = dir.join(DESCRIPTOR_FILE);
    let params_path = dir.join(PARAMS_FILE);
    for p in [&desc_path, &params_path] {
        if !p.is_file() {
            return Err(Error::MissingArtifact(p.clone()));
        }
    }
    let text = fs::read_to_string(&desc_path).map_err(|e| Error::io(&desc_path, e))?;
    let desc: Descriptor = serde_json::from_str(&text).map_err(|e| Error::CorruptArtifact {
        path: desc_path.clone(),
        reason: e.to_string(),
    })?;
    let spec = BackboneSpec::resolve(&desc.backbone.name)?;
    if spec.name != TINY {
        return Err(Error::BackboneUnavailable(spec.name));
    }
    let arch = Architecture::tiny(desc.input_size);
    let corrupt = |reason: String| Error::CorruptArtifact {
        path: params_path.clone(),
        reason,
    };
    if desc.param_count != arch.param_len() {
        return Err(corrupt(format!(
            "descriptor declares {} parameters, layout needs {}",
            desc.param_count,
            arch.param_len()
        )));
    }
    let bytes = fs::read(&params_path).map_err(|e| Error::io(&params_path, e))?;
    if bytes.len() != desc.param_count * 8 {
        return Err(corrupt(format!(
            "expected {} bytes, found {}",
            desc.param_count * 8,
            bytes.len()
        )));
    }
    let params: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
        .collect();
    if params.iter().any(|p| !p.is_finite()) {
        return Err(corrupt("non-finite parameter".into()));
    }
    Ok(TrainedModel {
        classifier: Classifier {
            backbone: desc.backbone,
            arch,
            params,
            dropout_rate: desc.config.dropout_rate,
        },
        config: desc.config,
        history: desc.history,
    })
}
