use std::path::Path;

use crate::bundle;
use crate::error::{Error, Result};
use crate::pipeline::config::ModelConfig;
use crate::pipeline::model::ModelWeights;
use crate::real::Real;

/// Config fields as `key=value` pairs, each value JSON-encoded.
fn config_meta(cfg: &ModelConfig) -> Result<Vec<(String, String)>> {
    let value = serde_json::to_value(cfg)?;
    let obj = value.as_object().expect("config is an object");
    Ok(obj.iter().map(|(k, v)| (k.clone(), v.to_string())).collect())
}

fn config_from_meta(meta: &[(String, String)]) -> Result<ModelConfig> {
    let mut obj = serde_json::Map::new();
    for (k, v) in meta {
        obj.insert(k.clone(), serde_json::from_str(v)?);
    }
    let cfg: ModelConfig = serde_json::from_value(serde_json::Value::Object(obj))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn encode_checkpoint<T: Real>(weights: &ModelWeights<T>) -> Result<Vec<u8>> {
    Ok(bundle::encode(&config_meta(&weights.config)?, &weights.store))
}

pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<ModelWeights<T>> {
    let (meta, store) = bundle::decode::<T>(bytes)?;
    let config = config_from_meta(&meta)?;
    ModelWeights::from_store(config, store)
}

pub fn save_checkpoint<T: Real>(weights: &ModelWeights<T>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, encode_checkpoint(weights)?)?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<ModelWeights<T>> {
    let bytes = std::fs::read(path)?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Format { .. } | Error::MissingTensor(_) | Error::UnexpectedTensor(_) => e,
        other => other.in_stage("checkpoint"),
    })
}
