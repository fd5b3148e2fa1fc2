//! Version-tagged JSON checkpoints. Floats are written in shortest
//! round-trip form and parsed exactly, so save/load is lossless.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Model;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_KIND: &str = "adapter-inversion/model";

#[derive(Serialize)]
struct CheckpointRef<'a> {
    kind: &'a str,
    version: u32,
    model: &'a Model,
}

#[derive(Deserialize)]
struct CheckpointOwned {
    kind: String,
    version: u32,
    model: Model,
}

impl Model {
    pub fn to_checkpoint_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&CheckpointRef {
            kind: CHECKPOINT_KIND,
            version: CHECKPOINT_VERSION,
            model: self,
        })?)
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Model> {
        let ck: CheckpointOwned = serde_json::from_str(text)?;
        if ck.kind != CHECKPOINT_KIND {
            return Err(Error::InvalidConfig(format!(
                "not a model checkpoint: kind {:?}",
                ck.kind
            )));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        ck.model.config.validate()?;
        Ok(ck.model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_checkpoint_json()?).map_err(|e| Error::write(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Model::from_checkpoint_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn exact_round_trip() {
        let mut m = Model::new(ModelConfig {
            vocab_size: 30,
            d_hidden: 16,
            seed: 11,
            ..Default::default()
        })
        .unwrap();
        m.head_mut().bias = 0.1 + 0.2;
        let back = Model::from_checkpoint_json(&m.to_checkpoint_json().unwrap()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn rejects_wrong_version() {
        let m = Model::new(ModelConfig::default()).unwrap();
        let text = m
            .to_checkpoint_json()
            .unwrap()
            .replacen("\"version\":1", "\"version\":9", 1);
        assert!(Model::from_checkpoint_json(&text).is_err());
    }
}
