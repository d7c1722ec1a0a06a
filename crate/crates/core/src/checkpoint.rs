//! Versioned JSON container for fitted per-layer models.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::LayerModel;
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub layers: Vec<LayerModel>,
}

impl Checkpoint {
    pub fn from_models(models: &[LayerModel]) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            layers: models.to_vec(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Schema(format!("unsupported checkpoint version {}", c.version)));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?).map_err(|e| e.context(path.display().to_string()))
    }
}
