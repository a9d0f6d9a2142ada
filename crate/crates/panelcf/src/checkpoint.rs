//! Trained-model checkpoints as versioned JSON.
//!
//! Matrices are stored as `{rows, cols, data}` with `data` in row-major order. Floats
//! are written in shortest round-trip form and parsed exactly, so a write/read cycle
//! reproduces every parameter bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use panelcf_core::neural::{EncoderDecoderConfig, EncoderDecoderNet, RvaeConfig, RvaeNet, Standardizer};

use crate::error::{AppError, AppResult};

pub const FORMAT: &str = "panelcf-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    EncoderDecoder { config: EncoderDecoderConfig, standardizer: Standardizer, net: EncoderDecoderNet },
    Rvae { config: RvaeConfig, standardizer: Standardizer, net: RvaeNet },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub provenance: String,
    pub model: Model,
}

impl Checkpoint {
    pub fn new(model: Model, provenance: String) -> Self {
        Self { format: FORMAT.into(), version: VERSION, provenance, model }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> AppResult<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| AppError::validation(format!("checkpoint: {e}")))?;
        if c.format != FORMAT || c.version != VERSION {
            return Err(AppError::validation(format!("checkpoint: unsupported format {} v{}", c.format, c.version)));
        }
        Ok(c)
    }

    pub fn write(&self, path: &Path) -> AppResult<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn read(path: &Path) -> AppResult<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
