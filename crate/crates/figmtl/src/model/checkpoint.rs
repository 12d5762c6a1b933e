//! Versioned JSON checkpoints. Floats survive the round trip bit-exactly
//! (shortest-round-trip serialization), so save → load → save is
//! byte-identical.

use super::ModelParams;
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to reload and run a trained model: architecture,
/// regime, the vocabulary (with its content hash), and all parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub vocab_hash: String,
    pub vocabulary: Vocabulary,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(params: ModelParams, vocabulary: Vocabulary) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            vocab_hash: vocabulary.content_hash(),
            vocabulary,
            params,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(json: &str) -> Result<Checkpoint> {
        let checkpoint: Checkpoint = serde_json::from_str(json)?;
        if checkpoint.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
                checkpoint.version
            )));
        }
        if checkpoint.vocabulary.content_hash() != checkpoint.vocab_hash {
            return Err(Error::Data("checkpoint vocabulary hash mismatch".into()));
        }
        checkpoint.params.validate_shapes()?;
        Ok(checkpoint)
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    std::fs::write(path, checkpoint.to_json()?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let json = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read checkpoint {}: {e}", path.display())))?;
    Checkpoint::from_json(&json)
}
