//! The desk-scale transformer encoder and its three classification-head
//! regimes: single-task (one softmax head per task), shared-encoder
//! multi-task (two softmax heads), and fully shared multi-task (one head
//! emitting a sigmoid logit per label).

mod checkpoint;
mod encoder;
mod params;
mod predict;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use encoder::{AttentionRecord, Encoder, Encoding, ModelGraph, SentenceNodes};
pub use params::{EncoderParams, HeadParams, LayerParams, MlpHead, ModelParams, NormParams, ParamTensor};
pub use predict::{predict_mtle, predict_mtlf, predict_stl, MtlfPrediction, ProbabilityPair};
pub use train::{train, LossTrace, OptimizerConfig};

use crate::corpus::Task;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Architecture hyperparameters. The defaults are sized for CPU training in
/// minutes; a pretrained contextual encoder (typically 16 heads and 24
/// layers) can be slotted in behind the [`Encoder`] trait instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub max_len: usize,
    pub ffn_dim: usize,
    pub dropout_rate: f64,
}

impl EncoderConfig {
    /// Desk defaults: d_model 64, 4 heads, 2 layers, max_len 64, ffn 256,
    /// dropout 0.1.
    pub fn desk(vocab_size: usize) -> Self {
        EncoderConfig {
            vocab_size,
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            max_len: 64,
            ffn_dim: 256,
            dropout_rate: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.d_model == 0 || self.n_heads == 0 || self.max_len == 0 {
            return Err(Error::Config(
                "vocab_size, d_model, n_heads and max_len must be positive".into(),
            ));
        }
        if self.ffn_dim == 0 {
            return Err(Error::Config("ffn_dim must be positive".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Which learning setup the model implements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    StlHyperbole,
    StlMetaphor,
    MtlE,
    MtlF,
}

impl Regime {
    pub fn parse(name: &str) -> Option<Regime> {
        match name.to_lowercase().as_str() {
            "stl-hyperbole" | "stl-h" => Some(Regime::StlHyperbole),
            "stl-metaphor" | "stl-m" => Some(Regime::StlMetaphor),
            "mtl-e" | "mtle" => Some(Regime::MtlE),
            "mtl-f" | "mtlf" => Some(Regime::MtlF),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Regime::StlHyperbole => "stl-hyperbole",
            Regime::StlMetaphor => "stl-metaphor",
            Regime::MtlE => "mtl-e",
            Regime::MtlF => "mtl-f",
        }
    }

    /// The label columns this regime trains on.
    pub fn tasks(self) -> &'static [Task] {
        match self {
            Regime::StlHyperbole => &[Task::Hyperbole],
            Regime::StlMetaphor => &[Task::Metaphor],
            Regime::MtlE | Regime::MtlF => &[Task::Hyperbole, Task::Metaphor],
        }
    }

    pub fn is_multi_task(self) -> bool {
        matches!(self, Regime::MtlE | Regime::MtlF)
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
