//! Learnable parameter containers and seeded initialization.
//!
//! Tensor walk order is the one contract that matters here: initialization,
//! graph registration, and optimizer updates all enumerate tensors through
//! [`ModelParams::for_each_tensor`], so the encoder prefix of the stream is
//! identical across regimes that share an architecture and seed.

use super::{EncoderConfig, Regime};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

/// A dense tensor stored outside any tape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTensor {
    pub data: Vec<f64>,
    pub shape: Vec<usize>,
}

impl ParamTensor {
    pub fn zeros(shape: &[usize]) -> Self {
        ParamTensor {
            data: vec![0.0; shape.iter().product()],
            shape: shape.to_vec(),
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        ParamTensor {
            data: vec![value; shape.iter().product()],
            shape: shape.to_vec(),
        }
    }

    fn uniform(rng: &mut ChaCha20Rng, shape: &[usize], bound: f64) -> Self {
        let n: usize = shape.iter().product();
        ParamTensor {
            data: (0..n).map(|_| rng.gen_range(-bound..bound)).collect(),
            shape: shape.to_vec(),
        }
    }

    /// Xavier-uniform for a `[fan_in, fan_out]` weight matrix.
    fn xavier(rng: &mut ChaCha20Rng, fan_in: usize, fan_out: usize) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Self::uniform(rng, &[fan_in, fan_out], bound)
    }
}

/// Layer-norm scale and shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub gamma: ParamTensor,
    pub beta: ParamTensor,
}

impl NormParams {
    fn identity(d: usize) -> Self {
        NormParams {
            gamma: ParamTensor::filled(&[d], 1.0),
            beta: ParamTensor::zeros(&[d]),
        }
    }
}

/// One pre-norm transformer block: attention projections and feed-forward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub attn_norm: NormParams,
    pub wq: ParamTensor,
    pub bq: ParamTensor,
    pub wk: ParamTensor,
    pub bk: ParamTensor,
    pub wv: ParamTensor,
    pub bv: ParamTensor,
    pub wo: ParamTensor,
    pub bo: ParamTensor,
    pub ffn_norm: NormParams,
    pub w1: ParamTensor,
    pub b1: ParamTensor,
    pub w2: ParamTensor,
    pub b2: ParamTensor,
}

impl LayerParams {
    fn init(rng: &mut ChaCha20Rng, d: usize, ffn: usize) -> Self {
        LayerParams {
            attn_norm: NormParams::identity(d),
            wq: ParamTensor::xavier(rng, d, d),
            bq: ParamTensor::zeros(&[d]),
            wk: ParamTensor::xavier(rng, d, d),
            bk: ParamTensor::zeros(&[d]),
            wv: ParamTensor::xavier(rng, d, d),
            bv: ParamTensor::zeros(&[d]),
            wo: ParamTensor::xavier(rng, d, d),
            bo: ParamTensor::zeros(&[d]),
            ffn_norm: NormParams::identity(d),
            w1: ParamTensor::xavier(rng, d, ffn),
            b1: ParamTensor::zeros(&[ffn]),
            w2: ParamTensor::xavier(rng, ffn, d),
            b2: ParamTensor::zeros(&[d]),
        }
    }
}

/// Token and position embeddings plus the transformer stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub token_embedding: ParamTensor,
    pub position_embedding: ParamTensor,
    pub layers: Vec<LayerParams>,
    pub final_norm: NormParams,
}

/// One classification head: d_model → d_model (GELU) → outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpHead {
    pub w1: ParamTensor,
    pub b1: ParamTensor,
    pub w2: ParamTensor,
    pub b2: ParamTensor,
}

impl MlpHead {
    fn init(rng: &mut ChaCha20Rng, d: usize, out: usize) -> Self {
        MlpHead {
            w1: ParamTensor::xavier(rng, d, d),
            b1: ParamTensor::zeros(&[d]),
            w2: ParamTensor::xavier(rng, d, out),
            b2: ParamTensor::zeros(&[out]),
        }
    }
}

/// Head parameters for the active regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HeadParams {
    /// One head: 2-way softmax under STL, two sigmoid logits under MTL-F.
    Single(MlpHead),
    /// Shared-encoder multi-task: one softmax head per task.
    Dual { hyperbole: MlpHead, metaphor: MlpHead },
}

/// All learnable weights together with the architecture and regime they
/// belong to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: EncoderConfig,
    pub regime: Regime,
    pub encoder: EncoderParams,
    pub heads: HeadParams,
}

impl ModelParams {
    /// Seeded initialization. The encoder consumes the random stream first,
    /// then the heads in task order, so two regimes sharing a seed share
    /// their encoder (and first-head) initialization exactly.
    pub fn init(config: EncoderConfig, regime: Regime, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let d = config.d_model;

        let encoder = EncoderParams {
            token_embedding: ParamTensor::uniform(&mut rng, &[config.vocab_size, d], 0.1),
            position_embedding: ParamTensor::uniform(&mut rng, &[config.max_len, d], 0.1),
            layers: (0..config.n_layers)
                .map(|_| LayerParams::init(&mut rng, d, config.ffn_dim))
                .collect(),
            final_norm: NormParams::identity(d),
        };
        let heads = match regime {
            Regime::StlHyperbole | Regime::StlMetaphor | Regime::MtlF => {
                HeadParams::Single(MlpHead::init(&mut rng, d, 2))
            }
            Regime::MtlE => HeadParams::Dual {
                hyperbole: MlpHead::init(&mut rng, d, 2),
                metaphor: MlpHead::init(&mut rng, d, 2),
            },
        };
        Ok(ModelParams { config, regime, encoder, heads })
    }

    /// Visit every tensor in the canonical walk order.
    pub fn for_each_tensor<'a>(&'a self, f: &mut impl FnMut(&'a ParamTensor)) {
        let e = &self.encoder;
        f(&e.token_embedding);
        f(&e.position_embedding);
        for layer in &e.layers {
            f(&layer.attn_norm.gamma);
            f(&layer.attn_norm.beta);
            f(&layer.wq);
            f(&layer.bq);
            f(&layer.wk);
            f(&layer.bk);
            f(&layer.wv);
            f(&layer.bv);
            f(&layer.wo);
            f(&layer.bo);
            f(&layer.ffn_norm.gamma);
            f(&layer.ffn_norm.beta);
            f(&layer.w1);
            f(&layer.b1);
            f(&layer.w2);
            f(&layer.b2);
        }
        f(&e.final_norm.gamma);
        f(&e.final_norm.beta);
        match &self.heads {
            HeadParams::Single(head) => {
                f(&head.w1);
                f(&head.b1);
                f(&head.w2);
                f(&head.b2);
            }
            HeadParams::Dual { hyperbole, metaphor } => {
                for head in [hyperbole, metaphor] {
                    f(&head.w1);
                    f(&head.b1);
                    f(&head.w2);
                    f(&head.b2);
                }
            }
        }
    }

    /// Mutable variant of [`Self::for_each_tensor`], same order.
    pub fn for_each_tensor_mut(&mut self, f: &mut impl FnMut(&mut ParamTensor)) {
        let e = &mut self.encoder;
        f(&mut e.token_embedding);
        f(&mut e.position_embedding);
        for layer in &mut e.layers {
            f(&mut layer.attn_norm.gamma);
            f(&mut layer.attn_norm.beta);
            f(&mut layer.wq);
            f(&mut layer.bq);
            f(&mut layer.wk);
            f(&mut layer.bk);
            f(&mut layer.wv);
            f(&mut layer.bv);
            f(&mut layer.wo);
            f(&mut layer.bo);
            f(&mut layer.ffn_norm.gamma);
            f(&mut layer.ffn_norm.beta);
            f(&mut layer.w1);
            f(&mut layer.b1);
            f(&mut layer.w2);
            f(&mut layer.b2);
        }
        f(&mut e.final_norm.gamma);
        f(&mut e.final_norm.beta);
        match &mut self.heads {
            HeadParams::Single(head) => {
                f(&mut head.w1);
                f(&mut head.b1);
                f(&mut head.w2);
                f(&mut head.b2);
            }
            HeadParams::Dual { hyperbole, metaphor } => {
                for head in [hyperbole, metaphor] {
                    f(&mut head.w1);
                    f(&mut head.b1);
                    f(&mut head.w2);
                    f(&mut head.b2);
                }
            }
        }
    }

    pub fn num_tensors(&self) -> usize {
        let mut n = 0;
        self.for_each_tensor(&mut |_| n += 1);
        n
    }

    pub fn num_scalars(&self) -> usize {
        let mut n = 0;
        self.for_each_tensor(&mut |t| n += t.data.len());
        n
    }

    pub fn all_finite(&self) -> bool {
        let mut finite = true;
        self.for_each_tensor(&mut |t| {
            finite &= t.data.iter().all(|x| x.is_finite());
        });
        finite
    }

    /// The head serving `task`, honoring the regime's head layout.
    pub fn head_for(&self, task: crate::corpus::Task) -> Result<&MlpHead> {
        match (&self.heads, task) {
            (HeadParams::Single(head), _) => Ok(head),
            (HeadParams::Dual { hyperbole, .. }, crate::corpus::Task::Hyperbole) => Ok(hyperbole),
            (HeadParams::Dual { metaphor, .. }, crate::corpus::Task::Metaphor) => Ok(metaphor),
        }
    }

    pub fn validate_shapes(&self) -> Result<()> {
        self.config.validate()?;
        let d = self.config.d_model;
        if self.encoder.token_embedding.shape != [self.config.vocab_size, d] {
            return Err(Error::Config("token embedding shape disagrees with config".into()));
        }
        if self.encoder.position_embedding.shape != [self.config.max_len, d] {
            return Err(Error::Config("position embedding shape disagrees with config".into()));
        }
        if self.encoder.layers.len() != self.config.n_layers {
            return Err(Error::Config("layer count disagrees with config".into()));
        }
        let dual = matches!(self.heads, HeadParams::Dual { .. });
        if dual != matches!(self.regime, Regime::MtlE) {
            return Err(Error::Config("head layout disagrees with regime".into()));
        }
        Ok(())
    }
}
