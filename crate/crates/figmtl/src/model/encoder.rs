//! Graph-building forward pass for the transformer encoder and its heads,
//! plus the frozen-parameter [`Encoder`] trait used by probes and
//! prediction. Pre-norm residual blocks, learned absolute positions, GELU
//! feed-forward, masked attention that gives padded keys exactly zero
//! weight.

use super::params::ModelParams;
use crate::autodiff::{Tape, TensorId};
use crate::corpus::tokenizer::{TokenIdSequence, CLS_ID};
use crate::corpus::Task;
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

const LAYER_NORM_EPS: f64 = 1e-5;

/// Attention probabilities from one forward pass: `layers[l][h]` is a
/// row-major query × key matrix over the non-pad positions.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub seq_len: usize,
    pub n_heads: usize,
    pub layers: Vec<Vec<Vec<f64>>>,
}

/// Final-layer CLS representation plus the full attention record.
#[derive(Debug, Clone)]
pub struct Encoding {
    pub cls: Vec<f64>,
    pub attention: AttentionRecord,
}

/// Anything that can map a tokenized sentence to a CLS vector and attention
/// record; the seam where a pretrained contextual encoder could be plugged
/// in.
pub trait Encoder {
    fn d_model(&self) -> usize;
    fn encode(&self, tokens: &TokenIdSequence) -> Result<Encoding>;
}

/// Inverted-dropout mask source. One stream per training run; masks are
/// drawn in graph-construction order, which is deterministic.
pub struct DropoutStream {
    rng: ChaCha20Rng,
    rate: f64,
}

impl DropoutStream {
    pub fn new(seed: u64, rate: f64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(0xd409);
        DropoutStream { rng, rate }
    }

    fn apply(&mut self, tape: &mut Tape, x: TensorId) -> Result<TensorId> {
        if self.rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.rate;
        let shape = tape.shape(x).to_vec();
        let n: usize = shape.iter().product();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mask = tape.constant(mask, &shape);
        tape.mul(x, mask)
    }
}

/// Per-sentence forward outputs as tape nodes.
pub struct SentenceNodes {
    /// `[1, d_model]` final-layer hidden state at the CLS position.
    pub cls: TensorId,
    /// `layers[l][h]`: `[L, L]` attention probabilities.
    pub attention: Vec<Vec<TensorId>>,
    /// Number of non-pad positions in this sentence's graph.
    pub seq_len: usize,
}

struct NormIds {
    gamma: TensorId,
    beta: TensorId,
}

struct LayerIds {
    attn_norm: NormIds,
    wq: TensorId,
    bq: TensorId,
    wk: TensorId,
    bk: TensorId,
    wv: TensorId,
    bv: TensorId,
    wo: TensorId,
    bo: TensorId,
    ffn_norm: NormIds,
    w1: TensorId,
    b1: TensorId,
    w2: TensorId,
    b2: TensorId,
}

struct HeadIds {
    w1: TensorId,
    b1: TensorId,
    w2: TensorId,
    b2: TensorId,
}

enum HeadsIds {
    Single(HeadIds),
    Dual { hyperbole: HeadIds, metaphor: HeadIds },
}

/// A model's tensors registered on one tape, ready to build forward passes.
/// Registration order matches [`ModelParams::for_each_tensor`]; the trainer
/// relies on that alignment to map gradients back onto parameters.
pub struct ModelGraph {
    token_embedding: TensorId,
    position_embedding: TensorId,
    layers: Vec<LayerIds>,
    final_norm: NormIds,
    heads: HeadsIds,
    d_model: usize,
    n_heads: usize,
    max_len: usize,
    param_ids: Vec<TensorId>,
}

impl ModelGraph {
    /// Register every tensor as a differentiable leaf (for training).
    pub fn register_trainable(tape: &mut Tape, params: &ModelParams) -> ModelGraph {
        Self::register(tape, params, true)
    }

    /// Register every tensor as a constant (for evaluation and probing).
    pub fn register_frozen(tape: &mut Tape, params: &ModelParams) -> ModelGraph {
        Self::register(tape, params, false)
    }

    fn register(tape: &mut Tape, params: &ModelParams, trainable: bool) -> ModelGraph {
        let mut ids = Vec::with_capacity(params.num_tensors());
        params.for_each_tensor(&mut |t| {
            let id = if trainable {
                tape.param(t.data.clone(), &t.shape)
            } else {
                tape.constant(t.data.clone(), &t.shape)
            };
            ids.push(id);
        });

        let mut cursor = ids.iter().copied();
        let mut next = || cursor.next().expect("tensor walk order out of sync");
        let norm = |next: &mut dyn FnMut() -> TensorId| NormIds { gamma: next(), beta: next() };

        let token_embedding = next();
        let position_embedding = next();
        let layers = (0..params.config.n_layers)
            .map(|_| LayerIds {
                attn_norm: norm(&mut next),
                wq: next(),
                bq: next(),
                wk: next(),
                bk: next(),
                wv: next(),
                bv: next(),
                wo: next(),
                bo: next(),
                ffn_norm: norm(&mut next),
                w1: next(),
                b1: next(),
                w2: next(),
                b2: next(),
            })
            .collect();
        let final_norm = norm(&mut next);
        let heads = match params.heads {
            super::params::HeadParams::Single(_) => HeadsIds::Single(HeadIds {
                w1: next(),
                b1: next(),
                w2: next(),
                b2: next(),
            }),
            super::params::HeadParams::Dual { .. } => HeadsIds::Dual {
                hyperbole: HeadIds { w1: next(), b1: next(), w2: next(), b2: next() },
                metaphor: HeadIds { w1: next(), b1: next(), w2: next(), b2: next() },
            },
        };
        assert!(cursor.next().is_none(), "tensor walk order out of sync");

        ModelGraph {
            token_embedding,
            position_embedding,
            layers,
            final_norm,
            heads,
            d_model: params.config.d_model,
            n_heads: params.config.n_heads,
            max_len: params.config.max_len,
            param_ids: ids,
        }
    }

    /// Tape ids of all registered tensors, in walk order.
    pub fn param_ids(&self) -> &[TensorId] {
        &self.param_ids
    }

    fn layer_norm(
        &self,
        tape: &mut Tape,
        x: TensorId,
        norm: &NormIds,
    ) -> Result<TensorId> {
        tape.layer_norm(x, norm.gamma, norm.beta, LAYER_NORM_EPS)
    }

    /// Forward pass for one sentence. Trailing pad positions are dropped
    /// from the graph (they cannot influence the CLS state once masked);
    /// interior mask gaps are honored by the attention mask itself.
    pub fn encode_sentence(
        &self,
        tape: &mut Tape,
        tokens: &TokenIdSequence,
        mut dropout: Option<&mut DropoutStream>,
    ) -> Result<SentenceNodes> {
        if tokens.ids.is_empty() || tokens.ids[0] != CLS_ID {
            return Err(Error::Contract("token sequence must begin with the CLS id".into()));
        }
        if tokens.ids.len() != tokens.mask.len() {
            return Err(Error::Contract("token/mask length mismatch".into()));
        }
        let seq_len = tokens
            .mask
            .iter()
            .rposition(|&m| m)
            .map(|p| p + 1)
            .ok_or_else(|| Error::Contract("token sequence is fully masked".into()))?;
        if seq_len > self.max_len {
            return Err(Error::Contract(format!(
                "sequence length {seq_len} exceeds max_len {}",
                self.max_len
            )));
        }
        let ids = &tokens.ids[..seq_len];
        let mask = &tokens.mask[..seq_len];
        let head_dim = self.d_model / self.n_heads;

        let tok = tape.embedding(self.token_embedding, ids)?;
        let positions: Vec<usize> = (0..seq_len).collect();
        let pos = tape.embedding(self.position_embedding, &positions)?;
        let mut x = tape.add(tok, pos)?;
        if let Some(stream) = dropout.as_deref_mut() {
            x = stream.apply(tape, x)?;
        }

        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            // Attention sublayer, pre-norm.
            let h = self.layer_norm(tape, x, &layer.attn_norm)?;
            let q = tape.matmul(h, layer.wq)?;
            let q = tape.add_bias(q, layer.bq)?;
            let k = tape.matmul(h, layer.wk)?;
            let k = tape.add_bias(k, layer.bk)?;
            let v = tape.matmul(h, layer.wv)?;
            let v = tape.add_bias(v, layer.bv)?;

            let mut head_probs = Vec::with_capacity(self.n_heads);
            let mut head_ctx = Vec::with_capacity(self.n_heads);
            for head in 0..self.n_heads {
                let start = head * head_dim;
                let qh = tape.slice_cols(q, start, head_dim)?;
                let kh = tape.slice_cols(k, start, head_dim)?;
                let vh = tape.slice_cols(v, start, head_dim)?;
                let kht = tape.transpose(kh)?;
                let scores = tape.matmul(qh, kht)?;
                let scores = tape.scale(scores, 1.0 / (head_dim as f64).sqrt());
                let probs = tape.masked_softmax_rows(scores, mask)?;
                let ctx = tape.matmul(probs, vh)?;
                head_probs.push(probs);
                head_ctx.push(ctx);
            }
            attention.push(head_probs);

            let ctx = tape.concat_cols(&head_ctx)?;
            let ctx = tape.matmul(ctx, layer.wo)?;
            let mut ctx = tape.add_bias(ctx, layer.bo)?;
            if let Some(stream) = dropout.as_deref_mut() {
                ctx = stream.apply(tape, ctx)?;
            }
            x = tape.add(x, ctx)?;

            // Feed-forward sublayer, pre-norm.
            let h = self.layer_norm(tape, x, &layer.ffn_norm)?;
            let f = tape.matmul(h, layer.w1)?;
            let f = tape.add_bias(f, layer.b1)?;
            let f = tape.gelu(f);
            let f = tape.matmul(f, layer.w2)?;
            let mut f = tape.add_bias(f, layer.b2)?;
            if let Some(stream) = dropout.as_deref_mut() {
                f = stream.apply(tape, f)?;
            }
            x = tape.add(x, f)?;
        }

        let x = self.layer_norm(tape, x, &self.final_norm)?;
        let cls = tape.row(x, 0)?;
        Ok(SentenceNodes { cls, attention, seq_len })
    }

    fn head_forward(
        &self,
        tape: &mut Tape,
        cls: TensorId,
        head: &HeadIds,
    ) -> Result<TensorId> {
        let h = tape.matmul(cls, head.w1)?;
        let h = tape.add_bias(h, head.b1)?;
        let h = tape.gelu(h);
        let logits = tape.matmul(h, head.w2)?;
        tape.add_bias(logits, head.b2)
    }

    /// Logits `[B, 2]` from the single head (STL and MTL-F layouts).
    pub fn single_head_logits(&self, tape: &mut Tape, cls: TensorId) -> Result<TensorId> {
        match &self.heads {
            HeadsIds::Single(head) => self.head_forward(tape, cls, head),
            HeadsIds::Dual { .. } => Err(Error::Contract(
                "single_head_logits on a dual-head (shared-encoder multi-task) model".into(),
            )),
        }
    }

    /// Logits `[B, 2]` from the per-task head (MTL-E layout).
    pub fn dual_head_logits(
        &self,
        tape: &mut Tape,
        cls: TensorId,
        task: Task,
    ) -> Result<TensorId> {
        match &self.heads {
            HeadsIds::Dual { hyperbole, metaphor } => {
                let head = match task {
                    Task::Hyperbole => hyperbole,
                    Task::Metaphor => metaphor,
                };
                self.head_forward(tape, cls, head)
            }
            HeadsIds::Single(_) => Err(Error::Contract(
                "dual_head_logits on a single-head model".into(),
            )),
        }
    }
}

impl Encoder for ModelParams {
    fn d_model(&self) -> usize {
        self.config.d_model
    }

    /// Evaluation-mode forward: dropout off, parameters frozen, output a
    /// plain-value encoding. Bit-identical across calls.
    fn encode(&self, tokens: &TokenIdSequence) -> Result<Encoding> {
        let mut tape = Tape::new();
        let graph = ModelGraph::register_frozen(&mut tape, self);
        let nodes = graph.encode_sentence(&mut tape, tokens, None)?;
        let cls = tape.data(nodes.cls).to_vec();
        let layers = nodes
            .attention
            .iter()
            .map(|heads| heads.iter().map(|&id| tape.data(id).to_vec()).collect())
            .collect();
        Ok(Encoding {
            cls,
            attention: AttentionRecord {
                seq_len: nodes.seq_len,
                n_heads: self.config.n_heads,
                layers,
            },
        })
    }
}
