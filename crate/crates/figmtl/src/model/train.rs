//! Minibatch Adam training over the tape-built loss graphs. Everything that
//! varies run-to-run — init, batch order, dropout masks — is driven by the
//! caller's seed, so a seed fully determines the trained weights.

use super::encoder::{DropoutStream, ModelGraph};
use super::{ModelParams, Regime};
use crate::autodiff::Tape;
use crate::corpus::tokenizer::{tokenize, TokenIdSequence, Vocabulary};
use crate::corpus::LabeledSentence;
use crate::error::{Error, Result};
use crate::objectives::{ce_loss_graph, mtle_loss_graph, mtlf_loss_graph};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

/// Training hyperparameters. Adam runs with β₁ 0.9, β₂ 0.999 and ε 1e-4.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight on the hyperbole-task loss under the shared-encoder regime.
    pub lambda: f64,
    /// Decision threshold for the fully shared regime.
    pub threshold: f64,
    /// Divide the multi-label loss by the label count as well as the batch
    /// size. Off by default.
    pub mean_over_labels: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 1e-3,
            epochs: 10,
            batch_size: 16,
            lambda: 0.5,
            threshold: 0.5,
            mean_over_labels: false,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-4,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self, regime: Regime) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config(format!(
                "learning_rate {} must be finite and nonnegative",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config("Adam eps must be positive".into()));
        }
        let _ = regime;
        Ok(())
    }
}

/// Mean training loss per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub per_epoch: Vec<f64>,
}

struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    fn new(params: &ModelParams) -> Self {
        let mut m = Vec::with_capacity(params.num_tensors());
        params.for_each_tensor(&mut |t| m.push(vec![0.0; t.data.len()]));
        let v = m.clone();
        AdamState { m, v, t: 0 }
    }

    fn step(
        &mut self,
        params: &mut ModelParams,
        grads: &[Option<Vec<f64>>],
        opt: &OptimizerConfig,
    ) {
        self.t += 1;
        let bias1 = 1.0 - opt.beta1.powi(self.t as i32);
        let bias2 = 1.0 - opt.beta2.powi(self.t as i32);
        let mut slot = 0;
        params.for_each_tensor_mut(&mut |tensor| {
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            if let Some(grad) = &grads[slot] {
                assert_eq!(
                    grad.len(),
                    tensor.data.len(),
                    "gradient/parameter walk order out of sync"
                );
                for i in 0..tensor.data.len() {
                    let g = grad[i];
                    m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g;
                    v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g * g;
                    let m_hat = m[i] / bias1;
                    let v_hat = v[i] / bias2;
                    tensor.data[i] -= opt.learning_rate * m_hat / (v_hat.sqrt() + opt.adam_eps);
                }
            } else {
                // Untouched tensor this step: the moments still decay.
                for i in 0..m.len() {
                    m[i] *= opt.beta1;
                    v[i] *= opt.beta2;
                    let m_hat = m[i] / bias1;
                    let v_hat = v[i] / bias2;
                    tensor.data[i] -= opt.learning_rate * m_hat / (v_hat.sqrt() + opt.adam_eps);
                }
            }
            slot += 1;
        });
    }
}

struct Prepared {
    tokens: TokenIdSequence,
    hyperbole: Option<u8>,
    metaphor: Option<u8>,
}

fn prepare(
    dataset: &[LabeledSentence],
    vocab: &Vocabulary,
    regime: Regime,
    max_len: usize,
) -> Result<Vec<Prepared>> {
    if dataset.is_empty() {
        return Err(Error::Data("training dataset is empty".into()));
    }
    for task in regime.tasks() {
        if let Some(bad) = dataset.iter().find(|s| task.label_of(s).is_none()) {
            return Err(Error::Data(format!(
                "row {} is missing the {} label required by the {} regime",
                bad.id, task, regime
            )));
        }
    }
    Ok(dataset
        .iter()
        .map(|s| Prepared {
            tokens: tokenize(vocab, &s.text, max_len),
            hyperbole: s.hyperbole,
            metaphor: s.metaphor,
        })
        .collect())
}

/// Train with minibatch Adam and return the final parameter snapshot plus
/// the per-epoch mean loss trace.
pub fn train(
    params: ModelParams,
    dataset: &[LabeledSentence],
    vocab: &Vocabulary,
    opt: &OptimizerConfig,
) -> Result<(ModelParams, LossTrace)> {
    let mut params = params;
    params.validate_shapes()?;
    opt.validate(params.regime)?;
    let examples = prepare(dataset, vocab, params.regime, params.config.max_len)?;

    let mut order_rng = ChaCha20Rng::seed_from_u64(opt.seed);
    order_rng.set_stream(0x0d0e);
    let mut dropout = DropoutStream::new(opt.seed, params.config.dropout_rate);
    let mut adam = AdamState::new(&params);

    let n = examples.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut per_epoch = Vec::with_capacity(opt.epochs);

    for epoch in 0..opt.epochs {
        order.shuffle(&mut order_rng);
        let mut epoch_loss = 0.0;

        for (batch_idx, batch) in order.chunks(opt.batch_size).enumerate() {
            let mut tape = Tape::new();
            let graph = ModelGraph::register_trainable(&mut tape, &params);

            let mut cls_rows = Vec::with_capacity(batch.len());
            for &i in batch {
                let nodes = graph.encode_sentence(&mut tape, &examples[i].tokens, Some(&mut dropout))?;
                cls_rows.push(nodes.cls);
            }
            let cls = tape.concat_rows(&cls_rows)?;

            let label = |task: fn(&Prepared) -> Option<u8>| -> Vec<u8> {
                batch.iter().map(|&i| task(&examples[i]).expect("labels checked")).collect()
            };

            let loss = match params.regime {
                Regime::StlHyperbole => {
                    let logits = graph.single_head_logits(&mut tape, cls)?;
                    ce_loss_graph(&mut tape, logits, &label(|p| p.hyperbole))?
                }
                Regime::StlMetaphor => {
                    let logits = graph.single_head_logits(&mut tape, cls)?;
                    ce_loss_graph(&mut tape, logits, &label(|p| p.metaphor))?
                }
                Regime::MtlE => {
                    let logits_h = graph.dual_head_logits(&mut tape, cls, crate::corpus::Task::Hyperbole)?;
                    let l1 = ce_loss_graph(&mut tape, logits_h, &label(|p| p.hyperbole))?;
                    let logits_m = graph.dual_head_logits(&mut tape, cls, crate::corpus::Task::Metaphor)?;
                    let l2 = ce_loss_graph(&mut tape, logits_m, &label(|p| p.metaphor))?;
                    mtle_loss_graph(&mut tape, l1, l2, opt.lambda)?
                }
                Regime::MtlF => {
                    let logits = graph.single_head_logits(&mut tape, cls)?;
                    let pairs: Vec<u8> = batch
                        .iter()
                        .flat_map(|&i| {
                            [
                                examples[i].hyperbole.expect("labels checked"),
                                examples[i].metaphor.expect("labels checked"),
                            ]
                        })
                        .collect();
                    mtlf_loss_graph(&mut tape, logits, &pairs, opt.mean_over_labels)?
                }
            };

            let loss_value = tape.scalar(loss);
            if !loss_value.is_finite() {
                return Err(Error::Divergence { epoch, batch: batch_idx });
            }
            epoch_loss += loss_value * batch.len() as f64;

            tape.backward(loss)?;
            let grads: Vec<Option<Vec<f64>>> = graph
                .param_ids()
                .iter()
                .map(|&id| tape.grad(id).map(<[f64]>::to_vec))
                .collect();
            adam.step(&mut params, &grads, opt);
        }

        per_epoch.push(epoch_loss / n as f64);
        if !params.all_finite() {
            return Err(Error::Numeric(format!(
                "non-finite parameter after epoch {epoch}"
            )));
        }
    }

    Ok((params, LossTrace { per_epoch }))
}
