//! Frozen-parameter prediction for the three regimes.

use super::encoder::ModelGraph;
use super::{ModelParams, Regime};
use crate::autodiff::Tape;
use crate::corpus::tokenizer::TokenIdSequence;
use crate::corpus::Task;
use crate::error::{Error, Result};

/// A 2-way distribution (P(y=0), P(y=1)).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbabilityPair {
    pub negative: f64,
    pub positive: f64,
}

impl ProbabilityPair {
    /// Argmax decode; the tie goes to the non-figurative label 0.
    pub fn decode(&self) -> u8 {
        u8::from(self.positive > self.negative)
    }
}

/// MTL-F output: one sigmoid probability per label plus thresholded bits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MtlfPrediction {
    pub p_hyperbole: f64,
    pub p_metaphor: f64,
    pub labels: (u8, u8),
}

fn eval_graph(params: &ModelParams, tokens: &TokenIdSequence) -> Result<(Tape, ModelGraph, crate::autodiff::TensorId)> {
    let mut tape = Tape::new();
    let graph = ModelGraph::register_frozen(&mut tape, params);
    let nodes = graph.encode_sentence(&mut tape, tokens, None)?;
    Ok((tape, graph, nodes.cls))
}

fn softmax_pair(tape: &mut Tape, logits: crate::autodiff::TensorId) -> Result<ProbabilityPair> {
    let probs = tape.softmax(logits, 1)?;
    let data = tape.data(probs);
    Ok(ProbabilityPair { negative: data[0], positive: data[1] })
}

/// Single-task probabilities for the regime's own task.
pub fn predict_stl(params: &ModelParams, tokens: &TokenIdSequence) -> Result<ProbabilityPair> {
    if !matches!(params.regime, Regime::StlHyperbole | Regime::StlMetaphor) {
        return Err(Error::Contract(format!(
            "predict_stl on a {} model",
            params.regime
        )));
    }
    let (mut tape, graph, cls) = eval_graph(params, tokens)?;
    let logits = graph.single_head_logits(&mut tape, cls)?;
    softmax_pair(&mut tape, logits)
}

/// Shared-encoder multi-task probabilities: (hyperbole, metaphor).
pub fn predict_mtle(
    params: &ModelParams,
    tokens: &TokenIdSequence,
) -> Result<(ProbabilityPair, ProbabilityPair)> {
    if params.regime != Regime::MtlE {
        return Err(Error::Contract(format!(
            "predict_mtle on a {} model",
            params.regime
        )));
    }
    let (mut tape, graph, cls) = eval_graph(params, tokens)?;
    let logits_h = graph.dual_head_logits(&mut tape, cls, Task::Hyperbole)?;
    let logits_m = graph.dual_head_logits(&mut tape, cls, Task::Metaphor)?;
    Ok((softmax_pair(&mut tape, logits_h)?, softmax_pair(&mut tape, logits_m)?))
}

/// Fully shared multi-task prediction: sigmoid per logit, label 1 where the
/// probability reaches `threshold` (≥ convention).
pub fn predict_mtlf(
    params: &ModelParams,
    tokens: &TokenIdSequence,
    threshold: f64,
) -> Result<MtlfPrediction> {
    if params.regime != Regime::MtlF {
        return Err(Error::Contract(format!(
            "predict_mtlf on a {} model",
            params.regime
        )));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("threshold {threshold} outside (0, 1)")));
    }
    let (mut tape, graph, cls) = eval_graph(params, tokens)?;
    let logits = graph.single_head_logits(&mut tape, cls)?;
    let probs = tape.sigmoid(logits);
    let data = tape.data(probs);
    let (p_hyperbole, p_metaphor) = (data[0], data[1]);
    Ok(MtlfPrediction {
        p_hyperbole,
        p_metaphor,
        labels: (u8::from(p_hyperbole >= threshold), u8::from(p_metaphor >= threshold)),
    })
}
