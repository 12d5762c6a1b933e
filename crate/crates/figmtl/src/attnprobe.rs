//! CLS-attention salience: extract the final layer's attention rows for the
//! CLS query, average over heads, and renormalize into a per-token salience
//! map; plus side-by-side comparison of two maps with total-variation
//! distance and heat-strip rendering.

use crate::corpus::tokenizer::TokenIdSequence;
use crate::error::{Error, Result};
use crate::model::Encoder;
use serde::Serialize;
use std::fmt::Write as _;

/// Per-token salience for one sentence: a probability vector over the
/// non-pad tokens (CLS included).
#[derive(Debug, Clone, Serialize)]
pub struct SalienceMap {
    pub tokens: Vec<String>,
    pub weights: Vec<f64>,
    pub regime: String,
    pub id: String,
}

impl SalienceMap {
    pub fn new(tokens: Vec<String>, weights: Vec<f64>, regime: String, id: String) -> Result<Self> {
        if tokens.len() != weights.len() || tokens.is_empty() {
            return Err(Error::Contract(format!(
                "salience map with {} tokens and {} weights",
                tokens.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(Error::Numeric("salience weights must be finite and nonnegative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Numeric(format!("salience weights sum to {sum}, not 1")));
        }
        Ok(SalienceMap { tokens, weights, regime, id })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// How the per-head CLS rows are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SalienceNormalization {
    /// Mean over heads, pad keys zeroed, renormalized to sum 1 (default).
    #[default]
    MaskedRenormalize,
    /// Plain mean over heads truncated to the non-pad tokens, no
    /// renormalization. With this crate's encoder the two coincide, since
    /// padded keys already receive exactly zero attention.
    RawRowAverage,
}

/// Salience of every non-pad token for the CLS query, from the final
/// layer's attention, averaged over heads.
pub fn cls_salience<E: Encoder + ?Sized>(
    encoder: &E,
    tokens: &TokenIdSequence,
    regime: &str,
    sentence_id: &str,
) -> Result<SalienceMap> {
    cls_salience_with(encoder, tokens, regime, sentence_id, SalienceNormalization::default())
}

/// [`cls_salience`] with an explicit head-combination rule.
pub fn cls_salience_with<E: Encoder + ?Sized>(
    encoder: &E,
    tokens: &TokenIdSequence,
    regime: &str,
    sentence_id: &str,
    normalization: SalienceNormalization,
) -> Result<SalienceMap> {
    let encoding = encoder.encode(tokens)?;
    let record = &encoding.attention;
    let final_layer = record
        .layers
        .last()
        .ok_or_else(|| Error::Contract("no attention layers to probe (0-layer encoder)".into()))?;

    let real_len = tokens.real_len();
    let keys = record.seq_len;
    if keys < real_len {
        return Err(Error::Contract(format!(
            "attention record covers {keys} keys for {real_len} tokens"
        )));
    }

    // Mean over heads of the CLS (query 0) row.
    let mut weights = vec![0.0; keys];
    for head in final_layer {
        if head.len() != keys * keys {
            return Err(Error::Contract("attention matrix shape mismatch".into()));
        }
        if head.iter().any(|w| !w.is_finite()) {
            return Err(Error::Numeric("attention weights are not finite".into()));
        }
        for (j, w) in weights.iter_mut().enumerate() {
            *w += head[j];
        }
    }
    let n_heads = final_layer.len() as f64;
    weights.iter_mut().for_each(|w| *w /= n_heads);

    // Keep the non-pad keys; under the masked rule, renormalize what mass
    // remains.
    weights.truncate(real_len);
    if normalization == SalienceNormalization::MaskedRenormalize {
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(Error::Numeric("all salience mass fell on padded keys".into()));
        }
        weights.iter_mut().for_each(|w| *w /= sum);
    }

    SalienceMap::new(
        tokens.surfaces.clone(),
        weights,
        regime.to_string(),
        sentence_id.to_string(),
    )
}

/// Two salience maps for the same sentence, with per-token deltas and their
/// total-variation distance `½·Σ|aᵢ − bᵢ|`.
#[derive(Debug, Clone, Serialize)]
pub struct SalienceComparison {
    pub map_a: SalienceMap,
    pub map_b: SalienceMap,
    /// Per-token `b − a`.
    pub deltas: Vec<f64>,
    pub tv_distance: f64,
}

pub fn compare_salience(map_a: &SalienceMap, map_b: &SalienceMap) -> Result<SalienceComparison> {
    if map_a.tokens != map_b.tokens {
        return Err(Error::Contract(
            "salience maps cover different tokens; compare the same sentence and tokenization"
                .into(),
        ));
    }
    let deltas: Vec<f64> = map_b.weights.iter().zip(&map_a.weights).map(|(b, a)| b - a).collect();
    let tv_distance = deltas.iter().map(|d| d.abs()).sum::<f64>() / 2.0;
    Ok(SalienceComparison {
        map_a: map_a.clone(),
        map_b: map_b.clone(),
        deltas,
        tv_distance,
    })
}

/// Intensity buckets over `[0, max_weight]`; 8 levels, darker = higher.
const SHADE: [char; 8] = ['▁', '▂', '▃', '▄', '▅', '▆', '▇', '█'];

fn bucket(weight: f64, max_weight: f64) -> usize {
    if max_weight <= 0.0 {
        return 0;
    }
    (((weight / max_weight) * 8.0) as usize).min(7)
}

fn strip_rows(map: &SalienceMap) -> (String, String) {
    let max = map.weights.iter().cloned().fold(0.0f64, f64::max);
    let mut tokens_row = String::new();
    let mut shade_row = String::new();
    for (token, &weight) in map.tokens.iter().zip(&map.weights) {
        let width = token.chars().count();
        let shade = SHADE[bucket(weight, max)];
        let _ = write!(tokens_row, "{token} ");
        let _ = write!(shade_row, "{} ", shade.to_string().repeat(width));
    }
    (tokens_row.trim_end().to_string(), shade_row.trim_end().to_string())
}

impl SalienceMap {
    /// Two-line heat strip: tokens above, shade blocks below.
    pub fn render_text(&self) -> String {
        let (tokens, shades) = strip_rows(self);
        format!("[{}] {}\n{:width$} {}\n", self.regime, tokens, "", shades, width = self.regime.chars().count() + 2)
    }

    /// Standalone HTML fragment; background opacity tracks the bucket.
    pub fn render_html(&self) -> String {
        let max = self.weights.iter().cloned().fold(0.0f64, f64::max);
        let mut out = format!(
            "<div class=\"salience\" data-regime=\"{}\" data-id=\"{}\">",
            self.regime, self.id
        );
        for (token, &weight) in self.tokens.iter().zip(&self.weights) {
            let level = bucket(weight, max);
            let opacity = (level as f64 + 1.0) / 8.0;
            let _ = write!(
                out,
                "<span style=\"background-color: rgba(178, 24, 43, {opacity:.3})\" title=\"{weight:.4}\">{token}</span> ",
            );
        }
        out.push_str("</div>");
        out
    }
}

impl SalienceComparison {
    /// Paired two-row heat strips plus the distance line.
    pub fn render_text(&self) -> String {
        format!(
            "{}{}total-variation distance: {:.4}\n",
            self.map_a.render_text(),
            self.map_b.render_text(),
            self.tv_distance
        )
    }

    pub fn render_html(&self) -> String {
        format!(
            "<div class=\"salience-comparison\">{}{}<p>total-variation distance: {:.4}</p></div>",
            self.map_a.render_html(),
            self.map_b.render_html(),
            self.tv_distance
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
