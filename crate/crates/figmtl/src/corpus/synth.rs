//! Seeded synthetic corpus with controllable joint-label correlation.
//!
//! Sentences are assembled from template pools: a subject, then either a
//! literal verb phrase or a metaphor cue phrase, then either a plain tail or
//! a hyperbole cue phrase. Cue presence is tied to the labels through
//! per-task reliability rates, so the hyperbole signal can be made noisy
//! while the metaphor signal stays clean — the regime where joint training
//! has something to transfer.

use super::LabeledSentence;
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Cue phrase pools and cue reliability rates for the generator.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub subjects: Vec<String>,
    pub verb_phrases: Vec<String>,
    pub plain_tails: Vec<String>,
    pub hyperbole_cues: Vec<String>,
    pub metaphor_cues: Vec<String>,
    /// P(hyperbole cue present | hyperbole = 1).
    pub hyperbole_cue_rate: f64,
    /// P(hyperbole cue present | hyperbole = 0).
    pub hyperbole_spurious_rate: f64,
    /// P(metaphor cue present | metaphor = 1).
    pub metaphor_cue_rate: f64,
    /// P(metaphor cue present | metaphor = 0).
    pub metaphor_spurious_rate: f64,
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            subjects: strings(&[
                "my sister",
                "the teacher",
                "his plan",
                "that movie",
                "her idea",
                "the kitchen",
                "this town",
                "the meeting",
                "our neighbor",
                "the report",
                "my inbox",
                "the garden",
            ]),
            verb_phrases: strings(&[
                "covered the main points",
                "needed a small revision",
                "started a little late",
                "listed the usual items",
                "followed the schedule",
                "stayed fairly quiet",
                "answered two questions",
                "took a short break",
                "moved to the next room",
                "kept the same pace",
            ]),
            plain_tails: strings(&[
                "this afternoon",
                "before lunch",
                "on most days",
                "last week",
                "without much fuss",
                "as usual",
                "in the morning",
                "after the call",
            ]),
            // The token after "a"/"the" is the learnable cue word.
            hyperbole_cues: strings(&[
                "for a million years",
                "a thousand times over",
                "beyond all measure",
                "like never before in history",
                "until the end of forever",
                "more than anyone alive could count",
                "enough to fill an entire stadium",
                "harder than humanly possible",
            ]),
            metaphor_cues: strings(&[
                "is a vortex of noise",
                "is an ocean of doubt",
                "is a furnace of ambition",
                "drowns in paperwork",
                "is a river of excuses",
                "devours every spare minute",
                "is a fortress of habit",
                "melts into the background",
            ]),
            hyperbole_cue_rate: 0.7,
            hyperbole_spurious_rate: 0.25,
            metaphor_cue_rate: 0.95,
            metaphor_spurious_rate: 0.02,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        for (name, pool) in [
            ("subjects", &self.subjects),
            ("verb_phrases", &self.verb_phrases),
            ("plain_tails", &self.plain_tails),
            ("hyperbole_cues", &self.hyperbole_cues),
            ("metaphor_cues", &self.metaphor_cues),
        ] {
            if pool.is_empty() {
                return Err(Error::Config(format!("synthetic corpus cue list {name} is empty")));
            }
        }
        for (name, rate) in [
            ("hyperbole_cue_rate", self.hyperbole_cue_rate),
            ("hyperbole_spurious_rate", self.hyperbole_spurious_rate),
            ("metaphor_cue_rate", self.metaphor_cue_rate),
            ("metaphor_spurious_rate", self.metaphor_spurious_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Config(format!("{name} {rate} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

fn pick<'a>(rng: &mut ChaCha20Rng, pool: &'a [String]) -> &'a str {
    &pool[rng.gen_range(0..pool.len())]
}

/// Generate `size` labeled sentences whose (hyperbole, metaphor) labels have
/// phi correlation `rho_hm` in expectation. Byte-identical output per seed.
pub fn synth_corpus(
    spec: &SynthSpec,
    rho_hm: f64,
    size: usize,
    seed: u64,
) -> Result<Vec<LabeledSentence>> {
    if !(0.0..=1.0).contains(&rho_hm) {
        return Err(Error::Config(format!("label correlation {rho_hm} outside [0, 1]")));
    }
    spec.validate()?;

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(size);
    for i in 0..size {
        let hyperbole: u8 = rng.gen_range(0..=1);
        // Copy the hyperbole label with probability rho, draw fresh
        // otherwise; with 0.5 marginals the phi coefficient equals rho.
        let metaphor: u8 = if rng.gen::<f64>() < rho_hm {
            hyperbole
        } else {
            rng.gen_range(0..=1)
        };

        let hyp_cue = if hyperbole == 1 {
            rng.gen::<f64>() < spec.hyperbole_cue_rate
        } else {
            rng.gen::<f64>() < spec.hyperbole_spurious_rate
        };
        let met_cue = if metaphor == 1 {
            rng.gen::<f64>() < spec.metaphor_cue_rate
        } else {
            rng.gen::<f64>() < spec.metaphor_spurious_rate
        };

        let subject = pick(&mut rng, &spec.subjects);
        let core = if met_cue {
            pick(&mut rng, &spec.metaphor_cues)
        } else {
            pick(&mut rng, &spec.verb_phrases)
        };
        let tail = if hyp_cue {
            pick(&mut rng, &spec.hyperbole_cues)
        } else {
            pick(&mut rng, &spec.plain_tails)
        };
        let text = format!("{subject} {core} {tail}.");

        rows.push(LabeledSentence {
            id: format!("syn{i:05}"),
            text,
            hyperbole: Some(hyperbole),
            metaphor: Some(metaphor),
            source: "synthetic".to_string(),
        });
    }
    Ok(rows)
}

/// Phi coefficient between the two label columns; the empirical counterpart
/// of `rho_hm`.
pub fn label_correlation(dataset: &[LabeledSentence]) -> Option<f64> {
    let mut n = [[0f64; 2]; 2];
    for s in dataset {
        n[s.hyperbole? as usize][s.metaphor? as usize] += 1.0;
    }
    let total: f64 = n.iter().flatten().sum();
    if total == 0.0 {
        return None;
    }
    let h1 = n[1][0] + n[1][1];
    let m1 = n[0][1] + n[1][1];
    let h0 = total - h1;
    let m0 = total - m1;
    let denom = (h1 * h0 * m1 * m0).sqrt();
    if denom == 0.0 {
        return None;
    }
    Some((n[1][1] * n[0][0] - n[1][0] * n[0][1]) / denom)
}
