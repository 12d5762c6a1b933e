//! The three training objectives: per-task cross-entropy, the λ-weighted
//! two-task combination, and multi-label binary cross-entropy over sigmoid
//! logits.
//!
//! Each loss exists in two forms: a pure function over plain numbers (used
//! for reporting and as the oracle in tests) and a graph builder over
//! [`Tape`] (used for training). The multi-label loss divides by the batch
//! size only, not by the label count; [`mtlf_loss_with`] and
//! [`mtlf_loss_graph`] expose `mean_over_labels` for the common alternative.

use crate::autodiff::{Tape, TensorId};
use crate::error::{Error, Result};

/// Probabilities are clamped into `[PROB_CLAMP, 1 − PROB_CLAMP]` before any
/// logarithm, keeping the losses finite at nominally perfect predictions.
pub const PROB_CLAMP: f64 = 1e-12;

/// λ-weighted breakdown of a two-task loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossComponents {
    pub task1: f64,
    pub task2: f64,
    pub lambda: f64,
}

/// A nonnegative scalar loss, with the per-task breakdown when it came from
/// the two-task combination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub scalar: f64,
    pub components: Option<LossComponents>,
}

impl LossValue {
    fn simple(scalar: f64) -> Self {
        LossValue { scalar, components: None }
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn check_bit(value: u8, what: &str) -> Result<()> {
    if value > 1 {
        return Err(Error::Data(format!("{what} must be 0 or 1, got {value}")));
    }
    Ok(())
}

/// Mean binary cross-entropy `−(1/D)·Σ [yᵢ·ln ŷᵢ + (1−yᵢ)·ln(1−ŷᵢ)]` where
/// `y_hat` holds the predicted probability of the positive class.
pub fn ce_loss(y_hat: &[f64], y: &[u8]) -> Result<LossValue> {
    if y_hat.is_empty() {
        return Err(Error::Contract("ce_loss on an empty batch".into()));
    }
    if y_hat.len() != y.len() {
        return Err(Error::Contract(format!(
            "ce_loss: {} predictions vs {} labels",
            y_hat.len(),
            y.len()
        )));
    }
    let d = y_hat.len() as f64;
    let mut total = 0.0;
    for (&p, &label) in y_hat.iter().zip(y) {
        check_bit(label, "label")?;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Contract(format!("predicted probability {p} outside [0, 1]")));
        }
        let p = clamp_prob(p);
        total += if label == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(LossValue::simple(-total / d))
}

/// Convex combination `λ·L₁ + (1−λ)·L₂` of two task losses.
pub fn mtle_loss(l1: &LossValue, l2: &LossValue, lambda: f64) -> Result<LossValue> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda {lambda} outside [0, 1]")));
    }
    Ok(LossValue {
        scalar: lambda * l1.scalar + (1.0 - lambda) * l2.scalar,
        components: Some(LossComponents {
            task1: l1.scalar,
            task2: l2.scalar,
            lambda,
        }),
    })
}

/// Multi-label binary cross-entropy over raw logits, divided by the batch
/// size only (see module docs). `logits` and `labels` are row-major `D×m`.
pub fn mtlf_loss(logits: &[f64], labels: &[u8], m: usize) -> Result<LossValue> {
    mtlf_loss_with(logits, labels, m, false)
}

/// [`mtlf_loss`] with an optional additional division by the label count.
pub fn mtlf_loss_with(
    logits: &[f64],
    labels: &[u8],
    m: usize,
    mean_over_labels: bool,
) -> Result<LossValue> {
    if m != 2 {
        return Err(Error::Contract(format!("mtlf_loss supports exactly 2 labels, got {m}")));
    }
    if logits.is_empty() || logits.len() % m != 0 || logits.len() != labels.len() {
        return Err(Error::Contract(format!(
            "mtlf_loss: {} logits vs {} labels with m = {m}",
            logits.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = logits.iter().find(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!("mtlf_loss logit is {bad}")));
    }
    let d = (logits.len() / m) as f64;
    let mut total = 0.0;
    for (&l, &y) in logits.iter().zip(labels) {
        check_bit(y, "label")?;
        // y·ln σ(l) + (1−y)·ln(1−σ(l)) = −(softplus(l) − y·l), stable at
        // saturated logits.
        total += softplus(l) - f64::from(y) * l;
    }
    let denom = if mean_over_labels { d * m as f64 } else { d };
    Ok(LossValue::simple(total / denom))
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

// ── Graph builders ──────────────────────────────────────────────────────

fn one_hot_rows(labels: &[u8]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(labels.len() * 2);
    for &y in labels {
        check_bit(y, "label")?;
        if y == 1 {
            out.extend_from_slice(&[0.0, 1.0]);
        } else {
            out.extend_from_slice(&[1.0, 0.0]);
        }
    }
    Ok(out)
}

/// Build the cross-entropy loss node for `[D, 2]` logits under a 2-way
/// softmax. The gradient at the logits is `(softmax − one_hot) / D`.
pub fn ce_loss_graph(tape: &mut Tape, logits: TensorId, labels: &[u8]) -> Result<TensorId> {
    let shape = tape.shape(logits).to_vec();
    if shape.len() != 2 || shape[1] != 2 || shape[0] != labels.len() || labels.is_empty() {
        return Err(Error::Contract(format!(
            "ce_loss_graph: logits shape {shape:?} vs {} labels",
            labels.len()
        )));
    }
    let d = labels.len();
    let probs = tape.softmax(logits, 1)?;
    let clamped = tape.clamp(probs, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let log_probs = tape.ln(clamped)?;
    let one_hot = tape.constant(one_hot_rows(labels)?, &[d, 2]);
    let picked = tape.mul(log_probs, one_hot)?;
    let total = tape.sum(picked);
    Ok(tape.scale(total, -1.0 / d as f64))
}

/// Build `λ·L₁ + (1−λ)·L₂` from two scalar loss nodes.
pub fn mtle_loss_graph(
    tape: &mut Tape,
    l1: TensorId,
    l2: TensorId,
    lambda: f64,
) -> Result<TensorId> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda {lambda} outside [0, 1]")));
    }
    let a = tape.scale(l1, lambda);
    let b = tape.scale(l2, 1.0 - lambda);
    tape.add(a, b)
}

/// Build the multi-label binary cross-entropy node for `[D, 2]` logits,
/// via the stable `softplus(l) − y·l` form.
pub fn mtlf_loss_graph(
    tape: &mut Tape,
    logits: TensorId,
    labels: &[u8],
    mean_over_labels: bool,
) -> Result<TensorId> {
    let shape = tape.shape(logits).to_vec();
    if shape.len() != 2 || shape[1] != 2 || shape[0] * 2 != labels.len() || labels.is_empty() {
        return Err(Error::Contract(format!(
            "mtlf_loss_graph: logits shape {shape:?} vs {} labels",
            labels.len()
        )));
    }
    let d = shape[0];
    let y_data: Vec<f64> = labels
        .iter()
        .map(|&y| {
            check_bit(y, "label")?;
            Ok(f64::from(y))
        })
        .collect::<Result<_>>()?;
    let y = tape.constant(y_data, &[d, 2]);
    let sp = tape.softplus(logits);
    let ly = tape.mul(logits, y)?;
    let per_element = tape.sub(sp, ly)?;
    let total = tape.sum(per_element);
    let denom = if mean_over_labels { (d * 2) as f64 } else { d as f64 };
    Ok(tape.scale(total, 1.0 / denom))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const LN_2: f64 = std::f64::consts::LN_2;

    #[test]
    fn ce_loss_perfect_prediction_is_near_zero() {
        let loss = ce_loss(&[1.0], &[1]).unwrap();
        assert!(loss.scalar.abs() < 1e-9, "{}", loss.scalar);
        assert!(loss.scalar >= 0.0);
    }

    #[test]
    fn ce_loss_closed_forms() {
        let loss = ce_loss(&[0.5], &[1]).unwrap();
        assert!((loss.scalar - LN_2).abs() < 1e-12);

        // −(ln 0.9 + ln 0.8)/2
        let expected = -(0.9f64.ln() + 0.8f64.ln()) / 2.0;
        let loss = ce_loss(&[0.9, 0.2], &[1, 0]).unwrap();
        assert!((loss.scalar - expected).abs() < 1e-12);
        assert!((loss.scalar - 0.164252).abs() < 1e-6);
    }

    #[test]
    fn ce_loss_rejects_empty_batch() {
        assert!(matches!(ce_loss(&[], &[]), Err(Error::Contract(_))));
    }

    #[test]
    fn mtle_loss_fixtures() {
        let l1 = LossValue::simple(0.4);
        let l2 = LossValue::simple(0.8);
        assert!((mtle_loss(&l1, &l2, 0.5).unwrap().scalar - 0.6).abs() < 1e-12);
        assert!((mtle_loss(&l1, &l2, 1.0).unwrap().scalar - 0.4).abs() < 1e-12);

        let l1 = LossValue::simple(1.0);
        let l2 = LossValue::simple(2.0);
        let combined = mtle_loss(&l1, &l2, 0.3).unwrap();
        assert!((combined.scalar - 1.7).abs() < 1e-12);
        let parts = combined.components.unwrap();
        assert_eq!(parts.task1, 1.0);
        assert_eq!(parts.task2, 2.0);
        assert_eq!(parts.lambda, 0.3);
    }

    #[test]
    fn mtle_loss_rejects_bad_lambda() {
        let l = LossValue::simple(1.0);
        assert!(matches!(mtle_loss(&l, &l, -0.1), Err(Error::Config(_))));
        assert!(matches!(mtle_loss(&l, &l, 1.1), Err(Error::Config(_))));
    }

    #[test]
    fn mtle_components_recombine_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let l1 = LossValue::simple(rng.gen_range(0.0..3.0));
            let l2 = LossValue::simple(rng.gen_range(0.0..3.0));
            let lambda = rng.gen_range(0.0..=1.0);
            let combined = mtle_loss(&l1, &l2, lambda).unwrap();
            let c = combined.components.unwrap();
            assert!((combined.scalar - (c.lambda * c.task1 + (1.0 - c.lambda) * c.task2)).abs() < 1e-12);
        }
    }

    #[test]
    fn mtle_loss_strictly_monotone_in_task1() {
        let base = mtle_loss(&LossValue::simple(1.0), &LossValue::simple(2.0), 0.4).unwrap();
        let bumped = mtle_loss(&LossValue::simple(1.2), &LossValue::simple(2.0), 0.4).unwrap();
        assert!(bumped.scalar > base.scalar);
    }

    #[test]
    fn mtlf_loss_zero_logits_both_positive() {
        // σ(0) = 0.5 for both labels: loss = 2·ln 2, not divided by m.
        let loss = mtlf_loss(&[0.0, 0.0], &[1, 1], 2).unwrap();
        assert!((loss.scalar - 2.0 * LN_2).abs() < 1e-12);
        assert!((loss.scalar - 1.386294).abs() < 1e-6);

        let halved = mtlf_loss_with(&[0.0, 0.0], &[1, 1], 2, true).unwrap();
        assert!((halved.scalar - LN_2).abs() < 1e-12);
    }

    #[test]
    fn mtlf_loss_saturated_matched_logits_vanish() {
        let loss = mtlf_loss(&[30.0, -30.0], &[1, 0], 2).unwrap();
        assert!(loss.scalar < 1e-9, "{}", loss.scalar);
        assert!(loss.scalar >= 0.0);
    }

    #[test]
    fn mtlf_loss_rejects_shape_mismatch() {
        assert!(matches!(mtlf_loss(&[0.0, 0.0, 0.0], &[1, 1], 2), Err(Error::Contract(_))));
        assert!(matches!(mtlf_loss(&[0.0, 0.0], &[1], 2), Err(Error::Contract(_))));
    }

    #[test]
    fn mtlf_decomposes_into_per_column_ce() {
        // Summed over the two label columns without the 1/m average, the
        // multi-label loss is exactly the sum of two per-task CE losses on
        // the sigmoid probabilities.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let d = rng.gen_range(1..8);
            let logits: Vec<f64> = (0..d * 2).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let labels: Vec<u8> = (0..d * 2).map(|_| rng.gen_range(0..=1)).collect();

            let whole = mtlf_loss(&logits, &labels, 2).unwrap().scalar;

            let col = |j: usize| -> (Vec<f64>, Vec<u8>) {
                (0..d)
                    .map(|i| (1.0 / (1.0 + (-logits[i * 2 + j]).exp()), labels[i * 2 + j]))
                    .unzip()
            };
            let (p1, y1) = col(0);
            let (p2, y2) = col(1);
            let split =
                ce_loss(&p1, &y1).unwrap().scalar + ce_loss(&p2, &y2).unwrap().scalar;
            assert!((whole - split).abs() < 1e-12, "{whole} vs {split}");
        }
    }

    #[test]
    fn mtlf_is_permutation_equivariant_over_examples() {
        let logits = vec![0.3, -1.0, 2.0, 0.1, -0.7, 1.5];
        let labels = vec![1, 0, 0, 1, 1, 1];
        let base = mtlf_loss(&logits, &labels, 2).unwrap().scalar;
        // Swap examples 0 and 2.
        let logits_p = vec![-0.7, 1.5, 2.0, 0.1, 0.3, -1.0];
        let labels_p = vec![1, 1, 0, 1, 1, 0];
        let permuted = mtlf_loss(&logits_p, &labels_p, 2).unwrap().scalar;
        assert!((base - permuted).abs() < 1e-12);
    }

    #[test]
    fn losses_are_nonnegative_at_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let d = rng.gen_range(1..6);
            let probs: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..=1.0)).collect();
            let ys: Vec<u8> = (0..d).map(|_| rng.gen_range(0..=1)).collect();
            assert!(ce_loss(&probs, &ys).unwrap().scalar >= 0.0);

            let logits: Vec<f64> = (0..d * 2).map(|_| rng.gen_range(-20.0..20.0)).collect();
            let labels: Vec<u8> = (0..d * 2).map(|_| rng.gen_range(0..=1)).collect();
            assert!(mtlf_loss(&logits, &labels, 2).unwrap().scalar >= 0.0);
        }
    }

    #[test]
    fn ce_graph_gradient_is_softmax_minus_one_hot_over_d() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let d = rng.gen_range(1..6);
            let logits: Vec<f64> = (0..d * 2).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let labels: Vec<u8> = (0..d).map(|_| rng.gen_range(0..=1)).collect();

            let mut tape = Tape::new();
            let z = tape.param(logits.clone(), &[d, 2]);
            let loss = ce_loss_graph(&mut tape, z, &labels).unwrap();
            tape.backward(loss).unwrap();
            let grad = tape.grad(z).unwrap().to_vec();

            for i in 0..d {
                let (a, b) = (logits[i * 2], logits[i * 2 + 1]);
                let max = a.max(b);
                let (ea, eb) = ((a - max).exp(), (b - max).exp());
                let sum = ea + eb;
                let soft = [ea / sum, eb / sum];
                for j in 0..2 {
                    let one_hot = if usize::from(labels[i]) == j { 1.0 } else { 0.0 };
                    let expected = (soft[j] - one_hot) / d as f64;
                    let err = (grad[i * 2 + j] - expected).abs()
                        / expected.abs().max(grad[i * 2 + j].abs()).max(1.0);
                    assert!(err < 1e-6, "grad {} vs closed form {}", grad[i * 2 + j], expected);
                }
            }

            // And against finite differences.
            let labels_fd = labels.clone();
            let err = grad_check(
                |t, z| ce_loss_graph(t, z, &labels_fd),
                &logits,
                &[d, 2],
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "fd error {err}");
        }
    }

    #[test]
    fn mtlf_graph_matches_pure_loss_and_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let d = rng.gen_range(1..6);
            let logits: Vec<f64> = (0..d * 2).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let labels: Vec<u8> = (0..d * 2).map(|_| rng.gen_range(0..=1)).collect();

            let mut tape = Tape::new();
            let z = tape.constant(logits.clone(), &[d, 2]);
            let node = mtlf_loss_graph(&mut tape, z, &labels, false).unwrap();
            let pure = mtlf_loss(&logits, &labels, 2).unwrap().scalar;
            assert!((tape.scalar(node) - pure).abs() < 1e-12);

            let labels_fd = labels.clone();
            let err = grad_check(
                |t, z| mtlf_loss_graph(t, z, &labels_fd, false),
                &logits,
                &[d, 2],
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "fd error {err}");
        }
    }

    #[test]
    fn mtle_graph_matches_pure_combination() {
        let mut tape = Tape::new();
        let l1 = tape.constant(vec![0.4], &[1]);
        let l2 = tape.constant(vec![0.8], &[1]);
        let combined = mtle_loss_graph(&mut tape, l1, l2, 0.25).unwrap();
        assert!((tape.scalar(combined) - (0.25 * 0.4 + 0.75 * 0.8)).abs() < 1e-12);
        assert!(matches!(
            mtle_loss_graph(&mut tape, l1, l2, 1.5),
            Err(Error::Config(_))
        ));
    }
}
