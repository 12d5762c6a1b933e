//! Central finite-difference verification of analytic gradients.

use super::{Tape, TensorId};
use crate::error::{Error, Result};

/// Compare the analytic gradient of a scalar-valued function against central
/// finite differences, coordinate by coordinate, and return the worst
/// relative error `|a − n| / max(|a|, |n|, 1)`.
///
/// `build` receives a fresh tape and the input tensor and must return a
/// single-element tensor; anything else is a contract error. `eps` must lie
/// in `[1e-6, 1e-4]`.
pub fn grad_check<F>(build: F, x: &[f64], shape: &[usize], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, TensorId) -> Result<TensorId>,
{
    if !(1e-6..=1e-4).contains(&eps) {
        return Err(Error::Config(format!("grad_check eps {eps} outside [1e-6, 1e-4]")));
    }
    if x.len() != shape.iter().product::<usize>() {
        return Err(Error::Contract(format!(
            "grad_check input length {} does not match shape {:?}",
            x.len(),
            shape
        )));
    }

    let eval = |point: &[f64]| -> Result<f64> {
        let mut tape = Tape::new();
        let id = tape.constant(point.to_vec(), shape);
        let out = build(&mut tape, id)?;
        if tape.data(out).len() != 1 {
            return Err(Error::Contract(format!(
                "grad_check requires a scalar-valued function, got shape {:?}",
                tape.shape(out)
            )));
        }
        Ok(tape.scalar(out))
    };

    // Analytic gradient.
    let analytic = {
        let mut tape = Tape::new();
        let id = tape.param(x.to_vec(), shape);
        let out = build(&mut tape, id)?;
        if tape.data(out).len() != 1 {
            return Err(Error::Contract(format!(
                "grad_check requires a scalar-valued function, got shape {:?}",
                tape.shape(out)
            )));
        }
        tape.backward(out)?;
        tape.grad(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.len()])
    };

    let mut worst = 0.0f64;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let original = probe[i];
        probe[i] = original + eps;
        let plus = eval(&probe)?;
        probe[i] = original - eps;
        let minus = eval(&probe)?;
        probe[i] = original;
        let numeric = (plus - minus) / (2.0 * eps);
        let denom = analytic[i].abs().max(numeric.abs()).max(1.0);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(worst)
}
