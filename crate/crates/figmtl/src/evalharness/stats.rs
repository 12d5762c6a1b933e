//! Paired and Welch t-tests with a continued-fraction Student-t CDF.
//!
//! Sign convention: differences are taken as `b − a`, so a positive
//! t-statistic means sample `b` has the larger mean. Swapping the samples
//! negates t and leaves p unchanged.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TTestVariant {
    Paired,
    Welch,
}

impl TTestVariant {
    pub fn parse(name: &str) -> Option<TTestVariant> {
        match name.to_lowercase().as_str() {
            "paired" => Some(TTestVariant::Paired),
            "welch" => Some(TTestVariant::Welch),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TTestVariant::Paired => "paired",
            TTestVariant::Welch => "welch",
        }
    }
}

/// Two-tailed t-test outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub t_statistic: f64,
    pub degrees_of_freedom: f64,
    pub p_value: f64,
    pub sample_size: usize,
    pub variant: TTestVariant,
    /// Zero variance with a nonzero mean difference: t is unbounded and the
    /// p-value is reported as below 1e-15.
    pub degenerate: bool,
}

impl SignificanceResult {
    pub fn p_display(&self) -> String {
        if self.degenerate {
            "<1e-15".to_string()
        } else {
            format!("{:.6}", self.p_value)
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
fn variance(xs: &[f64], m: f64) -> f64 {
    xs.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Two-tailed t-test of `b` against `a` (positive t ⇔ b larger).
pub fn t_test(sample_a: &[f64], sample_b: &[f64], variant: TTestVariant) -> Result<SignificanceResult> {
    if sample_a.len() < 2 || sample_b.len() < 2 {
        return Err(Error::Contract("t_test needs at least 2 observations per sample".into()));
    }
    match variant {
        TTestVariant::Paired => {
            if sample_a.len() != sample_b.len() {
                return Err(Error::Contract(format!(
                    "paired t_test needs equal sizes, got {} and {}",
                    sample_a.len(),
                    sample_b.len()
                )));
            }
            let diffs: Vec<f64> = sample_b.iter().zip(sample_a).map(|(&b, &a)| b - a).collect();
            let n = diffs.len();
            let d_mean = mean(&diffs);
            let d_var = variance(&diffs, d_mean);
            let df = (n - 1) as f64;
            if d_var == 0.0 {
                return Ok(degenerate_result(d_mean, df, n, variant));
            }
            let t = d_mean / (d_var / n as f64).sqrt();
            Ok(SignificanceResult {
                t_statistic: t,
                degrees_of_freedom: df,
                p_value: student_t_two_tailed_p(t, df),
                sample_size: n,
                variant,
                degenerate: false,
            })
        }
        TTestVariant::Welch => {
            let (na, nb) = (sample_a.len() as f64, sample_b.len() as f64);
            let (ma, mb) = (mean(sample_a), mean(sample_b));
            let (va, vb) = (variance(sample_a, ma), variance(sample_b, mb));
            let se2 = va / na + vb / nb;
            if se2 == 0.0 {
                let df = na + nb - 2.0;
                return Ok(degenerate_result(mb - ma, df, sample_a.len().min(sample_b.len()), variant));
            }
            let t = (mb - ma) / se2.sqrt();
            let df = se2 * se2
                / ((va / na) * (va / na) / (na - 1.0) + (vb / nb) * (vb / nb) / (nb - 1.0));
            Ok(SignificanceResult {
                t_statistic: t,
                degrees_of_freedom: df,
                p_value: student_t_two_tailed_p(t, df),
                sample_size: sample_a.len().min(sample_b.len()),
                variant,
                degenerate: false,
            })
        }
    }
}

fn degenerate_result(mean_diff: f64, df: f64, n: usize, variant: TTestVariant) -> SignificanceResult {
    if mean_diff == 0.0 {
        // Identical constant samples: no evidence of any difference.
        SignificanceResult {
            t_statistic: 0.0,
            degrees_of_freedom: df,
            p_value: 1.0,
            sample_size: n,
            variant,
            degenerate: false,
        }
    } else {
        SignificanceResult {
            t_statistic: if mean_diff > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY },
            degrees_of_freedom: df,
            p_value: 0.0,
            sample_size: n,
            variant,
            degenerate: true,
        }
    }
}

/// Two-tailed p-value under Student's t with `df` degrees of freedom:
/// `I_x(df/2, 1/2)` at `x = df/(df + t²)`.
pub fn student_t_two_tailed_p(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    let x = df / (df + t * t);
    incomplete_beta(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

/// Lanczos approximation of ln Γ(x), accurate to ~1e-15 for x > 0.
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 6] = [
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let mut y = x;
    let tmp = x + 5.5;
    let tmp = tmp - (x + 0.5) * tmp.ln();
    let mut series = 1.000000000190015;
    for c in COEFFS {
        y += 1.0;
        series += c / y;
    }
    -tmp + (2.5066282746310005 * series / x).ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 3e-16;
    const FPMIN: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function `I_x(a, b)`, |error| well below
/// 1e-10 over the t-test range.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    assert!(a > 0.0 && b > 0.0, "incomplete_beta requires positive parameters");
    assert!((0.0..=1.0).contains(&x), "incomplete_beta domain is [0, 1]");
    if x == 0.0 {
        return 0.0;
    }
    if x == 1.0 {
        return 1.0;
    }
    let front = (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln()).exp();
    // Use the continued fraction on the side where it converges fast.
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}
