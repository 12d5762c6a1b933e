use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn matmul_identity() {
    let mut t = Tape::new();
    let i2 = t.constant(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]);
    let a = t.constant(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]);
    let c = t.matmul(i2, a).unwrap();
    assert_eq!(t.data(c), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn matmul_row_times_column() {
    // [[1,2]]·[[3],[4]] = [[1*3 + 2*4]] = [[11]]
    let mut t = Tape::new();
    let a = t.constant(vec![1.0, 2.0], &[1, 2]);
    let b = t.constant(vec![3.0, 4.0], &[2, 1]);
    let c = t.matmul(a, b).unwrap();
    assert_eq!(t.data(c), &[11.0]);
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let mut t = Tape::new();
    let a = t.constant(vec![0.0; 6], &[2, 3]);
    let b = t.constant(vec![0.0; 4], &[2, 2]);
    let err = t.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "message was: {msg}");
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    // d sum(A·B) / dA for A=[[1,1]], B=[[2],[5]] is [[2,5]].
    let b_data = vec![2.0, 5.0];
    let build = |tape: &mut Tape, a: TensorId| {
        let b = tape.constant(b_data.clone(), &[2, 1]);
        let c = tape.matmul(a, b)?;
        Ok(tape.sum(c))
    };
    let err = grad_check(build, &[1.0, 1.0], &[1, 2], 1e-5).unwrap();
    assert!(err < 1e-6, "rel error {err}");

    let mut t = Tape::new();
    let a = t.param(vec![1.0, 1.0], &[1, 2]);
    let b = t.constant(b_data, &[2, 1]);
    let c = t.matmul(a, b).unwrap();
    let s = t.sum(c);
    t.backward(s).unwrap();
    assert_eq!(t.grad(a).unwrap(), &[2.0, 5.0]);
}

#[test]
fn softmax_symmetry_and_closed_form() {
    let mut t = Tape::new();
    let zeros = t.constant(vec![0.0, 0.0], &[2]);
    let s = t.softmax(zeros, 0).unwrap();
    assert_eq!(t.data(s), &[0.5, 0.5]);

    // e^{ln 1} : e^{ln 3} = 1 : 3
    let x = t.constant(vec![1.0f64.ln(), 3.0f64.ln()], &[2]);
    let s = t.softmax(x, 0).unwrap();
    assert!(close(t.data(s)[0], 0.25, 1e-15));
    assert!(close(t.data(s)[1], 0.75, 1e-15));
}

#[test]
fn softmax_stable_under_large_inputs() {
    let mut t = Tape::new();
    let x = t.constant(vec![1000.0, 1000.0], &[2]);
    let s = t.softmax(x, 0).unwrap();
    assert_eq!(t.data(s), &[0.5, 0.5]);
}

#[test]
fn softmax_rejects_non_finite_input() {
    let mut t = Tape::new();
    let x = t.constant(vec![f64::NAN, 0.0], &[2]);
    assert!(matches!(t.softmax(x, 0), Err(Error::Numeric(_))));
    let y = t.constant(vec![f64::INFINITY, 0.0], &[2]);
    assert!(matches!(t.softmax(y, 0), Err(Error::Numeric(_))));
}

#[test]
fn sigmoid_fixtures() {
    let mut t = Tape::new();
    let x = t.constant(vec![0.0, 40.0, 3.0f64.ln()], &[3]);
    let s = t.sigmoid(x);
    let out = t.data(s);
    assert_eq!(out[0], 0.5);
    assert!((out[1] - 1.0).abs() < 1e-12);
    assert!(close(out[2], 0.75, 1e-15));
}

#[test]
fn grad_check_sum_of_squares() {
    let build = |tape: &mut Tape, x: TensorId| {
        let sq = tape.mul(x, x)?;
        Ok(tape.sum(sq))
    };
    let err = grad_check(build, &[1.0, 2.0, 3.0], &[3], 1e-5).unwrap();
    assert!(err < 1e-6, "rel error {err}");

    let mut t = Tape::new();
    let x = t.param(vec![1.0, 2.0, 3.0], &[3]);
    let sq = t.mul(x, x).unwrap();
    let s = t.sum(sq);
    t.backward(s).unwrap();
    assert_eq!(t.grad(x).unwrap(), &[2.0, 4.0, 6.0]);
}

#[test]
fn grad_check_constant_function_is_exact_zero() {
    let build = |tape: &mut Tape, _x: TensorId| {
        let c = tape.constant(vec![7.0], &[1]);
        Ok(tape.sum(c))
    };
    let err = grad_check(build, &[1.0, -2.0], &[2], 1e-5).unwrap();
    assert_eq!(err, 0.0);
}

#[test]
fn grad_check_rejects_non_scalar() {
    let build = |tape: &mut Tape, x: TensorId| tape.add(x, x);
    let err = grad_check(build, &[1.0, 2.0], &[2], 1e-5).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

#[test]
fn grad_check_rejects_bad_eps() {
    let build = |tape: &mut Tape, x: TensorId| Ok(tape.sum(x));
    assert!(matches!(grad_check(build, &[1.0], &[1], 1e-2), Err(Error::Config(_))));
}

#[test]
fn backward_requires_scalar_loss() {
    let mut t = Tape::new();
    let x = t.param(vec![1.0, 2.0], &[2]);
    assert!(matches!(t.backward(x), Err(Error::Contract(_))));
}

#[test]
fn loss_grad_with_respect_to_itself_is_one() {
    let mut t = Tape::new();
    let x = t.param(vec![3.0], &[1]);
    let y = t.scale(x, 2.0);
    t.backward(y).unwrap();
    assert_eq!(t.grad(y).unwrap(), &[1.0]);
}

#[test]
fn fanout_gradients_accumulate_additively() {
    // Shared subexpression: grad of sum(x ⊙ x) with one shared leaf must
    // equal the sum of path-wise contributions from duplicated leaves.
    let data = vec![0.5, -1.5, 2.0];
    let mut shared = Tape::new();
    let x = shared.param(data.clone(), &[3]);
    let prod = shared.mul(x, x).unwrap();
    let loss = shared.sum(prod);
    shared.backward(loss).unwrap();
    let g_shared = shared.grad(x).unwrap().to_vec();

    let mut dup = Tape::new();
    let x1 = dup.param(data.clone(), &[3]);
    let x2 = dup.param(data, &[3]);
    let prod = dup.mul(x1, x2).unwrap();
    let loss = dup.sum(prod);
    dup.backward(loss).unwrap();
    for i in 0..3 {
        let pathwise = dup.grad(x1).unwrap()[i] + dup.grad(x2).unwrap()[i];
        assert!(close(g_shared[i], pathwise, 1e-15));
    }
}

#[test]
fn embedding_rejects_out_of_range_id() {
    let mut t = Tape::new();
    let table = t.constant(vec![0.0; 8], &[4, 2]);
    let err = t.embedding(table, &[0, 4]).unwrap_err();
    assert!(matches!(err, Error::Vocabulary { id: 4, size: 4 }));
}

#[test]
fn masked_softmax_zeroes_masked_columns() {
    let mut t = Tape::new();
    let x = t.constant(vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 1.0, 2.0], &[2, 4]);
    let s = t.masked_softmax_rows(x, &[true, true, false, true]).unwrap();
    let out = t.data(s);
    for row in 0..2 {
        assert_eq!(out[row * 4 + 2], 0.0);
        let sum: f64 = out[row * 4..(row + 1) * 4].iter().sum();
        assert!(close(sum, 1.0, 1e-12));
    }
    assert!(matches!(
        t.masked_softmax_rows(x, &[false; 4]),
        Err(Error::Numeric(_))
    ));
}

#[test]
fn ln_rejects_non_positive() {
    let mut t = Tape::new();
    let x = t.constant(vec![1.0, 0.0], &[2]);
    assert!(matches!(t.ln(x), Err(Error::Numeric(_))));
}

/// Scalarize a tensor as sum(w ⊙ y) with fixed weights; plain sums hide
/// index and transposition bugs.
fn weighted_sum(tape: &mut Tape, y: TensorId, weights: &[f64]) -> Result<TensorId> {
    let shape = tape.shape(y).to_vec();
    let n = tape.data(y).len();
    let w = tape.constant(weights[..n].to_vec(), &shape);
    let wy = tape.mul(y, w)?;
    Ok(tape.sum(wy))
}

/// Every differentiable op passes a finite-difference check at randomized
/// points, over 100 seeds.
#[test]
fn all_ops_pass_grad_check_over_100_seeds() {
    type Build<'w> = Box<dyn Fn(&mut Tape, TensorId) -> Result<TensorId> + 'w>;

    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sample = |n: usize, lo: f64, hi: f64| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(lo..hi)).collect()
        };

        let w = sample(6, -1.0, 1.0);
        let b_mat = sample(6, -1.0, 1.0);
        let a_mat = sample(6, -1.0, 1.0);
        let other = sample(6, -1.5, 1.5);
        let gamma = sample(3, 0.5, 1.5);
        let beta = sample(3, -0.5, 0.5);
        let ln_x = sample(6, -2.0, 2.0);
        // Keep clamp inputs away from the edges, where the subgradient and
        // finite differences legitimately disagree.
        let clamp_x: Vec<f64> = sample(6, -2.0, 2.0)
            .into_iter()
            .map(|v| if (v.abs() - 0.5).abs() < 0.05 { v + 0.2 } else { v })
            .collect();

        let checks: Vec<(&str, Build, Vec<f64>, Vec<usize>)> = vec![
            (
                "matmul_lhs",
                Box::new(|t, x| {
                    let b = t.constant(b_mat.clone(), &[3, 2]);
                    let c = t.matmul(x, b)?;
                    weighted_sum(t, c, &w)
                }),
                sample(6, -2.0, 2.0),
                vec![2, 3],
            ),
            (
                "matmul_rhs",
                Box::new(|t, x| {
                    let a = t.constant(a_mat.clone(), &[2, 3]);
                    let c = t.matmul(a, x)?;
                    weighted_sum(t, c, &w)
                }),
                sample(6, -2.0, 2.0),
                vec![3, 2],
            ),
            (
                "add_sub_mul",
                Box::new(|t, x| {
                    let o = t.constant(other.clone(), &[6]);
                    let a = t.add(x, o)?;
                    let b = t.sub(a, x)?;
                    let m = t.mul(b, x)?;
                    weighted_sum(t, m, &w)
                }),
                sample(6, -2.0, 2.0),
                vec![6],
            ),
            (
                "add_bias",
                Box::new(|t, x| {
                    let m = t.constant(b_mat.clone(), &[2, 3]);
                    let c = t.add_bias(m, x)?;
                    weighted_sum(t, c, &w)
                }),
                sample(3, -1.0, 1.0),
                vec![3],
            ),
            (
                "scale_add_scalar",
                Box::new(|t, x| {
                    let a = t.scale(x, -1.7);
                    let b = t.add_scalar(a, 0.3);
                    weighted_sum(t, b, &w)
                }),
                sample(6, -2.0, 2.0),
                vec![6],
            ),
            (
                "sigmoid",
                Box::new(|t, x| {
                    let y = t.sigmoid(x);
                    weighted_sum(t, y, &w)
                }),
                sample(6, -3.0, 3.0),
                vec![6],
            ),
            (
                "softplus",
                Box::new(|t, x| {
                    let y = t.softplus(x);
                    weighted_sum(t, y, &w)
                }),
                sample(6, -3.0, 3.0),
                vec![6],
            ),
            (
                "gelu",
                Box::new(|t, x| {
                    let y = t.gelu(x);
                    weighted_sum(t, y, &w)
                }),
                sample(6, -3.0, 3.0),
                vec![6],
            ),
            (
                "ln",
                Box::new(|t, x| {
                    let y = t.ln(x)?;
                    weighted_sum(t, y, &w)
                }),
                sample(6, 0.4, 3.0),
                vec![6],
            ),
            (
                "clamp",
                Box::new(|t, x| {
                    let y = t.clamp(x, -0.5, 0.5);
                    weighted_sum(t, y, &w)
                }),
                clamp_x,
                vec![6],
            ),
            (
                "softmax",
                Box::new(|t, x| {
                    let y = t.softmax(x, 1)?;
                    weighted_sum(t, y, &w)
                }),
                sample(6, -2.0, 2.0),
                vec![2, 3],
            ),
            (
                "masked_softmax",
                Box::new(|t, x| {
                    let y = t.masked_softmax_rows(x, &[true, false, true])?;
                    weighted_sum(t, y, &w)
                }),
                sample(6, -2.0, 2.0),
                vec![2, 3],
            ),
            (
                "layer_norm_x",
                Box::new(|t, x| {
                    let g = t.constant(gamma.clone(), &[3]);
                    let b = t.constant(beta.clone(), &[3]);
                    let y = t.layer_norm(x, g, b, 1e-5)?;
                    weighted_sum(t, y, &w)
                }),
                ln_x.clone(),
                vec![2, 3],
            ),
            (
                "layer_norm_gamma",
                Box::new(|t, g| {
                    let x = t.constant(ln_x.clone(), &[2, 3]);
                    let b = t.constant(beta.clone(), &[3]);
                    let y = t.layer_norm(x, g, b, 1e-5)?;
                    weighted_sum(t, y, &w)
                }),
                gamma.clone(),
                vec![3],
            ),
            (
                "layer_norm_beta",
                Box::new(|t, b| {
                    let x = t.constant(ln_x.clone(), &[2, 3]);
                    let g = t.constant(gamma.clone(), &[3]);
                    let y = t.layer_norm(x, g, b, 1e-5)?;
                    weighted_sum(t, y, &w)
                }),
                beta.clone(),
                vec![3],
            ),
            (
                "embedding",
                Box::new(|t, table| {
                    let y = t.embedding(table, &[2, 0, 2])?;
                    weighted_sum(t, y, &w)
                }),
                sample(6, -1.0, 1.0),
                vec![3, 2],
            ),
            (
                "row_slice_concat_transpose",
                Box::new(|t, x| {
                    let left = t.slice_cols(x, 0, 2)?; // [2,2]
                    let right = t.slice_cols(x, 2, 1)?; // [2,1]
                    let joined = t.concat_cols(&[right, left])?; // [2,3]
                    let tr = t.transpose(joined)?; // [3,2]
                    let r0 = t.row(tr, 0)?;
                    let r2 = t.row(tr, 2)?;
                    let stacked = t.concat_rows(&[r0, r2, r0])?; // [3,2]
                    weighted_sum(t, stacked, &w)
                }),
                sample(6, -2.0, 2.0),
                vec![2, 3],
            ),
            (
                "sum_mean",
                Box::new(|t, x| {
                    let s1 = t.sum(x);
                    let m1 = t.mean(x);
                    let both = t.add(s1, m1)?;
                    Ok(t.sum(both))
                }),
                sample(6, -2.0, 2.0),
                vec![6],
            ),
        ];

        for (name, build, x, shape) in checks {
            let err = grad_check(build.as_ref(), &x, &shape, 1e-5)
                .unwrap_or_else(|e| panic!("{name} (seed {seed}) failed to run: {e}"));
            assert!(err < 1e-4, "{name} seed {seed}: grad error {err}");
        }
    }
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        /// Softmax rows always sum to 1 within 1e-9, even at large magnitudes.
        #[test]
        fn softmax_rows_sum_to_one(
            values in proptest::collection::vec(-1e12f64..1e12, 6..=24)
        ) {
            let cols = 3;
            let rows = values.len() / cols;
            let flat = values[..rows * cols].to_vec();
            let mut t = Tape::new();
            let x = t.constant(flat, &[rows, cols]);
            let s = t.softmax(x, 1).unwrap();
            let out = t.data(s);
            for r in 0..rows {
                let sum: f64 = out[r * cols..(r + 1) * cols].iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-9);
                prop_assert!(out[r * cols..(r + 1) * cols].iter().all(|&p| p >= 0.0));
            }
        }
    }
}
