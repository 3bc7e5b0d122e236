use super::{Tape, TensorError};
use crate::test_utils::{finite_diff_grad, max_rel_err, uniform_values};

// ── matmul ──────────────────────────────────────────────────────────────

#[test]
fn matmul_identity_left() {
    let mut tape = Tape::new();
    let eye = tape.leaf(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], vec![3, 3], false).unwrap();
    let b_data = vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
    let b = tape.leaf(b_data.clone(), vec![3, 2], false).unwrap();
    let c = tape.matmul(eye, b).unwrap();
    assert_eq!(tape.value(c), b_data.as_slice());
}

#[test]
fn matmul_identity_right() {
    let mut tape = Tape::new();
    let a = tape.leaf(vec![1.0, 2.0, 3.0, 4.0], vec![2, 2], false).unwrap();
    let eye = tape.leaf(vec![1.0, 0.0, 0.0, 1.0], vec![2, 2], false).unwrap();
    let c = tape.matmul(a, eye).unwrap();
    assert_eq!(tape.value(c), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn matmul_shape_mismatch() {
    let mut tape = Tape::<f32>::new();
    let a = tape.leaf(vec![0.0; 6], vec![2, 3], false).unwrap();
    let b = tape.leaf(vec![0.0; 8], vec![4, 2], false).unwrap();
    assert!(matches!(tape.matmul(a, b), Err(TensorError::Shape { .. })));
}

#[test]
fn matmul_gradients_match_finite_differences() {
    // random 4×5 · 5×3 against the central-difference oracle
    let a_data = uniform_values(11, 20, -2.0, 2.0);
    let b_data = uniform_values(12, 15, -2.0, 2.0);
    let weights = uniform_values(13, 12, -1.0, 1.0);

    let run = |av: &[f64], bv: &[f64]| -> (f64, Vec<f64>, Vec<f64>) {
        let mut tape = Tape::new();
        let a = tape.leaf(av.to_vec(), vec![4, 5], true).unwrap();
        let b = tape.leaf(bv.to_vec(), vec![5, 3], true).unwrap();
        let c = tape.matmul(a, b).unwrap();
        let w = tape.leaf(weights.clone(), vec![4, 3], false).unwrap();
        let prod = tape.mul(c, w).unwrap();
        let loss = tape.sum_all(prod);
        tape.backward(loss).unwrap();
        (
            tape.value(loss)[0],
            tape.grad(a).unwrap().to_vec(),
            tape.grad(b).unwrap().to_vec(),
        )
    };
    let (_, ga, gb) = run(&a_data, &b_data);

    let fa = finite_diff_grad(|v| run(v, &b_data).0, &a_data, 1e-5);
    let fb = finite_diff_grad(|v| run(&a_data, v).0, &b_data, 1e-5);
    assert!(max_rel_err(&ga, &fa, 1e-6) < 1e-5);
    assert!(max_rel_err(&gb, &fb, 1e-6) < 1e-5);
}

// ── silu ────────────────────────────────────────────────────────────────

#[test]
fn silu_known_values() {
    let mut tape = Tape::new();
    let x = tape.leaf(vec![0.0f64, 1.0], vec![1, 2], false).unwrap();
    let y = tape.silu(x);
    assert_eq!(tape.value(y)[0], 0.0);
    let sigma1 = 1.0 / (1.0 + (-1.0f64).exp());
    assert!((tape.value(y)[1] - sigma1).abs() < 1e-12);
    assert!((tape.value(y)[1] - 0.73106).abs() < 1e-5);
}

#[test]
fn silu_gradient_at_100_random_points() {
    let xs = uniform_values(21, 100, -2.0, 2.0);
    for &x0 in &xs {
        let f = |v: &[f64]| {
            let mut tape = Tape::new();
            let x = tape.leaf(v.to_vec(), vec![1, 1], true).unwrap();
            let y = tape.silu(x);
            tape.value(y)[0]
        };
        let mut tape = Tape::new();
        let x = tape.leaf(vec![x0], vec![1, 1], true).unwrap();
        let y = tape.silu(x);
        let loss = tape.sum_all(y);
        tape.backward(loss).unwrap();
        let analytic = tape.grad(x).unwrap().to_vec();
        let numeric = finite_diff_grad(f, &[x0], 1e-6);
        assert!(max_rel_err(&analytic, &numeric, 1e-6) < 1e-6, "silu grad off at x = {x0}");
    }
}

// ── layer_norm ──────────────────────────────────────────────────────────

#[test]
fn layer_norm_constant_row_collapses_to_beta() {
    let mut tape = Tape::new();
    let x = tape.leaf(vec![3.7f64; 8], vec![1, 8], false).unwrap();
    let gamma = tape.leaf(vec![1.0; 8], vec![8], false).unwrap();
    let beta = tape.leaf(vec![0.0; 8], vec![8], false).unwrap();
    let y = tape.layer_norm(x, gamma, beta, 1e-5).unwrap();
    for &v in tape.value(y) {
        assert!(v.abs() < 1e-9);
    }
}

#[test]
fn layer_norm_rows_have_zero_mean() {
    let mut tape = Tape::new();
    let data = uniform_values(31, 24, -2.0, 2.0);
    let x = tape.leaf(data, vec![3, 8], false).unwrap();
    let gamma = tape.leaf(vec![1.0; 8], vec![8], false).unwrap();
    let beta = tape.leaf(vec![0.0; 8], vec![8], false).unwrap();
    let y = tape.layer_norm(x, gamma, beta, 1e-5).unwrap();
    let out = tape.value(y);
    for r in 0..3 {
        let mean: f64 = out[r * 8..(r + 1) * 8].iter().sum::<f64>() / 8.0;
        assert!(mean.abs() < 1e-6);
    }
}

#[test]
fn layer_norm_gradient_check() {
    let x_data = uniform_values(32, 24, -2.0, 2.0);
    let g_data = uniform_values(33, 8, 0.5, 1.5);
    let b_data = uniform_values(34, 8, -0.5, 0.5);
    let weights = uniform_values(35, 24, -1.0, 1.0);

    let run = |xv: &[f64], gv: &[f64], bv: &[f64]| {
        let mut tape = Tape::new();
        let x = tape.leaf(xv.to_vec(), vec![3, 8], true).unwrap();
        let gamma = tape.leaf(gv.to_vec(), vec![8], true).unwrap();
        let beta = tape.leaf(bv.to_vec(), vec![8], true).unwrap();
        let y = tape.layer_norm(x, gamma, beta, 1e-5).unwrap();
        let w = tape.leaf(weights.clone(), vec![3, 8], false).unwrap();
        let prod = tape.mul(y, w).unwrap();
        let loss = tape.sum_all(prod);
        (tape, x, gamma, beta, loss)
    };

    let (mut tape, x, gamma, beta, loss) = run(&x_data, &g_data, &b_data);
    tape.backward(loss).unwrap();
    let (gx, gg, gb) = (
        tape.grad(x).unwrap().to_vec(),
        tape.grad(gamma).unwrap().to_vec(),
        tape.grad(beta).unwrap().to_vec(),
    );

    let value = |xv: &[f64], gv: &[f64], bv: &[f64]| {
        let (tape, _, _, _, loss) = run(xv, gv, bv);
        tape.value(loss)[0]
    };
    let fx = finite_diff_grad(|v| value(v, &g_data, &b_data), &x_data, 1e-5);
    let fg = finite_diff_grad(|v| value(&x_data, v, &b_data), &g_data, 1e-5);
    let fb = finite_diff_grad(|v| value(&x_data, &g_data, v), &b_data, 1e-5);
    assert!(max_rel_err(&gx, &fx, 1e-6) < 1e-4);
    assert!(max_rel_err(&gg, &fg, 1e-6) < 1e-4);
    assert!(max_rel_err(&gb, &fb, 1e-6) < 1e-4);
}

// ── softmax ─────────────────────────────────────────────────────────────

#[test]
fn softmax_symmetry() {
    let mut tape = Tape::new();
    let x = tape.leaf(vec![0.0f64, 0.0], vec![1, 2], false).unwrap();
    let y = tape.softmax(x).unwrap();
    assert_eq!(tape.value(y), &[0.5, 0.5]);
}

#[test]
fn softmax_extreme_logits_do_not_overflow() {
    let mut tape = Tape::new();
    let x = tape.leaf(vec![1000.0f64, 0.0], vec![1, 2], false).unwrap();
    let y = tape.softmax(x).unwrap();
    let out = tape.value(y);
    assert!((out[0] - 1.0).abs() < 1e-12);
    assert!(out[1].abs() < 1e-12);
    assert!(out.iter().all(|v| v.is_finite()));
}

#[test]
fn softmax_jacobian_matches_finite_differences() {
    let x_data = uniform_values(41, 5, -2.0, 2.0);
    for j in 0..5 {
        let mut onehot = vec![0.0; 5];
        onehot[j] = 1.0;
        // analytic row j of the Jacobian via backward on y[j]
        let mut tape = Tape::new();
        let x = tape.leaf(x_data.clone(), vec![1, 5], true).unwrap();
        let y = tape.softmax(x).unwrap();
        let w = tape.leaf(onehot, vec![1, 5], false).unwrap();
        let prod = tape.mul(y, w).unwrap();
        let loss = tape.sum_all(prod);
        tape.backward(loss).unwrap();
        let analytic = tape.grad(x).unwrap().to_vec();
        let numeric = finite_diff_grad(
            |v| {
                let mut tape = Tape::new();
                let x = tape.leaf(v.to_vec(), vec![1, 5], true).unwrap();
                let y = tape.softmax(x).unwrap();
                tape.value(y)[j]
            },
            &x_data,
            1e-5,
        );
        assert!(max_rel_err(&analytic, &numeric, 1e-6) < 1e-5);
    }
}

// ── mse_masked ──────────────────────────────────────────────────────────

#[test]
fn mse_masked_identity_is_zero() {
    let mut tape = Tape::new();
    let data = uniform_values(51, 12, -1.0, 1.0);
    let p = tape.leaf(data.clone(), vec![4, 3], true).unwrap();
    let t = tape.leaf(data, vec![4, 3], false).unwrap();
    let loss = tape.mse_masked(p, t, &[0, 2]).unwrap();
    assert_eq!(tape.value(loss)[0], 0.0);
}

#[test]
fn mse_masked_ignores_unmasked_rows() {
    let mut tape = Tape::new();
    // rows 0 and 2 masked; make row 1 wildly wrong
    let pred = vec![1.0f64, 2.0, 99.0, -99.0, 5.0, 6.0];
    let target = vec![1.0f64, 2.0, 0.0, 0.0, 5.0, 6.0];
    let p = tape.leaf(pred, vec![3, 2], true).unwrap();
    let t = tape.leaf(target, vec![3, 2], false).unwrap();
    let loss = tape.mse_masked(p, t, &[0, 2]).unwrap();
    assert_eq!(tape.value(loss)[0], 0.0);
    tape.backward(loss).unwrap();
    let g = tape.grad(p).unwrap();
    assert_eq!(&g[2..4], &[0.0, 0.0], "unmasked row must have exactly zero gradient");
}

#[test]
fn mse_masked_arithmetic() {
    let mut tape = Tape::new();
    let p = tape.leaf(vec![1.0f64, 3.0, 7.0], vec![3, 1], false).unwrap();
    let t = tape.leaf(vec![0.0f64, 0.0, 7.0], vec![3, 1], false).unwrap();
    let loss = tape.mse_masked(p, t, &[0, 1]).unwrap();
    assert_eq!(tape.value(loss)[0], 5.0); // (1 + 9) / 2
}

#[test]
fn mse_masked_empty_mask_is_error() {
    let mut tape = Tape::<f32>::new();
    let p = tape.leaf(vec![0.0; 4], vec![2, 2], false).unwrap();
    let t = tape.leaf(vec![0.0; 4], vec![2, 2], false).unwrap();
    assert!(matches!(tape.mse_masked(p, t, &[]), Err(TensorError::Arg { .. })));
}

// ── nll_loss ────────────────────────────────────────────────────────────

#[test]
fn nll_certain_prediction_is_zero() {
    let mut tape = Tape::new();
    // log p = 0 means p = 1 on the true class
    let lp = tape.leaf(vec![0.0f64, -50.0], vec![1, 2], false).unwrap();
    let loss = tape.nll_loss(lp, &[0]).unwrap();
    assert_eq!(tape.value(loss)[0], 0.0);
}

#[test]
fn nll_uniform_two_classes_is_ln2() {
    let mut tape = Tape::new();
    let logits = tape.leaf(vec![0.0f64, 0.0], vec![1, 2], false).unwrap();
    let lp = tape.log_softmax(logits).unwrap();
    let loss = tape.nll_loss(lp, &[1]).unwrap();
    assert!((tape.value(loss)[0] - std::f64::consts::LN_2).abs() < 1e-12);
    assert!((tape.value(loss)[0] - 0.6931).abs() < 1e-4);
}

#[test]
fn nll_label_out_of_range_is_error() {
    let mut tape = Tape::<f32>::new();
    let lp = tape.leaf(vec![0.0; 4], vec![2, 2], false).unwrap();
    assert!(matches!(tape.nll_loss(lp, &[0, 2]), Err(TensorError::Arg { .. })));
}

#[test]
fn nll_gradient_through_log_softmax() {
    let logits = uniform_values(61, 8, -2.0, 2.0);
    let labels = [1usize, 0, 1, 1];
    let run = |v: &[f64]| {
        let mut tape = Tape::new();
        let x = tape.leaf(v.to_vec(), vec![4, 2], true).unwrap();
        let lp = tape.log_softmax(x).unwrap();
        let loss = tape.nll_loss(lp, &labels).unwrap();
        (tape, x, loss)
    };
    let (mut tape, x, loss) = run(&logits);
    tape.backward(loss).unwrap();
    let analytic = tape.grad(x).unwrap().to_vec();
    let numeric = finite_diff_grad(|v| { let (t, _, l) = run(v); t.value(l)[0] }, &logits, 1e-5);
    assert!(max_rel_err(&analytic, &numeric, 1e-6) < 1e-5);
}

// ── backward semantics ──────────────────────────────────────────────────

#[test]
fn backward_of_sum_is_ones() {
    let mut tape = Tape::new();
    let x = tape.leaf(uniform_values(71, 6, -2.0, 2.0), vec![2, 3], true).unwrap();
    let loss = tape.sum_all(x);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0; 6]);
}

#[test]
fn gradient_accumulates_for_reused_values() {
    let mut tape = Tape::new();
    let x = tape.leaf(vec![1.5f64], vec![1, 1], true).unwrap();
    let y = tape.add(x, x).unwrap();
    let loss = tape.sum_all(y);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[2.0]);
}

#[test]
fn backward_twice_is_error() {
    let mut tape = Tape::new();
    let x = tape.leaf(vec![1.0f64], vec![1], true).unwrap();
    let loss = tape.sum_all(x);
    tape.backward(loss).unwrap();
    assert!(matches!(tape.backward(loss), Err(TensorError::TapeConsumed)));
}

#[test]
fn backward_non_scalar_root_is_error() {
    let mut tape = Tape::new();
    let x = tape.leaf(vec![1.0f64, 2.0], vec![1, 2], true).unwrap();
    assert!(matches!(tape.backward(x), Err(TensorError::Arg { .. })));
}

#[test]
fn forward_is_bitwise_deterministic() {
    let data = uniform_values(81, 20, -2.0, 2.0);
    let weights = uniform_values(82, 20, -1.0, 1.0);
    let run = || {
        let mut tape = Tape::new();
        let x = tape.leaf(data.clone(), vec![4, 5], true).unwrap();
        let xt = tape.transpose(x).unwrap();
        let m = tape.matmul(x, xt).unwrap();
        let s = tape.softmax(m).unwrap();
        let w = tape.leaf(weights[..16].to_vec(), vec![4, 4], false).unwrap();
        let p = tape.mul(s, w).unwrap();
        let l = tape.sum_all(p);
        tape.value(l)[0].to_bits()
    };
    assert_eq!(run(), run());
}

// ── structural ops ──────────────────────────────────────────────────────

#[test]
fn select_permute_concat_roundtrip_and_grads() {
    let x_data = uniform_values(91, 12, -2.0, 2.0);
    let run = |v: &[f64]| {
        let mut tape = Tape::new();
        let x = tape.leaf(v.to_vec(), vec![4, 3], true).unwrap();
        let top = tape.select_rows(x, &[0, 2]).unwrap();
        let bottom = tape.select_rows(x, &[1, 3]).unwrap();
        let stacked = tape.concat_rows(&[top, bottom]).unwrap();
        // rows are now [0, 2, 1, 3]; permute back to original order
        let restored = tape.permute_rows(stacked, &[0, 2, 1, 3]).unwrap();
        (tape, x, restored)
    };
    let (mut tape, x, restored) = run(&x_data);
    assert_eq!(tape.value(restored), x_data.as_slice());

    let weights = uniform_values(92, 12, -1.0, 1.0);
    let w = tape.leaf(weights.clone(), vec![4, 3], false).unwrap();
    let prod = tape.mul(restored, w).unwrap();
    let loss = tape.sum_all(prod);
    tape.backward(loss).unwrap();
    // the permutation chain is the identity, so the grad is just the weights
    assert_eq!(tape.grad(x).unwrap(), weights.as_slice());
}

#[test]
fn slice_and_concat_cols_grads_match_fd() {
    let x_data = uniform_values(93, 12, -2.0, 2.0);
    let weights = uniform_values(94, 12, -1.0, 1.0);
    let run = |v: &[f64]| {
        let mut tape = Tape::new();
        let x = tape.leaf(v.to_vec(), vec![3, 4], true).unwrap();
        let left = tape.slice_cols(x, 0, 2).unwrap();
        let right = tape.slice_cols(x, 2, 4).unwrap();
        let swapped = tape.concat_cols(&[right, left]).unwrap();
        let si = tape.silu(swapped);
        let w = tape.leaf(weights.clone(), vec![3, 4], false).unwrap();
        let prod = tape.mul(si, w).unwrap();
        let loss = tape.sum_all(prod);
        (tape, x, loss)
    };
    let (mut tape, x, loss) = run(&x_data);
    tape.backward(loss).unwrap();
    let analytic = tape.grad(x).unwrap().to_vec();
    let numeric = finite_diff_grad(|v| { let (t, _, l) = run(v); t.value(l)[0] }, &x_data, 1e-5);
    assert!(max_rel_err(&analytic, &numeric, 1e-6) < 1e-5);
}

#[test]
fn repeat_row_and_mean_rows_grads_match_fd() {
    let x_data = uniform_values(95, 4, -2.0, 2.0);
    let weights = uniform_values(96, 4, -1.0, 1.0);
    let run = |v: &[f64]| {
        let mut tape = Tape::new();
        let x = tape.leaf(v.to_vec(), vec![1, 4], true).unwrap();
        let rep = tape.repeat_row(x, 5).unwrap();
        let si = tape.silu(rep);
        let m = tape.mean_rows(si).unwrap();
        let w = tape.leaf(weights.clone(), vec![1, 4], false).unwrap();
        let prod = tape.mul(m, w).unwrap();
        let loss = tape.sum_all(prod);
        (tape, x, loss)
    };
    let (mut tape, x, loss) = run(&x_data);
    tape.backward(loss).unwrap();
    let analytic = tape.grad(x).unwrap().to_vec();
    let numeric = finite_diff_grad(|v| { let (t, _, l) = run(v); t.value(l)[0] }, &x_data, 1e-5);
    assert!(max_rel_err(&analytic, &numeric, 1e-6) < 1e-5);
}

#[test]
fn add_bias_and_scale_grads_match_fd() {
    let x_data = uniform_values(97, 6, -2.0, 2.0);
    let b_data = uniform_values(98, 3, -1.0, 1.0);
    let run = |xv: &[f64], bv: &[f64]| {
        let mut tape = Tape::new();
        let x = tape.leaf(xv.to_vec(), vec![2, 3], true).unwrap();
        let b = tape.leaf(bv.to_vec(), vec![3], true).unwrap();
        let y = tape.add_bias(x, b).unwrap();
        let z = tape.scale(y, 0.7);
        let loss = tape.sum_all(z);
        (tape, x, b, loss)
    };
    let (mut tape, x, b, loss) = run(&x_data, &b_data);
    tape.backward(loss).unwrap();
    let gx = tape.grad(x).unwrap().to_vec();
    let gb = tape.grad(b).unwrap().to_vec();
    let fx = finite_diff_grad(|v| { let (t, _, _, l) = run(v, &b_data); t.value(l)[0] }, &x_data, 1e-5);
    let fb = finite_diff_grad(|v| { let (t, _, _, l) = run(&x_data, v); t.value(l)[0] }, &b_data, 1e-5);
    assert!(max_rel_err(&gx, &fx, 1e-6) < 1e-5);
    assert!(max_rel_err(&gb, &fb, 1e-6) < 1e-5);
}

#[test]
fn frozen_leaves_get_no_gradient() {
    let mut tape = Tape::new();
    let x = tape.leaf(vec![1.0f64, 2.0], vec![1, 2], false).unwrap();
    let y = tape.silu(x);
    let loss = tape.sum_all(y);
    tape.backward(loss).unwrap();
    assert!(tape.grad(x).is_none());
}
