use super::*;
use crate::rng;
use rand::Rng;

fn tensor1(data: &[f64]) -> Tensor {
    Tensor::new(vec![data.len()], data.to_vec()).unwrap()
}

fn tensor2(rows: usize, cols: usize, data: &[f64]) -> Tensor {
    Tensor::new(vec![rows, cols], data.to_vec()).unwrap()
}

fn random_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    Tensor::uniform(shape, lo, hi, rng)
}

/// Independent sliding-window oracle for valid strided convolution.
fn oracle_conv_valid(x: &[f64], w: &[f64], stride: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let mut start = 0;
    while start + w.len() <= x.len() {
        out.push(w.iter().enumerate().map(|(j, wj)| x[start + j] * wj).sum());
        start += stride;
    }
    out
}

/// Independent oracle for same-padded convolution: pad (k-1)/2 zeros on each
/// side, then slide.
fn oracle_conv_same(x: &[f64], w: &[f64]) -> Vec<f64> {
    let pad = (w.len() - 1) / 2;
    let mut padded = vec![0.0; x.len() + 2 * pad];
    padded[pad..pad + x.len()].copy_from_slice(x);
    oracle_conv_valid(&padded, w, 1)
}

/// Independent scatter-add oracle for the transposed convolution.
fn oracle_transposed(h: &[f64], l: usize, m: usize, w: &[f64], k: usize, stride: usize) -> Vec<f64> {
    let mut out = vec![0.0; (l - 1) * stride + k];
    for i in 0..l {
        for j in 0..k {
            for r in 0..m {
                out[i * stride + j] += h[i * m + r] * w[j * m + r];
            }
        }
    }
    out
}

#[test]
fn matmul_identity_case() {
    let mut tape = Tape::new();
    let eye = tape
        .constant(&[2, 2], vec![1.0, 0.0, 0.0, 1.0])
        .unwrap();
    let a = tape.constant(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let out = tape.matmul(eye, a).unwrap();
    assert_eq!(tape.value(out), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn matmul_matches_dot_product_oracle() {
    // [[1,2]] · [[3],[4]] — oracle: plain dot product.
    let a = [1.0, 2.0];
    let b = [3.0, 4.0];
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();

    let mut tape = Tape::new();
    let av = tape.constant(&[1, 2], a.to_vec()).unwrap();
    let bv = tape.constant(&[2, 1], b.to_vec()).unwrap();
    let out = tape.matmul(av, bv).unwrap();
    assert_eq!(tape.value(out), &[dot]);
    assert_eq!(tape.value(out), &[11.0]);
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(&[2, 3], vec![0.0; 6]).unwrap();
    let b = tape.constant(&[2, 2], vec![0.0; 4]).unwrap();
    let err = tape.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
}

#[test]
fn matmul_backward_matches_finite_differences() {
    // d/da sum(a·b) at a=[[1,1]], b=[[2],[5]] → [[2,5]]
    let b = tensor2(2, 1, &[2.0, 5.0]);
    let report = grad_check(
        |tape, a| {
            let bv = tape.leaf(&b);
            let prod = tape.matmul(a, bv)?;
            Ok(tape.sum_all(prod))
        },
        &tensor2(1, 2, &[1.0, 1.0]),
        1e-6,
    )
    .unwrap();
    assert!(report.passed(), "max_rel_err = {}", report.max_rel_err);

    let mut tape = Tape::new();
    let a = tensor2(1, 2, &[1.0, 1.0]).with_grad();
    let av = tape.leaf(&a);
    let bv = tape.leaf(&b);
    let prod = tape.matmul(av, bv).unwrap();
    let loss = tape.sum_all(prod);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(av).unwrap(), &[2.0, 5.0]);
}

#[test]
fn conv1d_valid_matches_sliding_window_oracle() {
    let x = [1.0, 2.0, 3.0, 4.0, 5.0];

    let mut tape = Tape::new();
    let xv = tape.constant(&[5], x.to_vec()).unwrap();
    let w = tape.constant(&[2], vec![1.0, 1.0]).unwrap();
    let out = tape.conv1d_valid(xv, w, 2).unwrap();
    assert_eq!(tape.value(out), oracle_conv_valid(&x, &[1.0, 1.0], 2));
    assert_eq!(tape.value(out), &[3.0, 7.0]);

    let w2 = tape.constant(&[3], vec![1.0, 0.0, -1.0]).unwrap();
    let out2 = tape.conv1d_valid(xv, w2, 1).unwrap();
    assert_eq!(tape.value(out2), oracle_conv_valid(&x, &[1.0, 0.0, -1.0], 1));
    assert_eq!(tape.value(out2), &[-2.0, -2.0, -2.0]);
}

#[test]
fn conv1d_valid_length_formula() {
    let mut tape = Tape::new();
    let x = tape.constant(&[96], vec![0.0; 96]).unwrap();
    let w = tape.constant(&[16], vec![0.0; 16]).unwrap();
    let out = tape.conv1d_valid(x, w, 8).unwrap();
    assert_eq!(tape.shape(out), &[11]);
}

#[test]
fn conv1d_valid_rejects_kernel_longer_than_input() {
    let mut tape = Tape::new();
    let x = tape.constant(&[3], vec![0.0; 3]).unwrap();
    let w = tape.constant(&[5], vec![0.0; 5]).unwrap();
    let err = tape.conv1d_valid(x, w, 1).unwrap_err();
    assert!(err.to_string().contains("kernel longer than input"));
}

#[test]
fn conv1d_same_identity_kernel() {
    let mut tape = Tape::new();
    let x = tape.constant(&[3], vec![1.0, 1.0, 1.0]).unwrap();
    let w = tape.constant(&[3], vec![0.0, 1.0, 0.0]).unwrap();
    let out = tape.conv1d_same(x, w).unwrap();
    assert_eq!(tape.value(out), &[1.0, 1.0, 1.0]);
}

#[test]
fn conv1d_same_matches_padded_oracle() {
    let x = [1.0, 2.0, 3.0];
    let w = [1.0, 1.0, 1.0];
    let mut tape = Tape::new();
    let xv = tape.constant(&[3], x.to_vec()).unwrap();
    let wv = tape.constant(&[3], w.to_vec()).unwrap();
    let out = tape.conv1d_same(xv, wv).unwrap();
    assert_eq!(tape.value(out), oracle_conv_same(&x, &w));
    assert_eq!(tape.value(out), &[3.0, 6.0, 5.0]);
}

#[test]
fn conv1d_same_rejects_even_kernel() {
    let mut tape = Tape::new();
    let x = tape.constant(&[4], vec![0.0; 4]).unwrap();
    let w = tape.constant(&[4], vec![0.0; 4]).unwrap();
    assert!(matches!(
        tape.conv1d_same(x, w).unwrap_err(),
        TensorError::EvenKernel { .. }
    ));
}

#[test]
fn conv1d_same_preserves_length_for_any_odd_kernel() {
    let mut r = rng::stream(11, "conv-same-prop");
    for _ in 0..50 {
        let lin = r.gen_range(1..40usize);
        let k = 2 * r.gen_range(0..=lin.min(9) / 2) + 1;
        let mut tape = Tape::new();
        let x = tape
            .constant(&[lin], (0..lin).map(|i| i as f64).collect())
            .unwrap();
        let w = tape.constant(&[k], vec![1.0; k]).unwrap();
        let out = tape.conv1d_same(x, w).unwrap();
        assert_eq!(tape.shape(out), &[lin]);
    }
}

#[test]
fn transposed_conv1d_matches_scatter_oracle() {
    let mut tape = Tape::new();
    let h = tape.constant(&[2, 1], vec![1.0, 1.0]).unwrap();
    let w = tape.constant(&[2, 1], vec![1.0, 2.0]).unwrap();
    let out = tape.transposed_conv1d(h, w, 2).unwrap();
    assert_eq!(
        tape.value(out),
        oracle_transposed(&[1.0, 1.0], 2, 1, &[1.0, 2.0], 2, 2)
    );
    assert_eq!(tape.value(out), &[1.0, 2.0, 1.0, 2.0]);
}

#[test]
fn transposed_conv1d_zero_input_gives_zero_output() {
    let mut tape = Tape::new();
    let h = tape.constant(&[3, 2], vec![0.0; 6]).unwrap();
    let w = tape.constant(&[4, 2], vec![1.0; 8]).unwrap();
    let out = tape.transposed_conv1d(h, w, 2).unwrap();
    assert!(tape.value(out).iter().all(|&v| v == 0.0));
}

#[test]
fn transposed_conv1d_length_formula_recovers_input_length() {
    // L=11, K=16, stride=8 → (11-1)·8 + 16 = 96
    let mut tape = Tape::new();
    let h = tape.constant(&[11, 1], vec![0.0; 11]).unwrap();
    let w = tape.constant(&[16, 1], vec![0.0; 16]).unwrap();
    let out = tape.transposed_conv1d(h, w, 8).unwrap();
    assert_eq!(tape.shape(out), &[96]);
}

#[test]
fn conv_gradient_is_transposed_convolution_of_upstream() {
    // ∂/∂x of conv1d_valid(x,w,s) seeded with cotangent g equals
    // transposed_conv1d(g, w, s), checked on small random cases.
    let mut r = rng::stream(3, "conv-transpose-identity");
    for _ in 0..20 {
        let k = r.gen_range(1..4usize);
        let stride = r.gen_range(1..3usize);
        let lout = r.gen_range(1..5usize);
        let lin = (lout - 1) * stride + k;
        let x = random_tensor(&[lin], -2.0, 2.0, &mut r).with_grad();
        let w_data: Vec<f64> = (0..k).map(|_| r.gen_range(-2.0..2.0)).collect();
        let g_data: Vec<f64> = (0..lout).map(|_| r.gen_range(-2.0..2.0)).collect();

        // Autodiff route: weight the conv output by g and sum.
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let wv = tape.constant(&[k], w_data.clone()).unwrap();
        let gv = tape.constant(&[lout], g_data.clone()).unwrap();
        let conv = tape.conv1d_valid(xv, wv, stride).unwrap();
        let weighted = tape.mul(conv, gv).unwrap();
        let loss = tape.sum_all(weighted);
        tape.backward(loss).unwrap();
        let grad_x = tape.grad(xv).unwrap().to_vec();

        // Oracle route: transposed convolution of the cotangent.
        let mut tape2 = Tape::new();
        let h = tape2.constant(&[lout, 1], g_data).unwrap();
        let wt = tape2.constant(&[k, 1], w_data).unwrap();
        let expect = tape2.transposed_conv1d(h, wt, stride).unwrap();
        let expect = tape2.value(expect);

        assert_eq!(grad_x.len(), expect.len());
        for (a, b) in grad_x.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn softmax_symmetry_and_overflow() {
    let mut tape = Tape::new();
    let x = tape.constant(&[2], vec![0.0, 0.0]).unwrap();
    let out = tape.softmax(x, 0).unwrap();
    assert_eq!(tape.value(out), &[0.5, 0.5]);

    let big = tape.constant(&[2], vec![1000.0, 0.0]).unwrap();
    let out = tape.softmax(big, 0).unwrap();
    let v = tape.value(out);
    assert!(v.iter().all(|x| x.is_finite()));
    assert!((v[0] - 1.0).abs() < 1e-300 && v[1] < 1e-300);
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut r = rng::stream(5, "softmax-prop");
    for _ in 0..50 {
        let rows = r.gen_range(1..6usize);
        let cols = r.gen_range(1..6usize);
        let x = random_tensor(&[rows, cols], -30.0, 30.0, &mut r);
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        for axis in 0..2 {
            let out = tape.softmax(xv, axis).unwrap();
            let v = tape.value(out);
            let (outer, len, inner) = if axis == 0 {
                (1, rows, cols)
            } else {
                (rows, cols, 1)
            };
            for o in 0..outer {
                for ii in 0..inner {
                    let sum: f64 = (0..len).map(|i| v[(o * len + i) * inner + ii]).sum();
                    assert!((sum - 1.0).abs() < 1e-12, "sum {sum}");
                    assert!((0..len).all(|i| v[(o * len + i) * inner + ii] >= 0.0));
                }
            }
        }
    }
}

#[test]
fn glu_examples() {
    // a=[2], b=[0] → 2·σ(0) = 1
    let mut tape = Tape::new();
    let x = tape.constant(&[2], vec![2.0, 0.0]).unwrap();
    let out = tape.glu(x, 0).unwrap();
    assert_eq!(tape.value(out), &[1.0]);

    // saturated gate: b → +∞ passes a through
    let x = tape.constant(&[2], vec![1.75, 500.0]).unwrap();
    let out = tape.glu(x, 0).unwrap();
    assert!((tape.value(out)[0] - 1.75).abs() < 1e-12);

    // zero value half annihilates regardless of gate
    let x = tape.constant(&[4], vec![0.0, 0.0, -3.0, 9.0]).unwrap();
    let out = tape.glu(x, 0).unwrap();
    assert_eq!(tape.value(out), &[0.0, 0.0]);
}

#[test]
fn glu_rejects_odd_split_dim() {
    let mut tape = Tape::new();
    let x = tape.constant(&[3], vec![0.0; 3]).unwrap();
    assert!(matches!(
        tape.glu(x, 0).unwrap_err(),
        TensorError::OddSplitDim { .. }
    ));
}

#[test]
fn glu_output_bounded_by_value_half() {
    let mut r = rng::stream(9, "glu-prop");
    for _ in 0..100 {
        let half = r.gen_range(1..8usize);
        let x = random_tensor(&[2 * half], -5.0, 5.0, &mut r);
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let out = tape.glu(xv, 0).unwrap();
        for (i, &o) in tape.value(out).iter().enumerate() {
            assert!(o.abs() <= x.data()[i].abs() + 1e-15);
        }
    }
}

#[test]
fn backward_square_and_sum() {
    // loss = x² at x = 3 → grad 6
    let x = Tensor::scalar(3.0).with_grad();
    let mut tape = Tape::new();
    let xv = tape.leaf(&x);
    let sq = tape.mul(xv, xv).unwrap();
    tape.backward(sq).unwrap();
    assert_eq!(tape.grad(xv).unwrap(), &[6.0]);

    // loss = sum(x), x ∈ R^5 → grad = ones
    let x = tensor1(&[1.0, 2.0, 3.0, 4.0, 5.0]).with_grad();
    let mut tape = Tape::new();
    let xv = tape.leaf(&x);
    let loss = tape.sum_all(xv);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(xv).unwrap(), &[1.0; 5]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let x = tensor1(&[1.0, 2.0]).with_grad();
    let mut tape = Tape::new();
    let xv = tape.leaf(&x);
    assert!(matches!(
        tape.backward(xv).unwrap_err(),
        TensorError::NonScalarLoss { .. }
    ));
}

#[test]
fn backward_accumulates_until_zeroed() {
    let x = Tensor::scalar(2.0).with_grad();
    let mut tape = Tape::new();
    let xv = tape.leaf(&x);
    let sq = tape.mul(xv, xv).unwrap();
    tape.backward(sq).unwrap();
    tape.backward(sq).unwrap();
    assert_eq!(tape.grad(xv).unwrap(), &[8.0]); // 2 backward passes of 4.0
    tape.zero_grads();
    assert!(tape.grad(xv).is_none());
    tape.backward(sq).unwrap();
    assert_eq!(tape.grad(xv).unwrap(), &[4.0]);
}

#[test]
fn composite_conv_glu_graph_matches_finite_differences() {
    let mut r = rng::stream(21, "composite");
    let x = random_tensor(&[10], -2.0, 2.0, &mut r);
    let w_data: Vec<f64> = (0..3).map(|_| r.gen_range(-2.0..2.0)).collect();
    let report = grad_check(
        |tape, xv| {
            let w = tape.constant(&[3], w_data.clone())?;
            let conv = tape.conv1d_valid(xv, w, 1)?;
            let glu = tape.glu(conv, 0)?;
            Ok(tape.sum_all(glu))
        },
        &x,
        1e-4,
    )
    .unwrap();
    assert!(report.passed(), "max_rel_err = {}", report.max_rel_err);
}

#[test]
fn grad_check_sum_of_squares_is_tight() {
    let mut r = rng::stream(2, "sumsq");
    let x = random_tensor(&[8], -2.0, 2.0, &mut r);
    let report = grad_check(
        |tape, xv| {
            let sq = tape.mul(xv, xv)?;
            Ok(tape.sum_all(sq))
        },
        &x,
        1e-6,
    )
    .unwrap();
    assert!(report.max_rel_err < 1e-6, "{}", report.max_rel_err);
}

#[test]
fn grad_check_constant_function_reports_zero() {
    let x = tensor1(&[1.0, -2.0, 0.5]);
    let report = grad_check(|tape, _| Ok(tape.constant_scalar(42.0)), &x, 1e-12).unwrap();
    assert_eq!(report.max_rel_err, 0.0);
    assert!(report.passed());
}

#[test]
fn primitive_gradients_match_finite_differences() {
    // Ten randomized trials here; the acceptance suite runs one hundred.
    for trial in 0..10 {
        for (name, err) in grad_check::battery::run_all(trial, 1e-4) {
            assert!(err <= 1e-4, "{name} trial {trial}: rel err {err}");
        }
    }
}

#[test]
fn identical_inputs_produce_bit_identical_outputs() {
    let run = || {
        let mut r = rng::stream(77, "determinism");
        let x = random_tensor(&[4, 6], -2.0, 2.0, &mut r).with_grad();
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let s = tape.softmax(xv, 1).unwrap();
        let g = tape.glu(s, 1).unwrap();
        let loss = tape.mean_all(g);
        tape.backward(loss).unwrap();
        (tape.value(loss).to_vec(), tape.grad(xv).unwrap().to_vec())
    };
    let (a_loss, a_grad) = run();
    let (b_loss, b_grad) = run();
    assert_eq!(a_loss, b_loss);
    assert_eq!(a_grad, b_grad);
}

#[test]
fn constants_do_not_collect_gradients() {
    let mut tape = Tape::new();
    let c = tape.constant(&[2], vec![1.0, 2.0]).unwrap();
    let x = tensor1(&[3.0, 4.0]).with_grad();
    let xv = tape.leaf(&x);
    let prod = tape.mul(c, xv).unwrap();
    let loss = tape.sum_all(prod);
    tape.backward(loss).unwrap();
    assert!(tape.grad(c).is_none());
    assert_eq!(tape.grad(xv).unwrap(), &[1.0, 2.0]);
}
