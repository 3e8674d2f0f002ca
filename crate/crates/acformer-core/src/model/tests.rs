use super::*;
use crate::rng;
use crate::tensor::{Tape, Tensor};
use rand::Rng;

fn tiny_cfg() -> AcformerConfig {
    AcformerConfig {
        input_len: 12,
        pred_len: 6,
        channels: 3,
        kernel_len: 4,
        stride: 4,
        heads: 2,
        seed: 5,
        ..AcformerConfig::default()
    }
}

fn random_batch(cfg: &AcformerConfig, batch: usize, seed: u64) -> Tensor {
    let mut r = rng::stream(seed, "model-test-data");
    Tensor::uniform(&[batch, cfg.input_len, cfg.channels], -2.0, 2.0, &mut r)
}

fn run_forward(params: &ModelParams, x: &Tensor, phase: Phase) -> (Tape, ForwardOutput) {
    let mut tape = Tape::new();
    let bound = bind(&mut tape, params).unwrap();
    let out = forward(&mut tape, &bound, &params.config, x, phase).unwrap();
    (tape, out)
}

#[test]
fn revin_constant_channel_normalizes_to_zeros_and_mean_is_kept() {
    let mut tape = Tape::new();
    // Channel 0 is the ramp 1,2,3; channel 1 is constant 4.
    let x = Tensor::new(vec![3, 2], vec![1.0, 4.0, 2.0, 4.0, 3.0, 4.0]).unwrap();
    let xv = tape.leaf(&x);
    let revin = revin_normalize(&mut tape, xv, None).unwrap();
    assert_eq!(tape.value(revin.mean), &[2.0, 4.0]);
    let norm = tape.value(revin.normalized);
    assert!(norm[1].abs() < 1e-12 && norm[3].abs() < 1e-12 && norm[5].abs() < 1e-12);
    // Normalized ramp has mean zero and unit variance.
    let ramp: Vec<f64> = [norm[0], norm[2], norm[4]].to_vec();
    let mean: f64 = ramp.iter().sum::<f64>() / 3.0;
    let var: f64 = ramp.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 3.0;
    assert!(mean.abs() < 1e-12);
    assert!((var - 1.0).abs() < 1e-8, "var = {var}");
}

#[test]
fn revin_round_trip_is_identity_within_1e10() {
    let mut r = rng::stream(1, "revin");
    let x = Tensor::uniform(&[16, 4], -5.0, 5.0, &mut r);
    let mut tape = Tape::new();
    let xv = tape.leaf(&x);
    let revin = revin_normalize(&mut tape, xv, None).unwrap();
    let back = revin_denormalize(&mut tape, revin.normalized, &revin, None).unwrap();
    for (a, b) in x.data().iter().zip(tape.value(back)) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn revin_round_trip_with_identity_affine() {
    let mut r = rng::stream(2, "revin-affine");
    let x = Tensor::uniform(&[8, 3], -1.0, 1.0, &mut r);
    let scale = Tensor::full(&[3], 1.0).with_grad();
    let shift = Tensor::zeros(&[3]).with_grad();
    let mut tape = Tape::new();
    let xv = tape.leaf(&x);
    let sv = tape.leaf(&scale);
    let bv = tape.leaf(&shift);
    let revin = revin_normalize(&mut tape, xv, Some((sv, bv))).unwrap();
    let back = revin_denormalize(&mut tape, revin.normalized, &revin, Some((sv, bv))).unwrap();
    for (a, b) in x.data().iter().zip(tape.value(back)) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn compress_latent_length_and_averaging_kernel() {
    // S=96, K=16, T=8 → L=11.
    let cfg = AcformerConfig {
        channels: 2,
        ..AcformerConfig::default()
    };
    assert_eq!(cfg.latent_len(), 11);

    // An averaging kernel over a constant channel reproduces the constant.
    let mut tape = Tape::new();
    let x = Tensor::full(&[96, 2], 3.5);
    let xv = tape.leaf(&x);
    let w = Tensor::full(&[16], 1.0 / 16.0);
    let wv = tape.leaf(&w);
    let rows = vec![wv];
    let out = shared_patch_compress(&mut tape, xv, &rows, None, 8).unwrap();
    assert_eq!(tape.shape(out), &[11, 1, 2]);
    for &v in tape.value(out) {
        assert!((v - 3.5).abs() < 1e-12);
    }
}

#[test]
fn compress_single_channel_matches_conv_oracle() {
    let mut tape = Tape::new();
    let x = Tensor::new(vec![5, 1], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    let xv = tape.leaf(&x);
    let w = Tensor::new(vec![2], vec![1.0, 1.0]).unwrap();
    let wv = tape.leaf(&w);
    let out = shared_patch_compress(&mut tape, xv, &[wv], None, 2).unwrap();
    assert_eq!(tape.shape(out), &[2, 1, 1]);
    assert_eq!(tape.value(out), &[3.0, 7.0]);
}

#[test]
fn block_preserves_shape_and_attention_rows_are_simplex() {
    let cfg = tiny_cfg();
    let params = ModelParams::init(&cfg);
    let x = random_batch(&cfg, 2, 9);
    let (tape, out) = run_forward(&params, &x, Phase::Train);
    assert_eq!(
        tape.shape(out.prediction),
        &[2, cfg.pred_len, cfg.channels]
    );
    assert_eq!(out.attention.len(), cfg.layers);
    for layer in &out.attention {
        assert_eq!(layer.len(), cfg.heads);
        for head in layer {
            assert_eq!(head.len(), 2); // one map per sample
            for a in head {
                assert_eq!(a.shape(), &[cfg.channels, cfg.channels]);
                for row in 0..cfg.channels {
                    let sum: f64 = (0..cfg.channels).map(|col| a.at(&[row, col])).sum();
                    assert!((sum - 1.0).abs() < 1e-12, "row sum {sum}");
                }
            }
        }
    }
}

#[test]
fn single_channel_attention_is_identity() {
    let cfg = AcformerConfig {
        channels: 1,
        ..tiny_cfg()
    };
    let params = ModelParams::init(&cfg);
    let x = random_batch(&cfg, 1, 3);
    let (_, out) = run_forward(&params, &x, Phase::Train);
    for layer in &out.attention {
        for head in layer {
            assert_eq!(head[0].data(), &[1.0]);
        }
    }
}

#[test]
fn zeroed_gate_annihilates_the_attention_branch() {
    // With gate weights and biases zero, GLU(G) = 0, so the block output
    // cannot depend on the value projection.
    let cfg = tiny_cfg();
    let mut a = ModelParams::init(&cfg);
    let mut b = ModelParams::init(&AcformerConfig { seed: 99, ..cfg.clone() });
    for p in [&mut a, &mut b] {
        for blk in &mut p.blocks {
            if let Some(w) = blk.gate_w.as_mut() {
                w.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
            if let Some(bias) = blk.gate_b.as_mut() {
                bias.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
    // Make everything except the value projections identical.
    for (blk_b, blk_a) in b.blocks.iter_mut().zip(&a.blocks) {
        blk_b.query_w = blk_a.query_w.clone();
        blk_b.query_b = blk_a.query_b.clone();
        blk_b.key_w = blk_a.key_w.clone();
        blk_b.key_b = blk_a.key_b.clone();
        blk_b.ffn_w1 = blk_a.ffn_w1.clone();
        blk_b.ffn_b1 = blk_a.ffn_b1.clone();
        blk_b.ffn_w2 = blk_a.ffn_w2.clone();
        blk_b.ffn_b2 = blk_a.ffn_b2.clone();
        blk_b.bn_scale = blk_a.bn_scale.clone();
        blk_b.bn_shift = blk_a.bn_shift.clone();
        assert_ne!(blk_b.value_w.data(), blk_a.value_w.data());
    }
    b.compress_w = a.compress_w.clone();
    b.compress_b = a.compress_b.clone();
    b.expand_w = a.expand_w.clone();
    b.proj_w = a.proj_w.clone();
    b.proj_b = a.proj_b.clone();

    let x = random_batch(&cfg, 1, 17);
    let (tape_a, out_a) = run_forward(&a, &x, Phase::Train);
    let (tape_b, out_b) = run_forward(&b, &x, Phase::Train);
    assert_eq!(
        tape_a.value(out_a.prediction),
        tape_b.value(out_b.prediction)
    );
}

#[test]
fn expansion_reconstructs_exact_input_length() {
    let cfg = AcformerConfig {
        channels: 2,
        ..AcformerConfig::default()
    };
    let params = ModelParams::init(&cfg);
    let mut tape = Tape::new();
    let bound = bind(&mut tape, &params).unwrap();
    let mut r = rng::stream(4, "expand");
    let h = Tensor::uniform(&[cfg.latent_len(), cfg.heads, 2], -1.0, 1.0, &mut r);
    let hv = tape.leaf(&h);
    let out = independent_patch_expand(&mut tape, hv, &bound.expand_kernels, cfg.stride).unwrap();
    assert_eq!(tape.shape(out), &[96, 2]);

    // Zero latents expand to zeros.
    let zero = Tensor::zeros(&[cfg.latent_len(), cfg.heads, 2]);
    let zv = tape.leaf(&zero);
    let out0 = independent_patch_expand(&mut tape, zv, &bound.expand_kernels, cfg.stride).unwrap();
    assert!(tape.value(out0).iter().all(|&v| v == 0.0));

    // Identical latents produce different outputs per channel because the
    // kernels are channel-specific.
    let same = Tensor::from_fn(&[cfg.latent_len(), cfg.heads, 2], |i| {
        if i % 2 == 0 {
            1.0
        } else {
            1.0
        }
    });
    let sv = tape.leaf(&same);
    let o = independent_patch_expand(&mut tape, sv, &bound.expand_kernels, cfg.stride).unwrap();
    let v = tape.value(o);
    let col0: Vec<f64> = (0..96).map(|i| v[i * 2]).collect();
    let col1: Vec<f64> = (0..96).map(|i| v[i * 2 + 1]).collect();
    assert_ne!(col0, col1);
}

#[test]
fn default_geometry_forward_has_contract_shape() {
    let cfg = AcformerConfig {
        channels: 7,
        layers: 1,
        ..AcformerConfig::default()
    };
    let params = ModelParams::init(&cfg);
    let x = random_batch(&cfg, 1, 12);
    let (tape, out) = run_forward(&params, &x, Phase::Eval);
    assert_eq!(tape.shape(out.prediction), &[1, 96, 7]);
}

#[test]
fn zero_network_predicts_the_instance_mean() {
    let cfg = tiny_cfg();
    let mut params = ModelParams::init(&cfg);
    params.set_all_zero();
    let x = random_batch(&cfg, 2, 8);
    let (tape, out) = run_forward(&params, &x, Phase::Train);
    let pred = tape.value(out.prediction);
    for b in 0..2 {
        for ch in 0..cfg.channels {
            let mean: f64 = (0..cfg.input_len)
                .map(|s| x.at(&[b, s, ch]))
                .sum::<f64>()
                / cfg.input_len as f64;
            for t in 0..cfg.pred_len {
                let v = pred[(b * cfg.pred_len + t) * cfg.channels + ch];
                assert!((v - mean).abs() < 1e-9, "{v} vs {mean}");
            }
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let cfg = tiny_cfg();
    let params = ModelParams::init(&cfg);
    let x = random_batch(&cfg, 3, 1);
    let (ta, oa) = run_forward(&params, &x, Phase::Train);
    let (tb, ob) = run_forward(&params, &x, Phase::Train);
    assert_eq!(ta.value(oa.prediction), tb.value(ob.prediction));
}

#[test]
fn mae_loss_examples() {
    let cfg = tiny_cfg();
    let params = ModelParams::init(&cfg);
    let x = random_batch(&cfg, 1, 2);
    let (mut tape, out) = run_forward(&params, &x, Phase::Eval);

    let y_equal = tape.tensor(out.prediction);
    let loss = mae_loss(&mut tape, out.prediction, &y_equal).unwrap();
    assert_eq!(tape.value(loss), &[0.0]);

    let mut y_off = y_equal.clone();
    y_off.data_mut().iter_mut().for_each(|v| *v += 1.0);
    let loss = mae_loss(&mut tape, out.prediction, &y_off).unwrap();
    assert!((tape.value(loss)[0] - 1.0).abs() < 1e-12);

    let bad = Tensor::zeros(&[1, 2, 2]);
    assert!(mae_loss(&mut tape, out.prediction, &bad).is_err());
}

#[test]
fn mae_gradient_is_sign_over_count() {
    // d mean|p - y| / dp = sign(p - y)/(P·C) away from ties.
    let mut r = rng::stream(6, "mae-grad");
    let p = Tensor::uniform(&[1, 4, 3], -1.0, 1.0, &mut r).with_grad();
    let y = Tensor::uniform(&[1, 4, 3], -1.0, 1.0, &mut r);
    let mut tape = Tape::new();
    let pv = tape.leaf(&p);
    let loss = mae_loss(&mut tape, pv, &y).unwrap();
    tape.backward(loss).unwrap();
    let g = tape.grad(pv).unwrap();
    for i in 0..12 {
        let expect = (p.data()[i] - y.data()[i]).signum() / 12.0;
        assert!((g[i] - expect).abs() < 1e-15);
    }
}

#[test]
fn no_attention_model_is_exactly_channel_separable() {
    let cfg = AcformerConfig {
        use_attention: false,
        ..tiny_cfg()
    };
    let params = ModelParams::init(&cfg);
    let mut x = random_batch(&cfg, 1, 44);
    x.requires_grad = true;

    for out_c in 0..cfg.channels {
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &params).unwrap();
        let out = forward(&mut tape, &bound, &cfg, &x, Phase::Eval).unwrap();
        let sample = tape.index_axis(out.prediction, 0, 0).unwrap();
        let row = tape.index_axis(sample, 0, cfg.pred_len / 2).unwrap();
        let scalar = tape.index_axis(row, 0, out_c).unwrap();
        tape.backward(scalar).unwrap();
        let g = tape.grad(out.input).unwrap();
        for s in 0..cfg.input_len {
            for in_c in 0..cfg.channels {
                let v = g[s * cfg.channels + in_c];
                if in_c != out_c {
                    assert_eq!(v, 0.0, "leak {out_c}<-{in_c} at step {s}");
                }
            }
        }
        // The diagonal must actually carry gradient.
        let diag: f64 = (0..cfg.input_len)
            .map(|s| g[s * cfg.channels + out_c].abs())
            .sum();
        assert!(diag > 0.0);
    }
}

/// Loss as a plain function of parameters and inputs, for finite-difference
/// probing (training phase so batch-norm statistics are exercised).
fn loss_value(params: &ModelParams, x: &Tensor, y: &Tensor) -> f64 {
    let mut tape = Tape::new();
    let bound = bind(&mut tape, params).unwrap();
    let out = forward(&mut tape, &bound, &params.config, x, Phase::Train).unwrap();
    let loss = mae_loss(&mut tape, out.prediction, y).unwrap();
    tape.value(loss)[0]
}

#[test]
fn end_to_end_gradients_match_finite_differences_spot_check() {
    const H: f64 = 1e-5;
    let cfg = tiny_cfg();
    let mut params = ModelParams::init(&cfg);
    let mut r = rng::stream(31, "e2e-grad");
    let mut x = Tensor::uniform(&[2, cfg.input_len, cfg.channels], -2.0, 2.0, &mut r);
    x.requires_grad = true;
    let y = Tensor::uniform(&[2, cfg.pred_len, cfg.channels], -2.0, 2.0, &mut r);

    let mut tape = Tape::new();
    let bound = bind(&mut tape, &params).unwrap();
    let out = forward(&mut tape, &bound, &cfg, &x, Phase::Train).unwrap();
    let loss = mae_loss(&mut tape, out.prediction, &y).unwrap();
    tape.backward(loss).unwrap();
    let input_grad = tape.grad(out.input).unwrap().to_vec();
    apply_tape_grads(&tape, &bound, &mut params);
    drop(tape);

    // A handful of parameter entries across every tensor.
    let snapshot = params.clone();
    let names: Vec<String> = snapshot.visit().iter().map(|(n, _)| n.clone()).collect();
    for (pi, name) in names.iter().enumerate() {
        if !snapshot.visit()[pi].1.requires_grad {
            continue;
        }
        let idx = pi % snapshot.visit()[pi].1.numel().max(1);
        let analytic = snapshot.visit()[pi]
            .1
            .grad
            .as_ref()
            .map(|g| g[idx])
            .unwrap_or(0.0);
        let mut probe = snapshot.clone();
        {
            let mut v = probe.visit_mut();
            v[pi].1.data_mut()[idx] += H;
        }
        let plus = loss_value(&probe, &x, &y);
        {
            let mut v = probe.visit_mut();
            v[pi].1.data_mut()[idx] -= 2.0 * H;
        }
        let minus = loss_value(&probe, &x, &y);
        let fd = (plus - minus) / (2.0 * H);
        let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1.0);
        assert!(rel < 1e-3, "{name}[{idx}]: ad {analytic} fd {fd}");
    }

    // A handful of input entries.
    let mut probe_x = x.clone();
    for i in (0..probe_x.numel()).step_by(7) {
        let orig = probe_x.data()[i];
        probe_x.data_mut()[i] = orig + H;
        let plus = loss_value(&params, &probe_x, &y);
        probe_x.data_mut()[i] = orig - H;
        let minus = loss_value(&params, &probe_x, &y);
        probe_x.data_mut()[i] = orig;
        let fd = (plus - minus) / (2.0 * H);
        let ad = input_grad[i];
        let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1.0);
        assert!(rel < 1e-3, "input[{i}]: ad {ad} fd {fd}");
    }
}

#[test]
fn running_stats_update_uses_momentum() {
    let cfg = tiny_cfg();
    let mut params = ModelParams::init(&cfg);
    let x = random_batch(&cfg, 4, 21);
    let (_, out) = run_forward(&params, &x, Phase::Train);
    assert_eq!(out.batch_stats.len(), cfg.layers);
    let before = params.blocks[0].bn_running_mean.data()[0];
    update_running_stats(&mut params, &out.batch_stats, out.bn_count);
    let after = params.blocks[0].bn_running_mean.data()[0];
    let batch_mean = out.batch_stats[0].0[0];
    assert!((after - (0.9 * before + 0.1 * batch_mean)).abs() < 1e-12);
}

#[test]
fn shape_chain_holds_over_randomized_valid_configs() {
    let mut r = rng::stream(99, "shape-chain");
    for _ in 0..25 {
        let stride = r.gen_range(1..5usize);
        let kernel = r.gen_range(1..6usize);
        let latent = r.gen_range(2..5usize);
        let cfg = AcformerConfig {
            input_len: (latent - 1) * stride + kernel,
            pred_len: r.gen_range(1..8usize),
            channels: r.gen_range(1..4usize),
            kernel_len: kernel,
            stride,
            heads: r.gen_range(1..3usize),
            gate_kernel_len: 2 * r.gen_range(0..3usize) + 1,
            layers: r.gen_range(1..3usize),
            seed: r.gen(),
            ..AcformerConfig::default()
        };
        cfg.validate().unwrap_or_else(|e| panic!("{e}: {cfg:?}"));
        assert_eq!(cfg.latent_len(), latent);
        let params = ModelParams::init(&cfg);
        let x = random_batch(&cfg, 2, r.gen());
        let (tape, out) = run_forward(&params, &x, Phase::Train);
        assert_eq!(
            tape.shape(out.prediction),
            &[2, cfg.pred_len, cfg.channels]
        );
    }
}
