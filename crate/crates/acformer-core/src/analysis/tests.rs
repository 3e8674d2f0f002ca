use super::*;
use crate::data::SeriesDataset;
use crate::model::AcformerConfig;
use crate::rng;
use crate::tensor::Tensor;

fn tiny_cfg() -> AcformerConfig {
    AcformerConfig {
        input_len: 12,
        pred_len: 6,
        channels: 3,
        kernel_len: 4,
        stride: 4,
        heads: 2,
        layers: 1,
        seed: 7,
        ..AcformerConfig::default()
    }
}

fn random_sample(cfg: &AcformerConfig, seed: u64) -> Tensor {
    let mut r = rng::stream(seed, "analysis-sample");
    Tensor::uniform(&[cfg.input_len, cfg.channels], -2.0, 2.0, &mut r)
}

/// Zero weights except an identity projection, with P = S: the model is
/// exactly the identity map (RevIN denormalization undoes normalization).
fn identity_model() -> ModelParams {
    let cfg = AcformerConfig {
        pred_len: 12,
        ..tiny_cfg()
    };
    let mut params = ModelParams::init(&cfg);
    params.set_all_zero();
    let s = cfg.input_len;
    for i in 0..s {
        params.proj_w.data_mut()[i * s + i] = 1.0;
    }
    params
}

#[test]
fn conventional_rf_of_identity_model_is_scaled_one_hot() {
    let params = identity_model();
    let cfg = &params.config;
    let x = random_sample(cfg, 1);
    let g = conventional_receptive_field(&params, &x).unwrap();
    assert_eq!(g.len(), cfg.input_len);
    let center = cfg.pred_len / 2;
    for (s, &v) in g.iter().enumerate() {
        let expect = if s == center {
            1.0 / cfg.channels as f64
        } else {
            0.0
        };
        assert!((v - expect).abs() < 1e-12, "g[{s}] = {v}");
    }
}

#[test]
fn conventional_rf_of_zero_model_is_flat() {
    // The zero network predicts the per-channel instance mean, so
    // ∂F/∂x[s,c] = 1/(C·S) for every s, giving a flat field of 1/(C·S).
    let cfg = tiny_cfg();
    let mut params = ModelParams::init(&cfg);
    params.set_all_zero();
    let x = random_sample(&cfg, 2);
    let g = conventional_receptive_field(&params, &x).unwrap();
    let expect = 1.0 / (cfg.channels as f64 * cfg.input_len as f64);
    for &v in &g {
        assert!((v - expect).abs() < 1e-12, "{v} vs {expect}");
    }
}

#[test]
fn signed_irf_of_identity_model_is_diagonal_delta() {
    let params = identity_model();
    let cfg = &params.config;
    let x = random_sample(cfg, 3);
    let field = individual_receptive_field_signed(&params, &x).unwrap();
    assert_eq!(field.values.shape(), &[12, 3, 3]);
    assert!(!field.abs_aggregated);
    let center = cfg.pred_len / 2;
    for s in 0..cfg.input_len {
        for c_in in 0..cfg.channels {
            for c_out in 0..cfg.channels {
                let v = field.values.at(&[s, c_in, c_out]);
                let expect = if s == center && c_in == c_out { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-12, "IG[{s},{c_in},{c_out}] = {v}");
            }
        }
    }
}

#[test]
fn no_attention_irf_is_exactly_block_diagonal() {
    let cfg = AcformerConfig {
        use_attention: false,
        ..tiny_cfg()
    };
    let params = ModelParams::init(&cfg);
    let samples: Vec<Tensor> = (0..4).map(|i| random_sample(&cfg, 100 + i)).collect();
    let field = individual_receptive_field(&params, &samples).unwrap();
    assert!(field.abs_aggregated);
    assert_eq!(field.samples, 4);
    let mut diagonal_mass = 0.0;
    for s in 0..cfg.input_len {
        for c_in in 0..cfg.channels {
            for c_out in 0..cfg.channels {
                let v = field.values.at(&[s, c_in, c_out]);
                if c_in != c_out {
                    assert_eq!(v, 0.0, "off-diagonal leak at ({s},{c_in},{c_out})");
                } else {
                    diagonal_mass += v;
                }
            }
        }
    }
    assert!(diagonal_mass > 0.0);
}

#[test]
fn averaging_signed_irf_over_both_channel_axes_recovers_conventional_rf() {
    // With attention enabled and random weights, the two computations
    // differ only in summation order.
    let cfg = tiny_cfg();
    let params = ModelParams::init(&cfg);
    let x = random_sample(&cfg, 5);
    let field = individual_receptive_field_signed(&params, &x).unwrap();
    let g = conventional_receptive_field(&params, &x).unwrap();
    let c = cfg.channels as f64;
    for s in 0..cfg.input_len {
        let mut avg = 0.0;
        for c_in in 0..cfg.channels {
            for c_out in 0..cfg.channels {
                avg += field.values.at(&[s, c_in, c_out]);
            }
        }
        avg /= c * c;
        assert!((avg - g[s]).abs() < 1e-12, "step {s}: {avg} vs {}", g[s]);
    }
}

#[test]
fn minmax_examples() {
    assert_eq!(minmax_normalize(&[-1.0, 0.0, 1.0]), vec![0.0, 0.5, 1.0]);
    assert_eq!(minmax_normalize(&[3.0, 3.0, 3.0]), vec![0.0, 0.0, 0.0]);
    let out = minmax_normalize(&[2.0, -7.0, 0.1, 9.0]);
    assert!(out.iter().all(|&v| (0.0..=1.0).contains(&v)));
    assert!(out.contains(&0.0) && out.contains(&1.0));
}

#[test]
fn variance_attention_examples() {
    // Constant-in-time gradients have zero variance everywhere.
    let constant = GradientField {
        values: Tensor::full(&[5, 2, 2], 3.0),
        samples: 1,
        abs_aggregated: false,
    };
    let va = variance_attention(&constant);
    assert_eq!(va.values, vec![0.0; 4]);

    // A single pair with temporal variance dominates the normalized map.
    let mut values = Tensor::zeros(&[4, 2, 2]);
    for s in 0..4 {
        values.data_mut()[(s * 2) * 2 + 1] = s as f64; // pair (0, 1) varies
    }
    let va = variance_attention(&GradientField {
        values,
        samples: 1,
        abs_aggregated: false,
    });
    assert_eq!(va.values[1], 1.0);
    assert_eq!(va.values[0], 0.0);
    assert_eq!(va.values[2], 0.0);
    assert_eq!(va.values[3], 0.0);
    assert!(va.normalized);
}

#[test]
fn variance_attention_is_invariant_under_positive_affine_maps() {
    let cfg = tiny_cfg();
    let params = ModelParams::init(&cfg);
    let x = random_sample(&cfg, 8);
    let field = individual_receptive_field_signed(&params, &x).unwrap();
    let va = variance_attention(&field);

    let mut scaled = field.clone();
    for v in scaled.values.data_mut() {
        *v = 2.5 * *v + 7.0;
    }
    let va_scaled = variance_attention(&scaled);
    for (a, b) in va.values.iter().zip(&va_scaled.values) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

#[test]
fn attention_dump_rows_average_to_simplex() {
    let cfg = tiny_cfg();
    let params = ModelParams::init(&cfg);
    let mut r = rng::stream(4, "attn-batch");
    let batch = Tensor::uniform(&[3, cfg.input_len, cfg.channels], -1.0, 1.0, &mut r);
    let dump = attention_map_dump(&params, &batch).unwrap();
    assert_eq!(dump.len(), cfg.layers);
    assert_eq!(dump[0].len(), cfg.heads);
    for layer in &dump {
        for grid in layer {
            for row in 0..cfg.channels {
                let sum: f64 = grid[row * cfg.channels..(row + 1) * cfg.channels]
                    .iter()
                    .sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }
    // Deterministic under fixed weights and batch.
    let again = attention_map_dump(&params, &batch).unwrap();
    assert_eq!(dump, again);
}

#[test]
fn attention_dump_single_channel_is_one() {
    let cfg = AcformerConfig {
        channels: 1,
        ..tiny_cfg()
    };
    let params = ModelParams::init(&cfg);
    let mut r = rng::stream(5, "attn-c1");
    let batch = Tensor::uniform(&[2, cfg.input_len, 1], -1.0, 1.0, &mut r);
    let dump = attention_map_dump(&params, &batch).unwrap();
    for layer in dump {
        for grid in layer {
            assert_eq!(grid, vec![1.0]);
        }
    }
}

#[test]
fn attention_dump_requires_attention() {
    let cfg = AcformerConfig {
        use_attention: false,
        ..tiny_cfg()
    };
    let params = ModelParams::init(&cfg);
    let batch = Tensor::zeros(&[1, cfg.input_len, cfg.channels]);
    assert!(matches!(
        attention_map_dump(&params, &batch),
        Err(AnalysisError::AttentionDisabled)
    ));
}

fn series_from_columns(cols: Vec<Vec<f64>>) -> SeriesDataset {
    let n = cols[0].len();
    let c = cols.len();
    let values = Tensor::from_fn(&[n, c], |i| cols[i % c][i / c]);
    SeriesDataset::from_parts(
        "test",
        values,
        (0..c).map(|i| format!("ch{i}")).collect(),
        (0..n).map(|r| format!("t{r}")).collect(),
    )
}

#[test]
fn channel_correlation_examples() {
    let ramp: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
    let neg: Vec<f64> = ramp.iter().map(|v| -v).collect();
    let constant = vec![2.0; 50];
    let ds = series_from_columns(vec![ramp.clone(), ramp.clone(), neg, constant]);
    let corr = channel_correlation(&ds);
    let c = 4;
    let at = |a: usize, b: usize| corr[a * c + b];
    assert!((at(0, 1) - 1.0).abs() < 1e-12); // identical channels
    assert!((at(0, 2) + 1.0).abs() < 1e-12); // negated channel
    assert_eq!(at(0, 3), 0.0); // constant correlates 0 by convention
    assert_eq!(at(3, 3), 1.0); // unit diagonal even for constants
    for a in 0..c {
        for b in 0..c {
            assert!((at(a, b) - at(b, a)).abs() < 1e-12, "symmetry");
        }
        assert_eq!(at(a, a), 1.0);
    }
}

#[test]
fn csv_shapes() {
    let field = GradientField {
        values: Tensor::zeros(&[2, 2, 2]),
        samples: 1,
        abs_aggregated: false,
    };
    let csv = ig_long_csv(&field);
    assert_eq!(csv.lines().count(), 1 + 8);
    assert_eq!(csv.lines().next(), Some("s,c_in,c_out,value"));

    let grid = grid_csv(&[1.0, 0.0, 0.0, 1.0], &["a".into(), "b".into()]);
    let mut lines = grid.lines();
    assert_eq!(lines.next(), Some("channel,a,b"));
    assert_eq!(lines.next(), Some("a,1,0"));
    assert_eq!(lines.next(), Some("b,0,1"));
}
