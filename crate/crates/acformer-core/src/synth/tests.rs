use super::*;

#[test]
fn pure_sinusoid_matches_hand_values() {
    // a=1, b=1, l=4, ε=0 → sin(π·i/2) = [0, 1, 0, −1].
    let s = SyntheticSample::from_noise(1.0, 1.0, vec![0.0; 4]);
    let expect = [0.0, 1.0, 0.0, -1.0];
    for (v, e) in s.signal.iter().zip(expect) {
        assert!((v - e).abs() < 1e-12, "{v} vs {e}");
    }
}

#[test]
fn residual_variance_is_near_unit() {
    let samples = generate_synthetic(200, 200, 42);
    let all: Vec<f64> = samples.iter().flat_map(|s| s.residual.clone()).collect();
    let mean: f64 = all.iter().sum::<f64>() / all.len() as f64;
    let var: f64 = all.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / all.len() as f64;
    assert!((var - 1.0).abs() < 0.05, "residual variance {var}");
    // Amplitude and periodicity stay inside their documented ranges.
    for s in &samples {
        assert!((-3.0..3.0).contains(&s.amplitude));
        assert!((0.0..10.0).contains(&s.periodicity));
    }
}

#[test]
fn same_seed_same_dataset() {
    let a = generate_synthetic(10, 50, 7);
    let b = generate_synthetic(10, 50, 7);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.signal, y.signal);
        assert_eq!(x.residual, y.residual);
    }
    let c = generate_synthetic(10, 50, 8);
    assert_ne!(a[0].signal, c[0].signal);
}

#[test]
fn exactly_five_variants_are_constructible() {
    assert_eq!(AeVariant::all().len(), 5);
    // The projection is only studied in the conv/conv setting.
    assert!(AeVariant::new(CompartmentKind::Linear, true, CompartmentKind::Linear).is_err());
    assert!(AeVariant::new(CompartmentKind::Conv, true, CompartmentKind::Linear).is_err());
    assert!(AeVariant::new(CompartmentKind::Linear, true, CompartmentKind::Conv).is_err());
    let proj = AeVariant::new(CompartmentKind::Conv, true, CompartmentKind::Conv).unwrap();
    assert_eq!(proj.label(), "conv_linproj_conv");
    let labels: Vec<String> = AeVariant::all().iter().map(|v| v.label()).collect();
    assert_eq!(
        labels,
        ["lin_lin", "lin_conv", "conv_lin", "conv_conv", "conv_linproj_conv"]
    );
}

#[test]
fn conv_encoder_latent_follows_two_valid_convs() {
    // l=200 → (200−10)/2+1 = 96 → (96−10)/2+1 = 44, with 16 channels.
    let model = build_autoencoder(AeVariant::all()[3], 200, 1).unwrap();
    assert_eq!(model.latent_shape(), (16, 44));
}

#[test]
fn linear_encoder_halves_twice() {
    let model = build_autoencoder(AeVariant::all()[0], 200, 1).unwrap();
    assert_eq!(model.latent_shape(), (1, 50));
}

#[test]
fn indivisible_length_is_rejected() {
    assert!(matches!(
        build_autoencoder(AeVariant::all()[0], 202, 1),
        Err(LabError::IndivisibleLength(202))
    ));
}

#[test]
fn decoder_output_length_is_always_l() {
    let samples = generate_synthetic(2, 200, 3);
    for variant in AeVariant::all() {
        let model = build_autoencoder(variant, 200, 3).unwrap();
        let preds = predict_residuals(&model, &samples).unwrap();
        for p in preds {
            assert_eq!(p.len(), 200, "{}", variant.label());
        }
    }
}

#[test]
fn conv_conv_reconstruction_is_exact_in_length_without_trimming() {
    // (44−1)·2+10 = 96, (96−1)·2+10 = 200: the mirror is exact for l=200.
    assert_eq!((44 - 1) * 2 + 10, 96);
    assert_eq!((96 - 1) * 2 + 10, 200);
}

#[test]
fn mini_study_trains_and_improves() {
    // A scaled-down run: short sequences, few samples, two epochs. The
    // conv/conv variant must beat the trivial predict-zero baseline
    // (MAE ≈ E|ε| ≈ 0.80) on held-out data.
    let cfg = LabRunConfig {
        epochs: 2,
        batch_size: 32,
        n_train: 400,
        n_eval: 100,
        len: 40,
        ..LabRunConfig::default()
    };
    let all = generate_synthetic(cfg.n_train + cfg.n_eval, cfg.len, 5);
    let (train, eval) = all.split_at(cfg.n_train);
    let (outcome, _) = train_variant(AeVariant::all()[3], train, eval, &cfg, 5).unwrap();
    assert!(!outcome.diverged);
    assert!(outcome.mae < 0.80, "conv/conv mae {}", outcome.mae);
}

#[test]
fn results_csv_has_the_contract_columns() {
    let report = LabReport {
        seed: 7,
        outcomes: vec![VariantOutcome {
            variant: AeVariant::all()[0],
            mae: 0.75,
            mse: 0.69,
            param_count: 50450,
            diverged: false,
        }],
        traces: vec![],
    };
    let csv = results_csv(&[report]);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("variant,enc,proj,dec,mae,mse,seed"));
    assert_eq!(lines.next(), Some("lin_lin,lin,none,lin,0.75,0.69,7"));
}

#[test]
fn parallel_and_sequential_runs_agree() {
    let cfg = LabRunConfig {
        epochs: 1,
        batch_size: 32,
        n_train: 120,
        n_eval: 40,
        len: 40,
        ..LabRunConfig::default()
    };
    let seq = run_residual_experiment(3, &cfg, 1).unwrap();
    let par = run_residual_experiment(3, &cfg, 4).unwrap();
    assert_eq!(results_csv(&[seq]), results_csv(&[par]));
}

#[test]
fn parameter_counts_are_within_10x_of_the_geometric_mean() {
    let counts: Vec<f64> = AeVariant::all()
        .iter()
        .map(|&v| build_autoencoder(v, 200, 1).unwrap().param_count() as f64)
        .collect();
    let geomean = (counts.iter().map(|c| c.ln()).sum::<f64>() / counts.len() as f64).exp();
    for (v, c) in AeVariant::all().iter().zip(&counts) {
        let ratio = (c / geomean).max(geomean / c);
        assert!(
            ratio <= 10.0,
            "{}: {c} params vs geometric mean {geomean:.0} (ratio {ratio:.1})",
            v.label()
        );
    }
}
