use acformer_core::synth::*;

fn main() {
    let cfg = LabRunConfig { epochs: 20, ..LabRunConfig::default() };
    let all = generate_synthetic(cfg.n_train + cfg.n_eval, cfg.len, 1);
    let (train, eval) = all.split_at(cfg.n_train);
    let (out, model) = train_variant(AeVariant::all()[3], train, eval, &cfg, 1).unwrap();
    println!("eval mae={:.4} mse={:.4}", out.mae, out.mse);

    // Train-set error (generalization check, first 1000 train samples).
    let preds = predict_residuals(&model, &train[..1000]).unwrap();
    let mut abs = 0.0; let mut sq = 0.0; let mut n = 0;
    for (p, s) in preds.iter().zip(&train[..1000]) {
        for (a, b) in p.iter().zip(&s.residual) { let d = a - b; abs += d.abs(); sq += d * d; n += 1; }
    }
    println!("train mae={:.4} mse={:.4}", abs / n as f64, sq / n as f64);

    // Error by position (edges vs interior) and by sample periodicity.
    let preds = predict_residuals(&model, eval).unwrap();
    let mut pos_abs = vec![0.0; cfg.len];
    for (p, s) in preds.iter().zip(eval) {
        for i in 0..cfg.len { pos_abs[i] += (p[i] - s.residual[i]).abs(); }
    }
    let n_eval = eval.len() as f64;
    let edge: f64 = (0..20).chain(180..200).map(|i| pos_abs[i]).sum::<f64>() / (40.0 * n_eval);
    let interior: f64 = (20..180).map(|i| pos_abs[i]).sum::<f64>() / (160.0 * n_eval);
    println!("edge mae={edge:.4} interior mae={interior:.4}");

    // MAE by periodicity quartile.
    let mut by_b: Vec<(f64, f64)> = preds.iter().zip(eval).map(|(p, s)| {
        let mae: f64 = p.iter().zip(&s.residual).map(|(a, b)| (a - b).abs()).sum::<f64>() / cfg.len as f64;
        (s.periodicity, mae)
    }).collect();
    by_b.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    for q in 0..4 {
        let chunk = &by_b[q * 250..(q + 1) * 250];
        let mae: f64 = chunk.iter().map(|(_, m)| m).sum::<f64>() / 250.0;
        println!("b in [{:.1},{:.1}]: mae={:.4}", chunk[0].0, chunk.last().unwrap().0, mae);
    }
    // And by amplitude magnitude.
    let mut by_a: Vec<(f64, f64)> = preds.iter().zip(eval).map(|(p, s)| {
        let mae: f64 = p.iter().zip(&s.residual).map(|(a, b)| (a - b).abs()).sum::<f64>() / cfg.len as f64;
        (s.amplitude.abs(), mae)
    }).collect();
    by_a.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    for q in 0..4 {
        let chunk = &by_a[q * 250..(q + 1) * 250];
        let mae: f64 = chunk.iter().map(|(_, m)| m).sum::<f64>() / 250.0;
        println!("|a| in [{:.2},{:.2}]: mae={:.4}", chunk[0].0, chunk.last().unwrap().0, mae);
    }
}
