use acformer_core::synth::*;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args[1].parse().unwrap();
    let batch: usize = args[2].parse().unwrap();
    let variant_idx: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(3);
    let mut cfg = LabRunConfig { epochs, batch_size: batch, ..LabRunConfig::default() };
    if let Ok(lr) = std::env::var("LAB_PROBE_LR") { cfg.lr = lr.parse().unwrap(); }
    let all = generate_synthetic(cfg.n_train + cfg.n_eval, cfg.len, 1);
    let (train, eval) = all.split_at(cfg.n_train);
    let t0 = Instant::now();
    let (out, _) = train_variant(AeVariant::all()[variant_idx], train, eval, &cfg, 1).unwrap();
    println!("{} epochs={epochs} batch={batch}: mae={:.4} mse={:.4} ({:.0}s)",
        out.variant.label(), out.mae, out.mse, t0.elapsed().as_secs_f64());
}
