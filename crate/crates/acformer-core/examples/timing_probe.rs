use acformer_core::data::{chronological_split, ett_like_series, standardize, window_batches, SplitRatio};
use acformer_core::model::{apply_tape_grads, bind, forward, mae_loss, AcformerConfig, ModelParams, Phase};
use acformer_core::synth::{generate_synthetic, train_variant, AeVariant, LabRunConfig};
use acformer_core::tensor::Tape;
use acformer_core::train::{adam_step, AdamState};
use std::time::Instant;

fn main() {
    // Desk-scale model batch timing.
    let cfg = AcformerConfig { channels: 7, seed: 1, ..AcformerConfig::default() };
    let ds = ett_like_series(2000, 1);
    let split = chronological_split(&ds, SplitRatio::ETT, 96, 96).unwrap();
    let std = standardize(&ds, &split);
    let mut params = ModelParams::init(&cfg);
    let mut adam = AdamState::new();
    let batches: Vec<_> = window_batches(&std, split.train_segment(), 96, 96, 32, false, 0).unwrap().take(10).collect();

    let t0 = Instant::now();
    for b in &batches {
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &params).unwrap();
        let out = forward(&mut tape, &bound, &cfg, &b.inputs, Phase::Train).unwrap();
        let loss = mae_loss(&mut tape, out.prediction, &b.labels).unwrap();
        tape.backward(loss).unwrap();
        apply_tape_grads(&tape, &bound, &mut params);
        drop(tape);
        adam_step(&mut params, &mut adam, 1e-3).unwrap();
        params.zero_grad();
    }
    let per_batch = t0.elapsed().as_secs_f64() / batches.len() as f64;
    println!("model train batch (B=32): {:.1} ms -> 10 epochs x 321 batches ~ {:.1} min", per_batch*1e3, per_batch*3210.0/60.0);

    // Eval-only batch.
    let t0 = Instant::now();
    for b in &batches {
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &params).unwrap();
        let _ = forward(&mut tape, &bound, &cfg, &b.inputs, Phase::Eval).unwrap();
    }
    let per_eval = t0.elapsed().as_secs_f64() / batches.len() as f64;
    println!("model eval batch (B=32): {:.1} ms", per_eval*1e3);

    // Synth lab: time one conv/conv variant at reduced epochs, extrapolate.
    let lab = LabRunConfig { epochs: 1, ..LabRunConfig::default() };
    let all = generate_synthetic(lab.n_train + lab.n_eval, lab.len, 1);
    let (train, eval) = all.split_at(lab.n_train);
    let t0 = Instant::now();
    let (out, _) = train_variant(AeVariant::all()[3], train, eval, &lab, 1).unwrap();
    println!("conv/conv 1 epoch: {:.1} s -> 20 epochs ~ {:.1} min (mae after 1 epoch: {:.3})",
        t0.elapsed().as_secs_f64(), t0.elapsed().as_secs_f64()*20.0/60.0, out.mae);

    let t0 = Instant::now();
    let (out, _) = train_variant(AeVariant::all()[0], train, eval, &lab, 1).unwrap();
    println!("lin/lin 1 epoch: {:.1} s (mae {:.3})", t0.elapsed().as_secs_f64(), out.mae);
}
