//! Synthetic residual-extraction study: can an autoencoder built from
//! linear or convolutional compartments recover the Gaussian residual of a
//! noisy sinusoid?
//!
//! Five variants are trained: the four encoder/decoder combinations of
//! {linear, conv}, plus conv/conv with a linear projection inserted between
//! encoder and decoder.

#[cfg(test)]
mod tests;

use crate::rng;
use crate::tensor::{ElemKind, Tape, Tensor, TensorError, Var};
use crate::train::{adam_step_entries, AdamState, TrainError};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("sequence length {0} must be divisible by 4")]
    IndivisibleLength(usize),
    #[error("a middle projection is only studied between a conv encoder and a conv decoder")]
    InvalidVariant,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// One synthetic sample: signal_i = a·sin(2π·i/l + b) + residual_i, a
/// full-length sinusoid with random amplitude and phase under Gaussian
/// noise.
#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub signal: Vec<f64>,
    pub residual: Vec<f64>,
    pub amplitude: f64,
    pub phase: f64,
}

impl SyntheticSample {
    /// Build a sample from explicit noise (the constructor the generator
    /// uses; tests pass zero noise to check the pure sinusoid).
    pub fn from_noise(amplitude: f64, phase: f64, noise: Vec<f64>) -> Self {
        let l = noise.len();
        let signal = noise
            .iter()
            .enumerate()
            .map(|(i, eps)| {
                amplitude * (2.0 * std::f64::consts::PI * i as f64 / l as f64 + phase).sin() + eps
            })
            .collect();
        SyntheticSample {
            signal,
            residual: noise,
            amplitude,
            phase,
        }
    }
}

pub const DEFAULT_LEN: usize = 200;
pub const DEFAULT_TRAIN: usize = 10_000;
pub const DEFAULT_EVAL: usize = 1_000;

/// n independent samples with amplitude a ~ U(−3,3), phase b ~ U(0,10)
/// radians, ε ~ N(0,1), drawn from the "synth" stream of `seed`.
pub fn generate_synthetic(n: usize, l: usize, seed: u64) -> Vec<SyntheticSample> {
    let mut r = rng::stream(seed, "synth");
    (0..n)
        .map(|_| {
            let amplitude = r.gen_range(-3.0..3.0);
            let phase = r.gen_range(0.0..10.0);
            let noise: Vec<f64> = (0..l).map(|_| StandardNormal.sample(&mut r)).collect();
            SyntheticSample::from_noise(amplitude, phase, noise)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompartmentKind {
    Linear,
    Conv,
}

impl CompartmentKind {
    fn label(self) -> &'static str {
        match self {
            CompartmentKind::Linear => "lin",
            CompartmentKind::Conv => "conv",
        }
    }
}

/// One of the five studied encoder/projection/decoder combinations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AeVariant {
    pub encoder: CompartmentKind,
    pub projection: bool,
    pub decoder: CompartmentKind,
}

impl AeVariant {
    pub fn new(
        encoder: CompartmentKind,
        projection: bool,
        decoder: CompartmentKind,
    ) -> Result<Self, LabError> {
        if projection
            && (encoder != CompartmentKind::Conv || decoder != CompartmentKind::Conv)
        {
            return Err(LabError::InvalidVariant);
        }
        Ok(AeVariant {
            encoder,
            projection,
            decoder,
        })
    }

    /// The study's five variants, in table order.
    pub fn all() -> [AeVariant; 5] {
        use CompartmentKind::*;
        [
            AeVariant { encoder: Linear, projection: false, decoder: Linear },
            AeVariant { encoder: Linear, projection: false, decoder: Conv },
            AeVariant { encoder: Conv, projection: false, decoder: Linear },
            AeVariant { encoder: Conv, projection: false, decoder: Conv },
            AeVariant { encoder: Conv, projection: true, decoder: Conv },
        ]
    }

    pub fn label(&self) -> String {
        if self.projection {
            format!("{}_linproj_{}", self.encoder.label(), self.decoder.label())
        } else {
            format!("{}_{}", self.encoder.label(), self.decoder.label())
        }
    }

    pub fn has_linear_compartment(&self) -> bool {
        self.encoder == CompartmentKind::Linear || self.decoder == CompartmentKind::Linear
    }
}

const CONV_KERNEL: usize = 10;
const CONV_STRIDE: usize = 2;
/// Channel growth per conv layer.
const CONV_FACTOR: usize = 4;

/// Padding that makes a stride-2 kernel-10 convolution halve the length
/// exactly (and its transpose double it).
const CONV_PAD: usize = (CONV_KERNEL - CONV_STRIDE) / 2;

fn conv_out(len: usize) -> usize {
    (len + 2 * CONV_PAD - CONV_KERNEL) / CONV_STRIDE + 1
}

struct TwoLayer {
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
}

fn init(shape: &[usize], fan_in: usize, r: &mut impl Rng) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::uniform(shape, -bound, bound, r).with_grad()
}

/// Autoencoder over sequences of length `l`. ReLU activates every layer
/// except the final decoder output (the residual target is signed).
pub struct LabModel {
    pub variant: AeVariant,
    len: usize,
    encoder: TwoLayer,
    projection: Option<(Tensor, Tensor)>,
    decoder: TwoLayer,
    latent_channels: usize,
    latent_len: usize,
}

/// Build one variant. Conv compartments: two layers, channels ×4 per
/// layer, kernel 10, stride 2, no padding. Linear compartments: two
/// sequence-axis layers halving (encoder) or doubling (decoder) the
/// length, channels fixed at 1; a multi-channel latent entering a linear
/// decoder is first averaged over channels.
pub fn build_autoencoder(variant: AeVariant, l: usize, seed: u64) -> Result<LabModel, LabError> {
    if l % 4 != 0 {
        return Err(LabError::IndivisibleLength(l));
    }
    let mut r = rng::stream(seed, &format!("lab-init-{}", variant.label()));
    let k = CONV_KERNEL;

    let (encoder, latent_channels, latent_len) = match variant.encoder {
        CompartmentKind::Conv => {
            let c1 = CONV_FACTOR;
            let c2 = CONV_FACTOR * CONV_FACTOR;
            let enc = TwoLayer {
                w1: init(&[c1, 1, k], k, &mut r),
                b1: init(&[c1], k, &mut r),
                w2: init(&[c2, c1, k], c1 * k, &mut r),
                b2: init(&[c2], c1 * k, &mut r),
            };
            (enc, c2, conv_out(conv_out(l)))
        }
        CompartmentKind::Linear => {
            let h1 = l / 2;
            let h2 = l / 4;
            let enc = TwoLayer {
                w1: init(&[h1, l], l, &mut r),
                b1: init(&[h1], l, &mut r),
                w2: init(&[h2, h1], h1, &mut r),
                b2: init(&[h2], h1, &mut r),
            };
            (enc, 1, h2)
        }
    };

    let projection = if variant.projection {
        Some((
            init(&[latent_len, latent_len], latent_len, &mut r),
            init(&[latent_len], latent_len, &mut r),
        ))
    } else {
        None
    };

    let decoder = match variant.decoder {
        CompartmentKind::Conv => {
            // Transposed convolutions: fan-in per output position is
            // out_channels·k (the usual convention for deconvolutions).
            let mid = CONV_FACTOR;
            TwoLayer {
                w1: init(&[latent_channels, mid, k], mid * k, &mut r),
                b1: init(&[mid], mid * k, &mut r),
                w2: init(&[mid, 1, k], k, &mut r),
                b2: init(&[1], k, &mut r),
            }
        }
        CompartmentKind::Linear => {
            // Channel-averaged latent of length `latent_len` back to l.
            let h = l / 2;
            TwoLayer {
                w1: init(&[h, latent_len], latent_len, &mut r),
                b1: init(&[h], latent_len, &mut r),
                w2: init(&[l, h], h, &mut r),
                b2: init(&[l], h, &mut r),
            }
        }
    };

    Ok(LabModel {
        variant,
        len: l,
        encoder,
        projection,
        decoder,
        latent_channels,
        latent_len,
    })
}

impl LabModel {
    pub fn latent_shape(&self) -> (usize, usize) {
        (self.latent_channels, self.latent_len)
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("enc.w1".to_string(), &self.encoder.w1),
            ("enc.b1".to_string(), &self.encoder.b1),
            ("enc.w2".to_string(), &self.encoder.w2),
            ("enc.b2".to_string(), &self.encoder.b2),
        ];
        if let Some((w, b)) = &self.projection {
            out.push(("proj.w".to_string(), w));
            out.push(("proj.b".to_string(), b));
        }
        out.push(("dec.w1".to_string(), &self.decoder.w1));
        out.push(("dec.b1".to_string(), &self.decoder.b1));
        out.push(("dec.w2".to_string(), &self.decoder.w2));
        out.push(("dec.b2".to_string(), &self.decoder.b2));
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![
            ("enc.w1".to_string(), &mut self.encoder.w1),
            ("enc.b1".to_string(), &mut self.encoder.b1),
            ("enc.w2".to_string(), &mut self.encoder.w2),
            ("enc.b2".to_string(), &mut self.encoder.b2),
        ];
        if let Some((w, b)) = &mut self.projection {
            out.push(("proj.w".to_string(), w));
            out.push(("proj.b".to_string(), b));
        }
        out.push(("dec.w1".to_string(), &mut self.decoder.w1));
        out.push(("dec.b1".to_string(), &mut self.decoder.b1));
        out.push(("dec.w2".to_string(), &mut self.decoder.w2));
        out.push(("dec.b2".to_string(), &mut self.decoder.b2));
        out
    }
}

struct BoundLab {
    pairs: Vec<(String, Var)>,
}

fn bind_lab(tape: &mut Tape, model: &LabModel) -> BoundLab {
    BoundLab {
        pairs: model
            .named_params()
            .into_iter()
            .map(|(name, t)| (name, tape.leaf(t)))
            .collect(),
    }
}

impl BoundLab {
    fn var(&self, name: &str) -> Var {
        self.pairs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .expect("bound parameter")
    }
}

/// Predicted residual for one sample (length-l vector on the tape).
fn lab_forward_sample(
    tape: &mut Tape,
    model: &LabModel,
    bound: &BoundLab,
    x: Var,
) -> Result<Var, TensorError> {
    let l = model.len;

    // Encoder.
    let latent = match model.variant.encoder {
        CompartmentKind::Conv => {
            let x2 = tape.reshape(x, vec![1, l])?;
            let x2 = pad_axis1(tape, x2, CONV_PAD)?;
            let c1 = tape.conv1d_mc(x2, bound.var("enc.w1"), CONV_STRIDE)?;
            let c1 = tape.bcast_cols(c1, bound.var("enc.b1"), ElemKind::Add)?;
            let c1 = tape.relu(c1);
            let c1 = pad_axis1(tape, c1, CONV_PAD)?;
            let c2 = tape.conv1d_mc(c1, bound.var("enc.w2"), CONV_STRIDE)?;
            let c2 = tape.bcast_cols(c2, bound.var("enc.b2"), ElemKind::Add)?;
            tape.relu(c2)
        }
        CompartmentKind::Linear => {
            let col = tape.reshape(x, vec![l, 1])?;
            let h1 = tape.matmul(bound.var("enc.w1"), col)?;
            let h1 = tape.bcast_cols(h1, bound.var("enc.b1"), ElemKind::Add)?;
            let h1 = tape.relu(h1);
            let h2 = tape.matmul(bound.var("enc.w2"), h1)?;
            let h2 = tape.bcast_cols(h2, bound.var("enc.b2"), ElemKind::Add)?;
            let h2 = tape.relu(h2);
            tape.reshape(h2, vec![1, model.latent_len])?
        }
    };

    // Optional middle projection: shared sequence-axis map per channel.
    // Purely linear — the probe asks whether hidden states tolerate a
    // linear manipulation, so no activation is applied here.
    let latent = if model.projection.is_some() {
        let p = tape.matmul_nt(latent, bound.var("proj.w"))?;
        tape.bcast_rows(p, bound.var("proj.b"), ElemKind::Add)?
    } else {
        latent
    };

    // Decoder (no activation on the final layer: residuals are signed).
    let decoded = match model.variant.decoder {
        CompartmentKind::Conv => {
            let t1 = tape.transposed_conv1d_mc(latent, bound.var("dec.w1"), CONV_STRIDE)?;
            let t1 = trim_axis1(tape, t1, CONV_PAD)?;
            let t1 = tape.bcast_cols(t1, bound.var("dec.b1"), ElemKind::Add)?;
            let t1 = tape.relu(t1);
            let t2 = tape.transposed_conv1d_mc(t1, bound.var("dec.w2"), CONV_STRIDE)?;
            let t2 = trim_axis1(tape, t2, CONV_PAD)?;
            let t2 = tape.bcast_cols(t2, bound.var("dec.b2"), ElemKind::Add)?;
            let out_len = tape.shape(t2)[1];
            let flat = tape.reshape(t2, vec![out_len])?;
            fit_length(tape, flat, l)?
        }
        CompartmentKind::Linear => {
            // Average a multi-channel latent down to one channel.
            let seq = if model.latent_channels > 1 {
                tape.mean_axis(latent, 0)?
            } else {
                tape.reshape(latent, vec![model.latent_len])?
            };
            let col = tape.reshape(seq, vec![model.latent_len, 1])?;
            let h = tape.matmul(bound.var("dec.w1"), col)?;
            let h = tape.bcast_cols(h, bound.var("dec.b1"), ElemKind::Add)?;
            let h = tape.relu(h);
            let y = tape.matmul(bound.var("dec.w2"), h)?;
            let y = tape.bcast_cols(y, bound.var("dec.b2"), ElemKind::Add)?;
            tape.reshape(y, vec![l])?
        }
    };
    Ok(decoded)
}


/// Zero-pad a cin×len tensor by `pad` on both sides of axis 1.
fn pad_axis1(tape: &mut Tape, x: Var, pad: usize) -> Result<Var, TensorError> {
    let cin = tape.shape(x)[0];
    let z = tape.constant(&[cin, pad], vec![0.0; cin * pad])?;
    tape.concat(&[z, x, z], 1)
}

/// Trim `pad` from both sides of axis 1.
fn trim_axis1(tape: &mut Tape, x: Var, pad: usize) -> Result<Var, TensorError> {
    let len = tape.shape(x)[1];
    tape.narrow(x, 1, pad, len - 2 * pad)
}

/// Centrally trim (or zero-pad) a length-n vector to exactly `l`.
fn fit_length(tape: &mut Tape, v: Var, l: usize) -> Result<Var, TensorError> {
    let n = tape.shape(v)[0];
    if n == l {
        Ok(v)
    } else if n > l {
        let start = (n - l) / 2;
        tape.narrow(v, 0, start, l)
    } else {
        let left = (l - n) / 2;
        let right = l - n - left;
        let lz = tape.constant(&[left], vec![0.0; left])?;
        let rz = tape.constant(&[right], vec![0.0; right])?;
        tape.concat(&[lz, v, rz], 0)
    }
}

/// Batched prediction (no gradients) of the residuals for `samples`.
pub fn predict_residuals(
    model: &LabModel,
    samples: &[SyntheticSample],
) -> Result<Vec<Vec<f64>>, LabError> {
    let mut tape = Tape::new();
    let bound = bind_lab(&mut tape, model);
    let mut out = Vec::with_capacity(samples.len());
    for s in samples {
        let x = tape.constant(&[model.len], s.signal.clone())?;
        let y = lab_forward_sample(&mut tape, model, &bound, x)?;
        out.push(tape.value(y).to_vec());
    }
    Ok(out)
}

/// Lab protocol: 20 passes over the training set, batches of 64, Adam at a
/// fixed 0.001.
#[derive(Debug, Clone)]
pub struct LabRunConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub n_train: usize,
    pub n_eval: usize,
    pub len: usize,
}

impl Default for LabRunConfig {
    fn default() -> Self {
        LabRunConfig {
            epochs: 20,
            batch_size: 64,
            lr: 0.001,
            n_train: DEFAULT_TRAIN,
            n_eval: DEFAULT_EVAL,
            len: DEFAULT_LEN,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VariantOutcome {
    pub variant: AeVariant,
    pub mae: f64,
    pub mse: f64,
    pub param_count: usize,
    pub diverged: bool,
}

/// A few predicted traces for plotting (the study's qualitative figure).
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub variant: String,
    pub sample: usize,
    pub index: usize,
    pub signal: f64,
    pub residual: f64,
    pub prediction: f64,
}

#[derive(Debug, Clone)]
pub struct LabReport {
    pub seed: u64,
    pub outcomes: Vec<VariantOutcome>,
    pub traces: Vec<TraceRow>,
}

/// Train one variant on MSE against the true residuals and evaluate
/// MAE/MSE on the held-out samples. A non-finite loss marks the variant
/// as diverged instead of erroring the whole study.
pub fn train_variant(
    variant: AeVariant,
    train: &[SyntheticSample],
    eval: &[SyntheticSample],
    cfg: &LabRunConfig,
    seed: u64,
) -> Result<(VariantOutcome, LabModel), LabError> {
    let mut model = build_autoencoder(variant, cfg.len, seed)?;
    let mut adam = AdamState::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut diverged = false;

    'training: for epoch in 1..=cfg.epochs {
        let mut r = rng::stream(seed, &format!("lab-shuffle-{}-{epoch}", variant.label()));
        order.shuffle(&mut r);
        for chunk in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let bound = bind_lab(&mut tape, &model);
            let mut preds = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let x = tape.constant(&[cfg.len], train[i].signal.clone())?;
                preds.push(lab_forward_sample(&mut tape, &model, &bound, x)?);
            }
            let pred = tape.stack(&preds, 0)?;
            let mut target = Vec::with_capacity(chunk.len() * cfg.len);
            for &i in chunk {
                target.extend_from_slice(&train[i].residual);
            }
            let target = tape.constant(&[chunk.len(), cfg.len], target)?;
            let diff = tape.sub(pred, target)?;
            let sq = tape.mul(diff, diff)?;
            let loss = tape.mean_all(sq);
            if !tape.value(loss)[0].is_finite() {
                diverged = true;
                break 'training;
            }
            tape.backward(loss)?;
            // bound.pairs and named_params_mut share the same order.
            let grads: Vec<Option<Vec<f64>>> = bound
                .pairs
                .iter()
                .map(|(_, v)| tape.grad(*v).map(|g| g.to_vec()))
                .collect();
            drop(tape);
            for ((_, t), g) in model.named_params_mut().iter_mut().zip(grads) {
                if let Some(g) = g {
                    t.accumulate_grad(&g);
                }
            }
            let mut entries = model.named_params_mut();
            adam_step_entries(&mut entries, &mut adam, cfg.lr)?;
            for (_, t) in model.named_params_mut() {
                t.zero_grad();
            }
        }
    }

    let (mae, mse) = if diverged {
        (f64::NAN, f64::NAN)
    } else {
        let preds = predict_residuals(&model, eval)?;
        let mut abs = 0.0;
        let mut sq = 0.0;
        let mut count = 0usize;
        for (pred, sample) in preds.iter().zip(eval) {
            for (p, y) in pred.iter().zip(&sample.residual) {
                let d = p - y;
                abs += d.abs();
                sq += d * d;
            }
            count += pred.len();
        }
        (abs / count as f64, sq / count as f64)
    };

    Ok((
        VariantOutcome {
            variant,
            mae,
            mse,
            param_count: model.param_count(),
            diverged,
        },
        model,
    ))
}

/// Run all five variants at one seed. `workers` caps the number of
/// variants trained concurrently (each variant is single-threaded and
/// fully deterministic, so the outcome is independent of `workers`).
pub fn run_residual_experiment(
    seed: u64,
    cfg: &LabRunConfig,
    workers: usize,
) -> Result<LabReport, LabError> {
    let all = generate_synthetic(cfg.n_train + cfg.n_eval, cfg.len, seed);
    let (train, eval) = all.split_at(cfg.n_train);
    let variants = AeVariant::all();

    let workers = workers.max(1).min(variants.len());
    let mut results: Vec<Result<(VariantOutcome, LabModel), LabError>> = Vec::new();
    for group in variants.chunks(workers) {
        let mut batch: Vec<_> = std::thread::scope(|scope| {
            let handles: Vec<_> = group
                .iter()
                .map(|&variant| scope.spawn(move || train_variant(variant, train, eval, cfg, seed)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("variant worker panicked"))
                .collect()
        });
        results.append(&mut batch);
    }

    let mut outcomes = Vec::with_capacity(variants.len());
    let mut traces = Vec::new();
    for slot in results {
        let (outcome, model) = slot?;
        if !outcome.diverged {
            let n_traces = eval.len().min(3);
            let preds = predict_residuals(&model, &eval[..n_traces])?;
            for (sample_idx, pred) in preds.iter().enumerate() {
                let s = &eval[sample_idx];
                for i in 0..cfg.len {
                    traces.push(TraceRow {
                        variant: outcome.variant.label(),
                        sample: sample_idx,
                        index: i,
                        signal: s.signal[i],
                        residual: s.residual[i],
                        prediction: pred[i],
                    });
                }
            }
        }
        outcomes.push(outcome);
    }
    Ok(LabReport {
        seed,
        outcomes,
        traces,
    })
}

/// The study's result table: `variant,enc,proj,dec,mae,mse,seed`, one row
/// per (variant, seed), in variant order then seed order.
pub fn results_csv(reports: &[LabReport]) -> String {
    let mut out = String::from("variant,enc,proj,dec,mae,mse,seed\n");
    for report in reports {
        for o in &report.outcomes {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                o.variant.label(),
                o.variant.encoder.label(),
                if o.variant.projection { "lin" } else { "none" },
                o.variant.decoder.label(),
                o.mae,
                o.mse,
                report.seed
            ));
        }
    }
    out
}

/// Per-variant prediction traces: `variant,sample,index,signal,residual,prediction`.
pub fn traces_csv(report: &LabReport) -> String {
    let mut out = String::from("variant,sample,index,signal,residual,prediction\n");
    for t in &report.traces {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            t.variant, t.sample, t.index, t.signal, t.residual, t.prediction
        ));
    }
    out
}
