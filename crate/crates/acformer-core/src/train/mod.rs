//! Adam optimization with the halving schedule, early stopping on
//! validation MAE, and MSE/MAE evaluation on the standardized scale.


use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::time::Instant;
use thiserror::Error;

use crate::data::{window_batches, DataError, DatasetSplit, Segment, SeriesDataset};
use crate::model::{
    apply_tape_grads, bind, forward, mae_loss, update_running_stats, AcformerConfig, ModelParams,
    Phase,
};
use crate::rng;
use crate::tensor::{Tape, Tensor, TensorError};
use rand::Rng;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite gradient in parameter '{name}'")]
    NonFiniteGrad { name: String },
    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Training protocol parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            lr0: 0.001,
            patience: 3,
            seed: 0,
        }
    }
}

/// Learning rate for a 1-based epoch: lr0 · 0.5^(epoch−1).
pub fn lr_schedule(lr0: f64, epoch: usize) -> f64 {
    debug_assert!(epoch >= 1);
    lr0 * 0.5f64.powi(epoch as i32 - 1)
}

/// Adam moment buffers, addressed by parameter name.
#[derive(Debug, Default)]
pub struct AdamState {
    m: HashMap<String, Vec<f64>>,
    v: HashMap<String, Vec<f64>>,
    step: u64,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new() -> Self {
        AdamState::default()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update over named tensors. Tensors without an
/// accumulated gradient are treated as zero-gradient. Aborts on the first
/// non-finite gradient, naming the parameter.
pub fn adam_step_entries(
    entries: &mut [(String, &mut Tensor)],
    state: &mut AdamState,
    lr: f64,
) -> Result<(), TrainError> {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - BETA1.powi(t);
    let bc2 = 1.0 - BETA2.powi(t);
    for (name, tensor) in entries.iter_mut() {
        if !tensor.requires_grad {
            continue;
        }
        let n = tensor.numel();
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; n]);
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; n]);
        let grad = tensor.grad.clone().unwrap_or_else(|| vec![0.0; n]);
        for &g in &grad {
            if !g.is_finite() {
                return Err(TrainError::NonFiniteGrad { name: name.clone() });
            }
        }
        let data = tensor.data_mut();
        for i in 0..n {
            let g = grad[i];
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            data[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Adam update over a whole model.
pub fn adam_step(
    params: &mut ModelParams,
    state: &mut AdamState,
    lr: f64,
) -> Result<(), TrainError> {
    let mut entries = params.visit_mut();
    adam_step_entries(&mut entries, state, lr)
}

/// Early-stopping bookkeeping: stop once `patience` consecutive epochs fail
/// to improve on the best validation loss seen so far.
#[derive(Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    stale: usize,
}

#[derive(Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    pub fn observe(&mut self, val_loss: f64) -> StopDecision {
        if val_loss < self.best {
            self.best = val_loss;
            self.stale = 0;
            StopDecision::Improved
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mae: f64,
    pub val_mae: f64,
    pub lr: f64,
}

/// Serializable record of one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ReportConfig,
    pub config_hash: String,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub test: Option<Metrics>,
    pub wall_seconds: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportConfig {
    pub model: AcformerConfig,
    pub train: TrainConfig,
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Stable hash of the resolved configuration (hex of FNV-1a over its
/// canonical JSON).
pub fn config_hash(config: &ReportConfig) -> String {
    let mut resolved = config.clone();
    resolved.model.ff_hidden = Some(resolved.model.ff_width());
    let json = serde_json::to_string(&resolved).expect("config serializes");
    format!("{:016x}", fnv1a64(json.as_bytes()))
}

/// Accumulates element-wise squared and absolute error.
#[derive(Debug, Default, Clone, Copy)]
pub struct MetricAccum {
    sq: f64,
    abs: f64,
    count: usize,
}

impl MetricAccum {
    pub fn add(&mut self, prediction: &[f64], label: &[f64]) {
        debug_assert_eq!(prediction.len(), label.len());
        for (p, y) in prediction.iter().zip(label) {
            let d = p - y;
            self.sq += d * d;
            self.abs += d.abs();
        }
        self.count += prediction.len();
    }

    pub fn finish(&self) -> Metrics {
        Metrics {
            mse: self.sq / self.count as f64,
            mae: self.abs / self.count as f64,
        }
    }
}

/// Mean MSE/MAE over every window of a segment, on the scale of the data
/// passed in (the benchmark protocol evaluates on the standardized scale).
pub fn evaluate(
    params: &ModelParams,
    ds: &SeriesDataset,
    segment: Segment,
    batch_size: usize,
) -> Result<Metrics, TrainError> {
    let cfg = &params.config;
    let mut accum = MetricAccum::default();
    let batches = window_batches(ds, segment, cfg.input_len, cfg.pred_len, batch_size, false, 0)?;
    for batch in batches {
        let mut tape = Tape::new();
        let bound = bind(&mut tape, params)?;
        let out = forward(&mut tape, &bound, cfg, &batch.inputs, Phase::Eval)?;
        accum.add(tape.value(out.prediction), batch.labels.data());
    }
    Ok(accum.finish())
}

/// Train with MAE loss under the benchmark protocol: per-epoch halving
/// schedule, validation MAE after every epoch, weights restored from the
/// best validation epoch, early stop after `patience` stale epochs.
///
/// `ds` must already be standardized; metrics are on that scale.
pub fn fit(
    cfg: &AcformerConfig,
    ds: &SeriesDataset,
    split: &DatasetSplit,
    train_cfg: &TrainConfig,
) -> Result<(ModelParams, ExperimentReport), TrainError> {
    let start = Instant::now();
    let mut params = ModelParams::init(cfg);
    let mut adam = AdamState::new();
    let mut stopper = EarlyStopping::new(train_cfg.patience);
    let mut best_params = params.clone();
    let mut best_epoch = 0usize;
    let mut epochs = Vec::new();

    for epoch in 1..=train_cfg.epochs {
        let lr = lr_schedule(train_cfg.lr0, epoch);
        let shuffle_seed = rng::stream(train_cfg.seed, &format!("shuffle-epoch{epoch}")).gen();
        let batches = window_batches(
            ds,
            split.train_segment(),
            cfg.input_len,
            cfg.pred_len,
            train_cfg.batch_size,
            true,
            shuffle_seed,
        )?;

        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for (batch_idx, batch) in batches.enumerate() {
            let mut tape = Tape::new();
            let bound = bind(&mut tape, &params)?;
            let out = forward(&mut tape, &bound, cfg, &batch.inputs, Phase::Train)?;
            let loss = mae_loss(&mut tape, out.prediction, &batch.labels)?;
            let loss_value = tape.value(loss)[0];
            if !loss_value.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    batch: batch_idx,
                });
            }
            let b = batch.inputs.shape()[0];
            loss_sum += loss_value * b as f64;
            loss_count += b;

            tape.backward(loss)?;
            apply_tape_grads(&tape, &bound, &mut params);
            drop(tape);
            update_running_stats(&mut params, &out.batch_stats, out.bn_count);
            adam_step(&mut params, &mut adam, lr)?;
            params.zero_grad();
        }

        let val = evaluate(&params, ds, split.val_segment(), train_cfg.batch_size)?;
        epochs.push(EpochRecord {
            epoch,
            train_mae: loss_sum / loss_count as f64,
            val_mae: val.mae,
            lr,
        });
        match stopper.observe(val.mae) {
            StopDecision::Improved => {
                best_params = params.clone();
                best_epoch = epoch;
            }
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }

    let report = ExperimentReport {
        config: ReportConfig {
            model: cfg.clone(),
            train: train_cfg.clone(),
        },
        config_hash: config_hash(&ReportConfig {
            model: cfg.clone(),
            train: train_cfg.clone(),
        }),
        epochs,
        best_epoch,
        test: None,
        wall_seconds: start.elapsed().as_secs_f64(),
        seed: train_cfg.seed,
    };
    Ok((best_params, report))
}
