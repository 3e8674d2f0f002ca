use std::fmt;
use std::path::Path;

use acformer_core::analysis::{
    attention_map_dump, channel_correlation, conventional_receptive_field, grid_csv, ig_long_csv,
    individual_receptive_field, individual_receptive_field_signed, variance_attention,
    AnalysisError,
};
use acformer_core::data::{
    chronological_split, load_csv, standardize, window_batches, DataError, SeriesDataset,
    SplitRatio,
};
use acformer_core::model::{checkpoint, Ablation, ModelParams};
use acformer_core::synth::{results_csv, run_residual_experiment, traces_csv, LabRunConfig};
use acformer_core::tensor::Tensor;
use acformer_core::train::{config_hash, evaluate, fit, Metrics, ReportConfig, TrainError};

use crate::config_file::{self, RunConfig};
use crate::manifest::RunManifest;

/// Errors grouped by exit code: configuration (1), data (2),
/// divergence (3).
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Diverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Diverged(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Data(m) | CliError::Diverged(m) => write!(f, "{m}"),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Data(d) => CliError::Data(d.to_string()),
            other => CliError::Diverged(other.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::AttentionDisabled => CliError::Config(e.to_string()),
            other => CliError::Diverged(other.to_string()),
        }
    }
}

fn io_err(what: &str, e: std::io::Error) -> CliError {
    CliError::Data(format!("{what}: {e}"))
}

/// Worker-thread cap: ACFORMER_THREADS bounds the machine's parallelism.
pub fn worker_cap() -> usize {
    let available = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    match std::env::var("ACFORMER_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => n.min(available),
            _ => available,
        },
        Err(_) => available,
    }
}

fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    config_file::load(path).map_err(|errs| CliError::Config(errs.join("; ")))
}

fn resolve_channels(cfg: &mut RunConfig, ds: &SeriesDataset) -> Result<(), CliError> {
    if cfg.channels_pinned {
        if cfg.model.channels != ds.channels() {
            return Err(CliError::Config(format!(
                "config pins channels = {} but {} has {} channels",
                cfg.model.channels,
                ds.name,
                ds.channels()
            )));
        }
    } else {
        cfg.model.channels = ds.channels();
    }
    cfg.model
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn write_report(
    out_dir: &Path,
    name: &str,
    value: &impl serde::Serialize,
) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(value).expect("report serializes");
    std::fs::write(out_dir.join(name), json + "\n").map_err(|e| io_err(name, e))
}

pub fn cmd_train(
    config_path: &Path,
    data_path: &Path,
    out_dir: &Path,
    seed: Option<u64>,
    ablation: Ablation,
) -> Result<(), CliError> {
    let mut cfg = load_config(config_path)?;
    if let Some(seed) = seed {
        cfg.model.seed = seed;
        cfg.train.seed = seed;
    }
    cfg.model.apply_ablation(ablation);

    let ds = load_csv(data_path)?;
    resolve_channels(&mut cfg, &ds)?;
    let split = chronological_split(&ds, cfg.split(), cfg.model.input_len, cfg.model.pred_len)?;
    let standardized = standardize(&ds, &split);

    let mut manifest = RunManifest::new("train", out_dir, cfg.model.seed);
    manifest.config_path = Some(config_path.display().to_string());
    manifest.data_path = Some(data_path.display().to_string());
    manifest.ablation = Some(format!("{ablation:?}").to_lowercase());
    manifest.resolved = Some(cfg.clone());
    manifest.write(out_dir).map_err(|e| io_err("manifest.json", e))?;

    let (best, mut report) = fit(&cfg.model, &standardized, &split, &cfg.train)?;
    let test = evaluate(&best, &standardized, split.test_segment(), cfg.train.batch_size)?;
    report.test = Some(test);

    checkpoint::save(&best, &out_dir.join("checkpoint.acfm"))
        .map_err(|e| CliError::Data(e.to_string()))?;
    write_report(out_dir, "report.json", &report)?;
    println!(
        "train: {} epochs run, best epoch {}, test mse={:.6} mae={:.6}",
        report.epochs.len(),
        report.best_epoch,
        test.mse,
        test.mae
    );
    Ok(())
}

fn parse_ratio_flag(ratio: &str) -> Result<SplitRatio, CliError> {
    let parts: Vec<&str> = ratio.split(':').collect();
    let nums: Option<Vec<f64>> = parts.iter().map(|p| p.trim().parse().ok()).collect();
    match nums {
        Some(ns) if ns.len() == 3 && ns.iter().all(|&v| v > 0.0) => Ok(SplitRatio {
            train: ns[0],
            val: ns[1],
            test: ns[2],
        }),
        _ => Err(CliError::Config(format!(
            "--split-ratio: expected a:b:c of positive numbers, got '{ratio}'"
        ))),
    }
}

pub fn cmd_eval(
    checkpoint_path: &Path,
    data_path: &Path,
    out_dir: &Path,
    ratio: &str,
    batch_size: usize,
) -> Result<(), CliError> {
    let params = checkpoint::load(checkpoint_path).map_err(|e| CliError::Data(e.to_string()))?;
    let ds = load_csv(data_path)?;
    if ds.channels() != params.config.channels {
        return Err(CliError::Config(format!(
            "checkpoint expects {} channels, {} has {}",
            params.config.channels,
            ds.name,
            ds.channels()
        )));
    }
    let ratio = parse_ratio_flag(ratio)?;
    let split = chronological_split(&ds, ratio, params.config.input_len, params.config.pred_len)?;
    let standardized = standardize(&ds, &split);

    let mut manifest = RunManifest::new("eval", out_dir, params.config.seed);
    manifest.checkpoint_path = Some(checkpoint_path.display().to_string());
    manifest.data_path = Some(data_path.display().to_string());
    manifest.write(out_dir).map_err(|e| io_err("manifest.json", e))?;

    let test = evaluate(&params, &standardized, split.test_segment(), batch_size)?;

    #[derive(serde::Serialize)]
    struct EvalReport {
        config_hash: String,
        test: Metrics,
    }
    let report = EvalReport {
        config_hash: config_hash(&ReportConfig {
            model: params.config.clone(),
            train: Default::default(),
        }),
        test,
    };
    write_report(out_dir, "eval_report.json", &report)?;
    println!("eval: test mse={:.6} mae={:.6}", test.mse, test.mae);
    Ok(())
}

pub fn cmd_synth(seed: u64, out_dir: &Path) -> Result<(), CliError> {
    let lab = LabRunConfig::default();
    let mut manifest = RunManifest::new("synth", out_dir, seed);
    manifest.extra = serde_json::json!({
        "epochs": lab.epochs,
        "batch_size": lab.batch_size,
        "lr": lab.lr,
        "n_train": lab.n_train,
        "n_eval": lab.n_eval,
        "len": lab.len,
    });
    manifest.write(out_dir).map_err(|e| io_err("manifest.json", e))?;

    let report = run_residual_experiment(seed, &lab, worker_cap())
        .map_err(|e| CliError::Diverged(e.to_string()))?;
    std::fs::write(out_dir.join("tables1_2.csv"), results_csv(&[report.clone()]))
        .map_err(|e| io_err("tables1_2.csv", e))?;
    std::fs::write(out_dir.join("traces.csv"), traces_csv(&report))
        .map_err(|e| io_err("traces.csv", e))?;

    let mut diverged = false;
    for o in &report.outcomes {
        println!(
            "synth: {} mae={:.4} mse={:.4} params={}{}",
            o.variant.label(),
            o.mae,
            o.mse,
            o.param_count,
            if o.diverged { " DIVERGED" } else { "" }
        );
        diverged |= o.diverged;
    }
    if diverged {
        return Err(CliError::Diverged(
            "one or more variants diverged; completed rows were written".to_string(),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum AnalyzeMode {
    /// Individual and conventional receptive fields.
    Rf,
    /// Variance attention from the individual receptive field.
    Va,
    /// Per-layer, per-head channel-wise attention grids.
    Attn,
    /// Ground-truth channel correlation of the series.
    Corr,
}

/// Evenly spaced S×C input windows from the test segment.
fn analysis_samples(
    ds: &SeriesDataset,
    params: &ModelParams,
    ratio: SplitRatio,
    count: usize,
) -> Result<Vec<Tensor>, CliError> {
    let cfg = &params.config;
    let split = chronological_split(ds, ratio, cfg.input_len, cfg.pred_len)?;
    let standardized = standardize(ds, &split);
    let segment = split.test_segment();
    let available = segment.len() - cfg.input_len - cfg.pred_len + 1;
    let count = count.min(available).max(1);
    let mut samples = Vec::with_capacity(count);
    let data = standardized.values.data();
    let c = ds.channels();
    for i in 0..count {
        let t = segment.start + if count == 1 { 0 } else { i * (available - 1) / (count - 1) };
        let window = data[t * c..(t + cfg.input_len) * c].to_vec();
        samples.push(Tensor::new(vec![cfg.input_len, c], window).expect("window geometry"));
    }
    Ok(samples)
}

pub fn cmd_analyze(
    checkpoint_path: Option<&Path>,
    data_path: &Path,
    mode: AnalyzeMode,
    out_dir: &Path,
    samples: usize,
    ratio: &str,
) -> Result<(), CliError> {
    let ds = load_csv(data_path)?;
    let ratio = parse_ratio_flag(ratio)?;

    let mut manifest = RunManifest::new("analyze", out_dir, 0);
    manifest.data_path = Some(data_path.display().to_string());
    manifest.checkpoint_path = checkpoint_path.map(|p| p.display().to_string());
    manifest.mode = Some(format!("{mode:?}").to_lowercase());
    manifest.extra = serde_json::json!({ "samples": samples });
    manifest.write(out_dir).map_err(|e| io_err("manifest.json", e))?;

    if mode == AnalyzeMode::Corr {
        let corr = channel_correlation(&ds);
        std::fs::write(
            out_dir.join("channel_correlation.csv"),
            grid_csv(&corr, &ds.columns),
        )
        .map_err(|e| io_err("channel_correlation.csv", e))?;
        println!("analyze: wrote channel_correlation.csv ({} channels)", ds.channels());
        return Ok(());
    }

    let checkpoint_path = checkpoint_path.ok_or_else(|| {
        CliError::Config(format!("--checkpoint is required for mode {mode:?}"))
    })?;
    let params = checkpoint::load(checkpoint_path).map_err(|e| CliError::Data(e.to_string()))?;
    if ds.channels() != params.config.channels {
        return Err(CliError::Config(format!(
            "checkpoint expects {} channels, {} has {}",
            params.config.channels,
            ds.name,
            ds.channels()
        )));
    }

    match mode {
        AnalyzeMode::Rf | AnalyzeMode::Va => {
            let windows = analysis_samples(&ds, &params, ratio, samples)?;
            let field = individual_receptive_field(&params, &windows)?;
            match mode {
                AnalyzeMode::Rf => {
                    std::fs::write(out_dir.join("ig_aggregated.csv"), ig_long_csv(&field))
                        .map_err(|e| io_err("ig_aggregated.csv", e))?;
                    let signed = individual_receptive_field_signed(&params, &windows[0])?;
                    std::fs::write(out_dir.join("ig_signed_sample0.csv"), ig_long_csv(&signed))
                        .map_err(|e| io_err("ig_signed_sample0.csv", e))?;
                    let g = conventional_receptive_field(&params, &windows[0])?;
                    let mut csv = String::from("s,value\n");
                    for (s, v) in g.iter().enumerate() {
                        csv.push_str(&format!("{s},{v}\n"));
                    }
                    std::fs::write(out_dir.join("rf_conventional.csv"), csv)
                        .map_err(|e| io_err("rf_conventional.csv", e))?;
                    println!("analyze: wrote receptive fields over {} samples", field.samples);
                }
                AnalyzeMode::Va => {
                    let va = variance_attention(&field);
                    std::fs::write(
                        out_dir.join("variance_attention.csv"),
                        grid_csv(&va.values, &ds.columns),
                    )
                    .map_err(|e| io_err("variance_attention.csv", e))?;
                    println!("analyze: wrote variance_attention.csv over {} samples", field.samples);
                }
                _ => unreachable!(),
            }
        }
        AnalyzeMode::Attn => {
            let split =
                chronological_split(&ds, ratio, params.config.input_len, params.config.pred_len)?;
            let standardized = standardize(&ds, &split);
            let batch = window_batches(
                &standardized,
                split.test_segment(),
                params.config.input_len,
                params.config.pred_len,
                32,
                false,
                0,
            )?
            .next()
            .expect("split guarantees at least one window");
            let dump = attention_map_dump(&params, &batch.inputs)?;
            for (layer, heads) in dump.iter().enumerate() {
                for (head, grid) in heads.iter().enumerate() {
                    let name = format!("attn_layer{layer}_head{head}.csv");
                    std::fs::write(out_dir.join(&name), grid_csv(grid, &ds.columns))
                        .map_err(|e| io_err(&name, e))?;
                }
            }
            println!(
                "analyze: wrote {} attention grids (batch of {})",
                dump.len() * dump[0].len(),
                batch.inputs.shape()[0]
            );
        }
        AnalyzeMode::Corr => unreachable!(),
    }
    Ok(())
}
