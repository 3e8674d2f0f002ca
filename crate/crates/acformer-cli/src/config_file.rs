//! Flat `key = value` configuration files.
//!
//! UTF-8, one assignment per line, `#` starts a comment. Keys mirror the
//! model and training config fields in snake case; unknown keys are a hard
//! error so typos cannot silently fall back to defaults.

use acformer_core::data::SplitRatio;
use acformer_core::model::AcformerConfig;
use acformer_core::train::TrainConfig;
use serde::Serialize;

/// Fully resolved run configuration (defaults filled in).
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub model: AcformerConfig,
    pub train: TrainConfig,
    /// train:val:test proportions.
    pub split_ratio: (f64, f64, f64),
    /// True when `channels` was given explicitly (otherwise it is taken
    /// from the dataset).
    pub channels_pinned: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: AcformerConfig::default(),
            train: TrainConfig::default(),
            split_ratio: (0.6, 0.2, 0.2),
            channels_pinned: false,
        }
    }
}

impl RunConfig {
    pub fn split(&self) -> SplitRatio {
        SplitRatio {
            train: self.split_ratio.0,
            val: self.split_ratio.1,
            test: self.split_ratio.2,
        }
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(format!("{key}: expected true or false, got '{other}'")),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("{key}: cannot parse '{value}'"))
}

fn parse_ratio(value: &str) -> Result<(f64, f64, f64), String> {
    let parts: Vec<&str> = value.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("split_ratio: expected a:b:c, got '{value}'"));
    }
    let nums: Result<Vec<f64>, _> = parts.iter().map(|p| p.trim().parse::<f64>()).collect();
    let nums = nums.map_err(|_| format!("split_ratio: cannot parse '{value}'"))?;
    if nums.iter().any(|&v| v <= 0.0) {
        return Err("split_ratio: all parts must be positive".to_string());
    }
    Ok((nums[0], nums[1], nums[2]))
}

/// Parse file contents. Every malformed line and unknown key is reported.
pub fn parse(contents: &str) -> Result<RunConfig, Vec<String>> {
    let mut cfg = RunConfig::default();
    let mut errors = Vec::new();
    let mut train_seed_set = false;

    for (lineno, raw) in contents.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            errors.push(format!("line {}: expected key = value", lineno + 1));
            continue;
        };
        let key = key.trim();
        let value = value.trim();
        let result: Result<(), String> = (|| {
            match key {
                "input_len" => cfg.model.input_len = parse_num(key, value)?,
                "pred_len" => cfg.model.pred_len = parse_num(key, value)?,
                "channels" => {
                    cfg.model.channels = parse_num(key, value)?;
                    cfg.channels_pinned = true;
                }
                "kernel_len" => cfg.model.kernel_len = parse_num(key, value)?,
                "stride" => cfg.model.stride = parse_num(key, value)?,
                "heads" => cfg.model.heads = parse_num(key, value)?,
                "gate_kernel_len" => cfg.model.gate_kernel_len = parse_num(key, value)?,
                "layers" => cfg.model.layers = parse_num(key, value)?,
                "ff_hidden" => cfg.model.ff_hidden = Some(parse_num(key, value)?),
                "use_gate" => cfg.model.use_gate = parse_bool(key, value)?,
                "use_attention" => cfg.model.use_attention = parse_bool(key, value)?,
                "revin_affine" => cfg.model.revin_affine = parse_bool(key, value)?,
                "per_channel_projection" => {
                    cfg.model.per_channel_projection = parse_bool(key, value)?
                }
                "conv_bias" => cfg.model.conv_bias = parse_bool(key, value)?,
                "seed" => {
                    cfg.model.seed = parse_num(key, value)?;
                    if !train_seed_set {
                        cfg.train.seed = cfg.model.seed;
                    }
                }
                "epochs" => cfg.train.epochs = parse_num(key, value)?,
                "batch_size" => cfg.train.batch_size = parse_num(key, value)?,
                "lr0" => cfg.train.lr0 = parse_num(key, value)?,
                "patience" => cfg.train.patience = parse_num(key, value)?,
                "train_seed" => {
                    cfg.train.seed = parse_num(key, value)?;
                    train_seed_set = true;
                }
                "split_ratio" => cfg.split_ratio = parse_ratio(value)?,
                unknown => return Err(format!("unknown key '{unknown}'")),
            }
            Ok(())
        })();
        if let Err(e) = result {
            errors.push(format!("line {}: {e}", lineno + 1));
        }
    }

    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(errors)
    }
}

pub fn load(path: &std::path::Path) -> Result<RunConfig, Vec<String>> {
    let contents = std::fs::read_to_string(path)
        .map_err(|e| vec![format!("cannot read {}: {e}", path.display())])?;
    parse(&contents)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let cfg = parse("input_len = 48\nstride = 4\n# comment\nepochs=5\n").unwrap();
        assert_eq!(cfg.model.input_len, 48);
        assert_eq!(cfg.model.stride, 4);
        assert_eq!(cfg.train.epochs, 5);
        assert_eq!(cfg.model.kernel_len, 16); // default
        assert!(!cfg.channels_pinned);
    }

    #[test]
    fn unknown_keys_are_hard_errors() {
        let errs = parse("input_len = 48\nlearning_rate = 0.01\n").unwrap_err();
        assert_eq!(errs.len(), 1);
        assert!(errs[0].contains("unknown key 'learning_rate'"));
    }

    #[test]
    fn every_bad_line_is_reported() {
        let errs = parse("input_len = soup\nnope\nsplit_ratio = 1:2\n").unwrap_err();
        assert_eq!(errs.len(), 3);
    }

    #[test]
    fn seed_flows_to_train_unless_pinned() {
        let cfg = parse("seed = 42\n").unwrap();
        assert_eq!(cfg.train.seed, 42);
        let cfg = parse("seed = 42\ntrain_seed = 7\n").unwrap();
        assert_eq!(cfg.train.seed, 7);
        let cfg = parse("train_seed = 7\nseed = 42\n").unwrap();
        assert_eq!((cfg.model.seed, cfg.train.seed), (42, 7));
    }

    #[test]
    fn split_ratio_parses() {
        let cfg = parse("split_ratio = 7:1:2\n").unwrap();
        assert_eq!(cfg.split_ratio, (7.0, 1.0, 2.0));
    }
}
