use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Every violation found in a configuration, not just the first.
#[derive(Debug, Error)]
#[error("invalid configuration: {}", violations.join("; "))]
pub struct ConfigError {
    pub violations: Vec<String>,
}

/// Ablation variants of the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    None,
    /// Attention blocks run without the temporal gate.
    NoGate,
    /// Attention blocks are removed entirely; the model reduces to the
    /// compression/expansion autoencoder plus projection.
    NoAttention,
}

impl std::str::FromStr for Ablation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Ablation::None),
            "no-gate" => Ok(Ablation::NoGate),
            "no-attention" => Ok(Ablation::NoAttention),
            other => Err(format!(
                "unknown ablation '{other}' (expected none, no-gate, no-attention)"
            )),
        }
    }
}

/// Hyperparameters of the forecasting model.
///
/// The compressed length is `latent_len() = (input_len - kernel_len)/stride + 1`
/// and the expansion reconstructs exactly `input_len` samples, which is why
/// `(input_len - kernel_len)` must be divisible by `stride`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcformerConfig {
    /// Look-back window length (steps fed to the model).
    pub input_len: usize,
    /// Forecast horizon (steps predicted).
    pub pred_len: usize,
    /// Number of channels (variables) in the series.
    pub channels: usize,
    /// Compression kernel length.
    pub kernel_len: usize,
    /// Compression stride; also the expansion stride.
    pub stride: usize,
    /// Number of shared compression kernels; doubles as the attention
    /// head count.
    pub heads: usize,
    /// Temporal gate kernel length (odd).
    pub gate_kernel_len: usize,
    /// Number of stacked attention blocks.
    pub layers: usize,
    /// Feed-forward hidden width; defaults to 2·latent_len·heads.
    pub ff_hidden: Option<usize>,
    pub use_gate: bool,
    pub use_attention: bool,
    pub revin_affine: bool,
    /// One projection matrix per channel instead of a shared one.
    pub per_channel_projection: bool,
    /// Additive bias on the compression and gate convolutions.
    pub conv_bias: bool,
    pub seed: u64,
}

impl Default for AcformerConfig {
    fn default() -> Self {
        AcformerConfig {
            input_len: 96,
            pred_len: 96,
            channels: 1,
            kernel_len: 16,
            stride: 8,
            heads: 8,
            gate_kernel_len: 3,
            layers: 2,
            ff_hidden: None,
            use_gate: true,
            use_attention: true,
            revin_affine: false,
            per_channel_projection: false,
            conv_bias: true,
            seed: 0,
        }
    }
}

impl AcformerConfig {
    /// Compressed sequence length L = (S - K)/T + 1.
    pub fn latent_len(&self) -> usize {
        (self.input_len - self.kernel_len) / self.stride + 1
    }

    /// Resolved feed-forward width (default 2·L·M).
    pub fn ff_width(&self) -> usize {
        self.ff_hidden
            .unwrap_or(2 * self.latent_len() * self.heads)
    }

    pub fn apply_ablation(&mut self, ablation: Ablation) {
        match ablation {
            Ablation::None => {}
            Ablation::NoGate => self.use_gate = false,
            Ablation::NoAttention => self.use_attention = false,
        }
    }

    /// Check every structural invariant, reporting all violations at once.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut violations = Vec::new();
        if self.input_len < 2 {
            violations.push(format!("input_len must be at least 2, got {}", self.input_len));
        }
        if self.pred_len == 0 {
            violations.push("pred_len must be positive".to_string());
        }
        if self.channels == 0 {
            violations.push("channels must be positive".to_string());
        }
        if self.stride == 0 {
            violations.push("stride must be positive".to_string());
        }
        if self.kernel_len == 0 {
            violations.push("kernel_len must be positive".to_string());
        }
        if self.kernel_len > self.input_len {
            violations.push(format!(
                "kernel_len {} exceeds input_len {}",
                self.kernel_len, self.input_len
            ));
        } else if self.stride > 0 && (self.input_len - self.kernel_len) % self.stride != 0 {
            violations.push(format!(
                "(input_len - kernel_len) mod stride != 0 ({} - {} leaves remainder {} at stride {})",
                self.input_len,
                self.kernel_len,
                (self.input_len - self.kernel_len) % self.stride,
                self.stride
            ));
        } else if self.stride > 0 && self.latent_len() < 2 {
            violations.push(format!(
                "latent length {} must be at least 2",
                self.latent_len()
            ));
        }
        if self.gate_kernel_len % 2 == 0 {
            violations.push(format!(
                "gate kernel must be odd, got {}",
                self.gate_kernel_len
            ));
        }
        if self.heads == 0 {
            violations.push("heads must be at least 1".to_string());
        }
        if self.layers == 0 {
            violations.push("layers must be at least 1".to_string());
        }
        if self.ff_hidden == Some(0) {
            violations.push("ff_hidden must be positive when given".to_string());
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { violations })
        }
    }
}
