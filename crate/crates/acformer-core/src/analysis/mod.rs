//! Gradient-based interpretability: conventional and individual receptive
//! fields, variance attention, attention-map dumps, and the ground-truth
//! channel-correlation matrix they are compared against.

#[cfg(test)]
mod tests;

use crate::data::SeriesDataset;
use crate::model::{bind, forward, ModelParams, Phase};
use crate::tensor::{Tape, Tensor, TensorError, Var};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("model was built without attention; no attention maps exist")]
    AttentionDisabled,
    #[error("no samples given")]
    NoSamples,
    #[error("prediction does not depend on the input; no input gradient")]
    NoInputGradient,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// The S×C×C tensor of output-center gradients: entry (s, c_in, c_out) is
/// ∂ŷ\[P/2, c_out\]/∂x\[s, c_in\], either signed (single sample) or
/// aggregated over samples by summing absolute values.
#[derive(Debug, Clone)]
pub struct GradientField {
    pub values: Tensor,
    pub samples: usize,
    pub abs_aggregated: bool,
}

#[derive(Debug, Clone)]
pub struct VarianceAttentionMap {
    /// C×C row-major: rows are input channels, columns output channels.
    pub values: Vec<f64>,
    pub channels: usize,
    pub normalized: bool,
}

/// Forward one S×C sample with input gradients enabled; returns the tape,
/// the input leaf and the C scalar nodes ŷ[P/2, c].
fn forward_with_center(
    params: &ModelParams,
    sample: &Tensor,
) -> Result<(Tape, Var, Vec<Var>), AnalysisError> {
    let cfg = &params.config;
    let mut x = sample.clone();
    let batched = x.shape().len() == 2;
    if batched {
        x = x.reshaped(vec![1, cfg.input_len, cfg.channels])?;
    }
    x.requires_grad = true;

    let mut tape = Tape::new();
    let bound = bind(&mut tape, params)?;
    let out = forward(&mut tape, &bound, cfg, &x, Phase::Eval)?;
    let first = tape.index_axis(out.prediction, 0, 0)?;
    let center_row = tape.index_axis(first, 0, cfg.pred_len / 2)?;
    let centers = (0..cfg.channels)
        .map(|c| tape.index_axis(center_row, 0, c))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((tape, out.input, centers))
}

/// Conventional receptive field: G ∈ R^S, the channel-averaged gradient of
/// the channel-averaged output center F = (1/C)·Σ_c ŷ\[P/2, c\].
pub fn conventional_receptive_field(
    params: &ModelParams,
    sample: &Tensor,
) -> Result<Vec<f64>, AnalysisError> {
    let cfg = &params.config;
    let (mut tape, input, centers) = forward_with_center(params, sample)?;
    let stacked = tape.stack(&centers, 0)?;
    let f = tape.mean_all(stacked);
    tape.backward(f)?;
    let g = tape.grad(input).ok_or(AnalysisError::NoInputGradient)?;
    let (s, c) = (cfg.input_len, cfg.channels);
    let mut field = vec![0.0; s];
    for (step, out) in field.iter_mut().enumerate() {
        *out = (0..c).map(|ch| g[step * c + ch]).sum::<f64>() / c as f64;
    }
    Ok(field)
}

/// Signed per-sample individual receptive field: one backward pass per
/// output channel, gradients kept with their sign.
pub fn individual_receptive_field_signed(
    params: &ModelParams,
    sample: &Tensor,
) -> Result<GradientField, AnalysisError> {
    let cfg = &params.config;
    let (s, c) = (cfg.input_len, cfg.channels);
    let (mut tape, input, centers) = forward_with_center(params, sample)?;
    let mut values = Tensor::zeros(&[s, c, c]);
    for (c_out, &center) in centers.iter().enumerate() {
        tape.zero_grads();
        tape.backward(center)?;
        let g = tape.grad(input).ok_or(AnalysisError::NoInputGradient)?;
        let data = values.data_mut();
        for step in 0..s {
            for c_in in 0..c {
                data[(step * c + c_in) * c + c_out] = g[step * c + c_in];
            }
        }
    }
    Ok(GradientField {
        values,
        samples: 1,
        abs_aggregated: false,
    })
}

/// Individual receptive field aggregated over samples by summing absolute
/// gradient values.
pub fn individual_receptive_field(
    params: &ModelParams,
    samples: &[Tensor],
) -> Result<GradientField, AnalysisError> {
    if samples.is_empty() {
        return Err(AnalysisError::NoSamples);
    }
    let cfg = &params.config;
    let (s, c) = (cfg.input_len, cfg.channels);
    let mut values = Tensor::zeros(&[s, c, c]);
    for sample in samples {
        let single = individual_receptive_field_signed(params, sample)?;
        let acc = values.data_mut();
        for (a, v) in acc.iter_mut().zip(single.values.data()) {
            *a += v.abs();
        }
    }
    Ok(GradientField {
        values,
        samples: samples.len(),
        abs_aggregated: true,
    })
}

/// Min-max scaling to [0, 1]; an all-equal input maps to all zeros.
pub fn minmax_normalize(values: &[f64]) -> Vec<f64> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max > min {
        values.iter().map(|v| (v - min) / (max - min)).collect()
    } else {
        vec![0.0; values.len()]
    }
}

/// Variance attention: the population variance of each (c_in, c_out)
/// gradient sequence over time, min-max normalized across the whole map.
pub fn variance_attention(field: &GradientField) -> VarianceAttentionMap {
    let shape = field.values.shape();
    let (s, c) = (shape[0], shape[1]);
    let data = field.values.data();
    let mut raw = vec![0.0; c * c];
    for c_in in 0..c {
        for c_out in 0..c {
            let series = (0..s).map(|step| data[(step * c + c_in) * c + c_out]);
            let mean = series.clone().sum::<f64>() / s as f64;
            let var = series.map(|v| (v - mean) * (v - mean)).sum::<f64>() / s as f64;
            raw[c_in * c + c_out] = var;
        }
    }
    VarianceAttentionMap {
        values: minmax_normalize(&raw),
        channels: c,
        normalized: true,
    }
}

/// Channel-wise attention matrices of a trained model on a batch, averaged
/// over the batch: one C×C grid per (layer, head).
pub fn attention_map_dump(
    params: &ModelParams,
    batch: &Tensor,
) -> Result<Vec<Vec<Vec<f64>>>, AnalysisError> {
    if !params.config.use_attention {
        return Err(AnalysisError::AttentionDisabled);
    }
    let cfg = &params.config;
    let mut tape = Tape::new();
    let bound = bind(&mut tape, params)?;
    let out = forward(&mut tape, &bound, cfg, batch, Phase::Eval)?;
    let c = cfg.channels;
    let mut dump = Vec::with_capacity(out.attention.len());
    for layer in &out.attention {
        let mut per_head = Vec::with_capacity(layer.len());
        for maps in layer {
            let mut avg = vec![0.0; c * c];
            for map in maps {
                for (a, v) in avg.iter_mut().zip(map.data()) {
                    *a += v;
                }
            }
            avg.iter_mut().for_each(|v| *v /= maps.len() as f64);
            per_head.push(avg);
        }
        dump.push(per_head);
    }
    Ok(dump)
}

/// Pearson correlation matrix over the full series. Constant channels
/// correlate 0 with everything and 1 with themselves.
pub fn channel_correlation(ds: &SeriesDataset) -> Vec<f64> {
    let (n, c) = (ds.rows(), ds.channels());
    let data = ds.values.data();
    let mut mean = vec![0.0; c];
    for row in 0..n {
        for ch in 0..c {
            mean[ch] += data[row * c + ch];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; c];
    for row in 0..n {
        for ch in 0..c {
            let d = data[row * c + ch] - mean[ch];
            var[ch] += d * d;
        }
    }
    let mut corr = vec![0.0; c * c];
    for a in 0..c {
        for b in 0..c {
            if a == b {
                corr[a * c + b] = 1.0;
                continue;
            }
            if var[a] <= 0.0 || var[b] <= 0.0 {
                corr[a * c + b] = 0.0;
                continue;
            }
            let mut cov = 0.0;
            for row in 0..n {
                cov += (data[row * c + a] - mean[a]) * (data[row * c + b] - mean[b]);
            }
            corr[a * c + b] = cov / (var[a] * var[b]).sqrt();
        }
    }
    corr
}

/// Long-format CSV of a gradient field: `s,c_in,c_out,value`.
pub fn ig_long_csv(field: &GradientField) -> String {
    let shape = field.values.shape();
    let (s, c) = (shape[0], shape[1]);
    let data = field.values.data();
    let mut out = String::from("s,c_in,c_out,value\n");
    for step in 0..s {
        for c_in in 0..c {
            for c_out in 0..c {
                out.push_str(&format!(
                    "{step},{c_in},{c_out},{}\n",
                    data[(step * c + c_in) * c + c_out]
                ));
            }
        }
    }
    out
}

/// C×C grid as CSV with channel-name headers on both axes.
pub fn grid_csv(values: &[f64], names: &[String]) -> String {
    let c = names.len();
    debug_assert_eq!(values.len(), c * c);
    let mut out = String::from("channel");
    for name in names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (i, name) in names.iter().enumerate() {
        out.push_str(name);
        for j in 0..c {
            out.push_str(&format!(",{}", values[i * c + j]));
        }
        out.push('\n');
    }
    out
}
