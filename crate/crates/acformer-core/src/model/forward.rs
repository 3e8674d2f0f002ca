//! The forecasting pipeline on the tape: RevIN normalization, shared patch
//! compression, temporal gated attention blocks, independent patch
//! expansion, projection to the horizon, RevIN denormalization.

use super::config::AcformerConfig;
use super::params::ModelParams;
use crate::tensor::{ElemKind, Tape, Tensor, TensorError, Var};

/// RevIN epsilon: enters squared under the root, so the std guard equals
/// 1e-5 at zero variance while the map stays differentiable there.
const REVIN_EPS: f64 = 1e-5;
const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Batch statistics for batch norm, recorded for the running buffers.
    Train,
    /// Running statistics; no cross-sample coupling.
    Eval,
}

/// Tape handles for one block's weights.
pub struct BoundBlock {
    pub query_w: Var,
    pub query_b: Var,
    pub key_w: Var,
    pub key_b: Var,
    pub value_w: Var,
    pub value_b: Var,
    pub gate_w: Option<Var>,
    pub gate_b: Option<Var>,
    pub ffn_w1: Var,
    pub ffn_b1: Var,
    pub ffn_w2: Var,
    pub ffn_b2: Var,
    pub bn_scale: Var,
    pub bn_shift: Var,
    pub bn_running_mean: Var,
    pub bn_running_var: Var,
}

/// Tape handles for every weight, plus pre-sliced views that several
/// sub-graphs share (compression kernel rows, per-channel expansion
/// kernels).
pub struct BoundParams {
    pub compress_w: Var,
    pub compress_b: Option<Var>,
    pub compress_rows: Vec<Var>,
    pub blocks: Vec<BoundBlock>,
    pub expand_w: Var,
    pub expand_kernels: Vec<Var>,
    pub proj_w: Var,
    pub proj_b: Var,
    pub revin_scale: Option<Var>,
    pub revin_shift: Option<Var>,
}

/// Register every parameter on the tape.
pub fn bind(tape: &mut Tape, params: &ModelParams) -> Result<BoundParams, TensorError> {
    let compress_w = tape.leaf(&params.compress_w);
    let compress_b = params.compress_b.as_ref().map(|b| tape.leaf(b));
    let compress_rows = (0..params.config.heads)
        .map(|m| tape.index_axis(compress_w, 0, m))
        .collect::<Result<Vec<_>, _>>()?;
    let blocks = params
        .blocks
        .iter()
        .map(|blk| BoundBlock {
            query_w: tape.leaf(&blk.query_w),
            query_b: tape.leaf(&blk.query_b),
            key_w: tape.leaf(&blk.key_w),
            key_b: tape.leaf(&blk.key_b),
            value_w: tape.leaf(&blk.value_w),
            value_b: tape.leaf(&blk.value_b),
            gate_w: blk.gate_w.as_ref().map(|w| tape.leaf(w)),
            gate_b: blk.gate_b.as_ref().map(|b| tape.leaf(b)),
            ffn_w1: tape.leaf(&blk.ffn_w1),
            ffn_b1: tape.leaf(&blk.ffn_b1),
            ffn_w2: tape.leaf(&blk.ffn_w2),
            ffn_b2: tape.leaf(&blk.ffn_b2),
            bn_scale: tape.leaf(&blk.bn_scale),
            bn_shift: tape.leaf(&blk.bn_shift),
            bn_running_mean: tape.leaf(&blk.bn_running_mean),
            bn_running_var: tape.leaf(&blk.bn_running_var),
        })
        .collect();
    let expand_w = tape.leaf(&params.expand_w);
    let expand_kernels = (0..params.config.channels)
        .map(|c| tape.index_axis(expand_w, 0, c))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(BoundParams {
        compress_w,
        compress_b,
        compress_rows,
        blocks,
        expand_w,
        expand_kernels,
        proj_w: tape.leaf(&params.proj_w),
        proj_b: tape.leaf(&params.proj_b),
        revin_scale: params.revin_scale.as_ref().map(|t| tape.leaf(t)),
        revin_shift: params.revin_shift.as_ref().map(|t| tape.leaf(t)),
    })
}

/// Per-instance normalization state, kept on the tape so gradients flow
/// through the statistics.
pub struct RevinVars {
    pub normalized: Var,
    pub mean: Var,
    pub std: Var,
}

/// Normalize each channel of an S×C window to zero mean / unit variance,
/// optionally applying the learnable affine pair afterwards.
pub fn revin_normalize(
    tape: &mut Tape,
    x: Var,
    affine: Option<(Var, Var)>,
) -> Result<RevinVars, TensorError> {
    let mean = tape.mean_axis(x, 0)?;
    let centered = tape.bcast_rows(x, mean, ElemKind::Sub)?;
    let sq = tape.mul(centered, centered)?;
    let var = tape.mean_axis(sq, 0)?;
    let guarded = tape.add_scalar(var, REVIN_EPS * REVIN_EPS);
    let std = tape.sqrt(guarded);
    let mut normalized = tape.bcast_rows(centered, std, ElemKind::Div)?;
    if let Some((scale, shift)) = affine {
        normalized = tape.bcast_rows(normalized, scale, ElemKind::Mul)?;
        normalized = tape.bcast_rows(normalized, shift, ElemKind::Add)?;
    }
    Ok(RevinVars {
        normalized,
        mean,
        std,
    })
}

/// Undo [`revin_normalize`] on a P×C prediction: invert the affine pair,
/// then restore the per-channel scale and location.
pub fn revin_denormalize(
    tape: &mut Tape,
    y: Var,
    state: &RevinVars,
    affine: Option<(Var, Var)>,
) -> Result<Var, TensorError> {
    let mut out = y;
    if let Some((scale, shift)) = affine {
        out = tape.bcast_rows(out, shift, ElemKind::Sub)?;
        out = tape.bcast_rows(out, scale, ElemKind::Div)?;
    }
    out = tape.bcast_rows(out, state.std, ElemKind::Mul)?;
    tape.bcast_rows(out, state.mean, ElemKind::Add)
}

/// Compress an S×C window into L×M×C: every channel is treated as an
/// independent sequence and convolved (valid, stride T) with each of the M
/// shared kernels.
pub fn shared_patch_compress(
    tape: &mut Tape,
    x: Var,
    kernel_rows: &[Var],
    bias: Option<Var>,
    stride: usize,
) -> Result<Var, TensorError> {
    let channels = tape.shape(x)[1];
    let mut per_channel = Vec::with_capacity(channels);
    for c in 0..channels {
        let col = tape.index_axis(x, 1, c)?;
        let mut views = Vec::with_capacity(kernel_rows.len());
        for &w in kernel_rows {
            views.push(tape.conv1d_valid(col, w, stride)?);
        }
        let mut lm = tape.stack(&views, 1)?;
        if let Some(b) = bias {
            lm = tape.bcast_rows(lm, b, ElemKind::Add)?;
        }
        per_channel.push(lm);
    }
    tape.stack(&per_channel, 2)
}

fn ensure_finite(tape: &Tape, v: Var, stage: &str) -> Result<(), TensorError> {
    for (i, &x) in tape.value(v).iter().enumerate() {
        if !x.is_finite() {
            return Err(TensorError::NonFinite {
                context: stage.to_string(),
                index: i,
                value: x,
            });
        }
    }
    Ok(())
}

/// Attention + gate + first residual + feed-forward for one sample.
/// Returns the residual input and the pre-batch-norm FFN output
/// (L·M × C tokens), plus the per-head attention matrices.
fn block_premix(
    tape: &mut Tape,
    xb: Var,
    blk: &BoundBlock,
    cfg: &AcformerConfig,
    attention_sink: Option<&mut Vec<Tensor>>,
) -> Result<(Var, Var), TensorError> {
    let (l, m, c) = (cfg.latent_len(), cfg.heads, cfg.channels);
    let scale = 1.0 / (l as f64).sqrt();

    let mut head_outputs = Vec::with_capacity(m);
    let mut head_attention = Vec::with_capacity(m);
    for head in 0..m {
        let xm = tape.index_axis(xb, 1, head)?;
        let q = tape.matmul(blk.query_w, xm)?;
        let q = tape.bcast_cols(q, blk.query_b, ElemKind::Add)?;
        let k = tape.matmul(blk.key_w, xm)?;
        let k = tape.bcast_cols(k, blk.key_b, ElemKind::Add)?;
        let v = tape.matmul(blk.value_w, xm)?;
        let v = tape.bcast_cols(v, blk.value_b, ElemKind::Add)?;
        let scores = tape.matmul_tn(q, k)?;
        let scores = tape.mul_scalar(scores, scale);
        // Rows are query channels; normalize over the key-channel axis.
        let attn = tape.softmax(scores, 1)?;
        let h = tape.matmul_nt(v, attn)?;
        head_outputs.push(h);
        head_attention.push(attn);
    }
    let h_a = tape.stack(&head_outputs, 1)?;
    ensure_finite(tape, h_a, "attention")?;
    if let Some(sink) = attention_sink {
        sink.extend(head_attention.iter().map(|&a| tape.tensor(a)));
    }

    let h_g = if cfg.use_gate {
        let gate_w = blk.gate_w.expect("use_gate implies gate weights");
        let flat = tape.reshape(xb, vec![l, m * c])?;
        let pair = tape.depthwise_pair_same(flat, gate_w, blk.gate_b)?;
        let gated = tape.glu(pair, 2)?;
        let gated = tape.reshape(gated, vec![l, m, c])?;
        let out = tape.mul(h_a, gated)?;
        ensure_finite(tape, out, "gate")?;
        out
    } else {
        h_a
    };

    let residual = tape.add(xb, h_g)?;
    let tokens = tape.reshape(residual, vec![l * m, c])?;
    let f1 = tape.matmul(blk.ffn_w1, tokens)?;
    let f1 = tape.bcast_cols(f1, blk.ffn_b1, ElemKind::Add)?;
    let f1 = tape.relu(f1);
    let f2 = tape.matmul(blk.ffn_w2, f1)?;
    let f2 = tape.bcast_cols(f2, blk.ffn_b2, ElemKind::Add)?;
    ensure_finite(tape, f2, "ffn")?;
    Ok((residual, f2))
}

/// Batch normalization over all samples' tokens (features along rows,
/// batch×channel tokens along columns). Returns the normalized per-sample
/// pieces and the batch statistics (mean, biased variance).
fn batch_norm_train(
    tape: &mut Tape,
    blk: &BoundBlock,
    pieces: &[Var],
    channels: usize,
) -> Result<(Vec<Var>, (Vec<f64>, Vec<f64>)), TensorError> {
    let cat = tape.concat(pieces, 1)?;
    let mu = tape.mean_axis(cat, 1)?;
    let centered = tape.bcast_cols(cat, mu, ElemKind::Sub)?;
    let sq = tape.mul(centered, centered)?;
    let var = tape.mean_axis(sq, 1)?;
    let guarded = tape.add_scalar(var, BN_EPS);
    let denom = tape.sqrt(guarded);
    let xhat = tape.bcast_cols(centered, denom, ElemKind::Div)?;
    let scaled = tape.bcast_cols(xhat, blk.bn_scale, ElemKind::Mul)?;
    let out = tape.bcast_cols(scaled, blk.bn_shift, ElemKind::Add)?;
    ensure_finite(tape, out, "batchnorm")?;
    let stats = (tape.value(mu).to_vec(), tape.value(var).to_vec());
    let mut split = Vec::with_capacity(pieces.len());
    for i in 0..pieces.len() {
        split.push(tape.narrow(out, 1, i * channels, channels)?);
    }
    Ok((split, stats))
}

/// Batch normalization with frozen running statistics (evaluation).
fn batch_norm_eval(tape: &mut Tape, blk: &BoundBlock, f2: Var) -> Result<Var, TensorError> {
    let centered = tape.bcast_cols(f2, blk.bn_running_mean, ElemKind::Sub)?;
    let rv = tape.add_scalar(blk.bn_running_var, BN_EPS);
    let denom = tape.sqrt(rv);
    let xhat = tape.bcast_cols(centered, denom, ElemKind::Div)?;
    let scaled = tape.bcast_cols(xhat, blk.bn_scale, ElemKind::Mul)?;
    let out = tape.bcast_cols(scaled, blk.bn_shift, ElemKind::Add)?;
    ensure_finite(tape, out, "batchnorm")?;
    Ok(out)
}

/// One temporal gated attention block applied to a single L×M×C sample.
/// Training mode computes batch statistics over this one sample.
pub fn gated_attention_block(
    tape: &mut Tape,
    xb: Var,
    blk: &BoundBlock,
    cfg: &AcformerConfig,
    phase: Phase,
) -> Result<Var, TensorError> {
    if !cfg.use_attention {
        return Ok(xb);
    }
    let (l, m, c) = (cfg.latent_len(), cfg.heads, cfg.channels);
    let (residual, f2) = block_premix(tape, xb, blk, cfg, None)?;
    let bn = match phase {
        Phase::Train => batch_norm_train(tape, blk, &[f2], c)?.0[0],
        Phase::Eval => batch_norm_eval(tape, blk, f2)?,
    };
    let bn = tape.reshape(bn, vec![l, m, c])?;
    tape.add(residual, bn)
}

/// Expand L×M×C latents back to S×C with the channel-specific transposed
/// convolution kernels.
pub fn independent_patch_expand(
    tape: &mut Tape,
    h: Var,
    kernels: &[Var],
    stride: usize,
) -> Result<Var, TensorError> {
    let channels = tape.shape(h)[2];
    debug_assert_eq!(channels, kernels.len());
    let mut cols = Vec::with_capacity(channels);
    for (c, &w) in kernels.iter().enumerate() {
        let hc = tape.index_axis(h, 2, c)?;
        cols.push(tape.transposed_conv1d(hc, w, stride)?);
    }
    tape.stack(&cols, 1)
}

/// Everything the forward pass produces besides the prediction itself.
pub struct ForwardOutput {
    /// B×P×C prediction on the original (denormalized) scale.
    pub prediction: Var,
    /// The input leaf; query its gradient for input-attribution analyses.
    pub input: Var,
    /// attention\[layer\]\[head\]\[sample\] — C×C rows-on-simplex matrices.
    pub attention: Vec<Vec<Vec<Tensor>>>,
    /// Per-layer batch statistics (mean, biased variance) gathered in
    /// training phase; feed to [`update_running_stats`].
    pub batch_stats: Vec<(Vec<f64>, Vec<f64>)>,
    /// Number of batch-norm samples (batch × channel tokens).
    pub bn_count: usize,
}

/// Run the full pipeline on a batch.
///
/// `x` must have shape \[B, S, C\]. Set `x.requires_grad` before calling
/// when input gradients are needed.
pub fn forward(
    tape: &mut Tape,
    bound: &BoundParams,
    cfg: &AcformerConfig,
    x: &Tensor,
    phase: Phase,
) -> Result<ForwardOutput, TensorError> {
    let shape = x.shape().to_vec();
    if shape.len() != 3 || shape[1] != cfg.input_len || shape[2] != cfg.channels {
        return Err(TensorError::DimMismatch {
            op: "forward",
            lhs: shape,
            rhs: vec![0, cfg.input_len, cfg.channels],
        });
    }
    let batch = shape[0];
    let (l, m, c) = (cfg.latent_len(), cfg.heads, cfg.channels);
    let affine = match (bound.revin_scale, bound.revin_shift) {
        (Some(s), Some(b)) => Some((s, b)),
        _ => None,
    };

    let input = tape.leaf(x);
    let mut revin_states = Vec::with_capacity(batch);
    let mut latents = Vec::with_capacity(batch);
    for b in 0..batch {
        let xs = tape.index_axis(input, 0, b)?;
        let revin = revin_normalize(tape, xs, affine)?;
        let latent = shared_patch_compress(
            tape,
            revin.normalized,
            &bound.compress_rows,
            bound.compress_b,
            cfg.stride,
        )?;
        revin_states.push(revin);
        latents.push(latent);
    }

    let mut attention = Vec::new();
    let mut batch_stats = Vec::new();
    if cfg.use_attention {
        for blk in &bound.blocks {
            let mut layer_attn: Vec<Vec<Tensor>> = vec![Vec::new(); m];
            let mut residuals = Vec::with_capacity(batch);
            let mut pieces = Vec::with_capacity(batch);
            for &latent in &latents {
                let mut sink = Vec::with_capacity(m);
                let (residual, f2) = block_premix(tape, latent, blk, cfg, Some(&mut sink))?;
                for (head, a) in sink.into_iter().enumerate() {
                    layer_attn[head].push(a);
                }
                residuals.push(residual);
                pieces.push(f2);
            }
            let normalized = match phase {
                Phase::Train => {
                    let (split, stats) = batch_norm_train(tape, blk, &pieces, c)?;
                    batch_stats.push(stats);
                    split
                }
                Phase::Eval => pieces
                    .iter()
                    .map(|&f2| batch_norm_eval(tape, blk, f2))
                    .collect::<Result<Vec<_>, _>>()?,
            };
            for (b, bn) in normalized.into_iter().enumerate() {
                let bn = tape.reshape(bn, vec![l, m, c])?;
                latents[b] = tape.add(residuals[b], bn)?;
            }
            attention.push(layer_attn);
        }
    }

    let mut predictions = Vec::with_capacity(batch);
    for b in 0..batch {
        let amplified = independent_patch_expand(tape, latents[b], &bound.expand_kernels, cfg.stride)?;
        let combined = tape.add(revin_states[b].normalized, amplified)?;
        let projected = if cfg.per_channel_projection {
            let mut cols = Vec::with_capacity(c);
            for ch in 0..c {
                let col = tape.index_axis(combined, 1, ch)?;
                let col = tape.reshape(col, vec![cfg.input_len, 1])?;
                let w = tape.index_axis(bound.proj_w, 0, ch)?;
                let bch = tape.index_axis(bound.proj_b, 0, ch)?;
                let y = tape.matmul_tn(w, col)?;
                let y = tape.reshape(y, vec![cfg.pred_len])?;
                cols.push(tape.add(y, bch)?);
            }
            tape.stack(&cols, 1)?
        } else {
            let y = tape.matmul_tn(bound.proj_w, combined)?;
            tape.bcast_cols(y, bound.proj_b, ElemKind::Add)?
        };
        predictions.push(revin_denormalize(
            tape,
            projected,
            &revin_states[b],
            affine,
        )?);
    }
    let prediction = tape.stack(&predictions, 0)?;

    Ok(ForwardOutput {
        prediction,
        input,
        attention,
        batch_stats,
        bn_count: batch * c,
    })
}

/// Mean absolute error over all B·P·C entries.
pub fn mae_loss(tape: &mut Tape, prediction: Var, target: &Tensor) -> Result<Var, TensorError> {
    if tape.shape(prediction) != target.shape() {
        return Err(TensorError::DimMismatch {
            op: "mae_loss",
            lhs: tape.shape(prediction).to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    let t = tape.leaf(target);
    let diff = tape.sub(prediction, t)?;
    let abs = tape.abs(diff);
    Ok(tape.mean_all(abs))
}

/// Fold a training batch's statistics into the running buffers
/// (momentum 0.1; running variance uses the unbiased estimator).
pub fn update_running_stats(
    params: &mut ModelParams,
    batch_stats: &[(Vec<f64>, Vec<f64>)],
    bn_count: usize,
) {
    let correction = if bn_count > 1 {
        bn_count as f64 / (bn_count as f64 - 1.0)
    } else {
        1.0
    };
    for (blk, (mean, var)) in params.blocks.iter_mut().zip(batch_stats) {
        for (rm, &bm) in blk.bn_running_mean.data_mut().iter_mut().zip(mean) {
            *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * bm;
        }
        for (rv, &bv) in blk.bn_running_var.data_mut().iter_mut().zip(var) {
            *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * bv * correction;
        }
    }
}

fn pull(tape: &Tape, tensor: &mut Tensor, var: Var) {
    if let Some(g) = tape.grad(var) {
        tensor.accumulate_grad(g);
    }
}

/// Move the tape's accumulated leaf gradients into the parameter tensors'
/// gradient accumulators.
pub fn apply_tape_grads(tape: &Tape, bound: &BoundParams, params: &mut ModelParams) {
    pull(tape, &mut params.compress_w, bound.compress_w);
    if let (Some(t), Some(v)) = (params.compress_b.as_mut(), bound.compress_b) {
        pull(tape, t, v);
    }
    for (pb, bb) in params.blocks.iter_mut().zip(&bound.blocks) {
        pull(tape, &mut pb.query_w, bb.query_w);
        pull(tape, &mut pb.query_b, bb.query_b);
        pull(tape, &mut pb.key_w, bb.key_w);
        pull(tape, &mut pb.key_b, bb.key_b);
        pull(tape, &mut pb.value_w, bb.value_w);
        pull(tape, &mut pb.value_b, bb.value_b);
        if let (Some(t), Some(v)) = (pb.gate_w.as_mut(), bb.gate_w) {
            pull(tape, t, v);
        }
        if let (Some(t), Some(v)) = (pb.gate_b.as_mut(), bb.gate_b) {
            pull(tape, t, v);
        }
        pull(tape, &mut pb.ffn_w1, bb.ffn_w1);
        pull(tape, &mut pb.ffn_b1, bb.ffn_b1);
        pull(tape, &mut pb.ffn_w2, bb.ffn_w2);
        pull(tape, &mut pb.ffn_b2, bb.ffn_b2);
        pull(tape, &mut pb.bn_scale, bb.bn_scale);
        pull(tape, &mut pb.bn_shift, bb.bn_shift);
    }
    pull(tape, &mut params.expand_w, bound.expand_w);
    pull(tape, &mut params.proj_w, bound.proj_w);
    pull(tape, &mut params.proj_b, bound.proj_b);
    if let (Some(t), Some(v)) = (params.revin_scale.as_mut(), bound.revin_scale) {
        pull(tape, t, v);
    }
    if let (Some(t), Some(v)) = (params.revin_shift.as_mut(), bound.revin_shift) {
        pull(tape, t, v);
    }
}
