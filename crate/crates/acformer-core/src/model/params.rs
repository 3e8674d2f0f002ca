use super::config::AcformerConfig;
use crate::rng;
use crate::tensor::Tensor;
use rand::Rng;

/// Weights of one temporal gated attention block.
///
/// The batch-norm running statistics are state, not trained parameters:
/// they carry `requires_grad = false` and are updated from batch statistics
/// after each training step.
#[derive(Debug, Clone)]
pub struct BlockParams {
    pub query_w: Tensor,
    pub query_b: Tensor,
    pub key_w: Tensor,
    pub key_b: Tensor,
    pub value_w: Tensor,
    pub value_b: Tensor,
    pub gate_w: Option<Tensor>,
    pub gate_b: Option<Tensor>,
    pub ffn_w1: Tensor,
    pub ffn_b1: Tensor,
    pub ffn_w2: Tensor,
    pub ffn_b2: Tensor,
    pub bn_scale: Tensor,
    pub bn_shift: Tensor,
    pub bn_running_mean: Tensor,
    pub bn_running_var: Tensor,
}

/// All weights of the model, together with the configuration that shapes
/// them.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: AcformerConfig,
    /// M compression kernels of length K, shared across channels.
    pub compress_w: Tensor,
    pub compress_b: Option<Tensor>,
    /// Empty when `use_attention` is off.
    pub blocks: Vec<BlockParams>,
    /// Per-channel expansion kernels, C×K×M — never shared across channels.
    pub expand_w: Tensor,
    /// S×P shared projection, or C×S×P when `per_channel_projection`.
    pub proj_w: Tensor,
    /// P, or C×P when `per_channel_projection`.
    pub proj_b: Tensor,
    pub revin_scale: Option<Tensor>,
    pub revin_shift: Option<Tensor>,
}

fn init_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::uniform(shape, -bound, bound, rng).with_grad()
}

impl ModelParams {
    /// Seeded initialization: weights and biases from
    /// uniform(−1/√fan_in, +1/√fan_in) on the "init" stream, batch-norm
    /// scale 1 / shift 0, RevIN affine identity.
    pub fn init(config: &AcformerConfig) -> Self {
        let cfg = config.clone();
        let mut r = rng::stream(cfg.seed, "init");
        let (s, p, c) = (cfg.input_len, cfg.pred_len, cfg.channels);
        let (k, m, l) = (cfg.kernel_len, cfg.heads, cfg.latent_len());
        let ff = cfg.ff_width();

        let compress_w = init_uniform(&[m, k], k, &mut r);
        let compress_b = cfg.conv_bias.then(|| init_uniform(&[m], k, &mut r));

        let blocks = if cfg.use_attention {
            (0..cfg.layers)
                .map(|_| {
                    let query_w = init_uniform(&[l, l], l, &mut r);
                    let query_b = init_uniform(&[l], l, &mut r);
                    let key_w = init_uniform(&[l, l], l, &mut r);
                    let key_b = init_uniform(&[l], l, &mut r);
                    let value_w = init_uniform(&[l, l], l, &mut r);
                    let value_b = init_uniform(&[l], l, &mut r);
                    let (gate_w, gate_b) = if cfg.use_gate {
                        let kp = cfg.gate_kernel_len;
                        let w = init_uniform(&[kp, 2], kp, &mut r);
                        let b = cfg.conv_bias.then(|| init_uniform(&[2], kp, &mut r));
                        (Some(w), b)
                    } else {
                        (None, None)
                    };
                    let ffn_w1 = init_uniform(&[ff, l * m], l * m, &mut r);
                    let ffn_b1 = init_uniform(&[ff], l * m, &mut r);
                    let ffn_w2 = init_uniform(&[l * m, ff], ff, &mut r);
                    let ffn_b2 = init_uniform(&[l * m], ff, &mut r);
                    BlockParams {
                        query_w,
                        query_b,
                        key_w,
                        key_b,
                        value_w,
                        value_b,
                        gate_w,
                        gate_b,
                        ffn_w1,
                        ffn_b1,
                        ffn_w2,
                        ffn_b2,
                        bn_scale: Tensor::full(&[l * m], 1.0).with_grad(),
                        bn_shift: Tensor::zeros(&[l * m]).with_grad(),
                        bn_running_mean: Tensor::zeros(&[l * m]),
                        bn_running_var: Tensor::full(&[l * m], 1.0),
                    }
                })
                .collect()
        } else {
            Vec::new()
        };

        let expand_w = init_uniform(&[c, k, m], m * k, &mut r);
        let (proj_w, proj_b) = if cfg.per_channel_projection {
            (
                init_uniform(&[c, s, p], s, &mut r),
                init_uniform(&[c, p], s, &mut r),
            )
        } else {
            (init_uniform(&[s, p], s, &mut r), init_uniform(&[p], s, &mut r))
        };
        let (revin_scale, revin_shift) = if cfg.revin_affine {
            (
                Some(Tensor::full(&[c], 1.0).with_grad()),
                Some(Tensor::zeros(&[c]).with_grad()),
            )
        } else {
            (None, None)
        };

        ModelParams {
            config: cfg,
            compress_w,
            compress_b,
            blocks,
            expand_w,
            proj_w,
            proj_b,
            revin_scale,
            revin_shift,
        }
    }

    /// Every tensor (trained parameters and batch-norm state) with its
    /// stable name, in a fixed order.
    pub fn visit(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        out.push(("compress.weight".into(), &self.compress_w));
        if let Some(b) = &self.compress_b {
            out.push(("compress.bias".into(), b));
        }
        for (i, blk) in self.blocks.iter().enumerate() {
            let p = |name: &str| format!("block{i}.{name}");
            out.push((p("query.weight"), &blk.query_w));
            out.push((p("query.bias"), &blk.query_b));
            out.push((p("key.weight"), &blk.key_w));
            out.push((p("key.bias"), &blk.key_b));
            out.push((p("value.weight"), &blk.value_w));
            out.push((p("value.bias"), &blk.value_b));
            if let Some(w) = &blk.gate_w {
                out.push((p("gate.weight"), w));
            }
            if let Some(b) = &blk.gate_b {
                out.push((p("gate.bias"), b));
            }
            out.push((p("ffn.w1"), &blk.ffn_w1));
            out.push((p("ffn.b1"), &blk.ffn_b1));
            out.push((p("ffn.w2"), &blk.ffn_w2));
            out.push((p("ffn.b2"), &blk.ffn_b2));
            out.push((p("bn.scale"), &blk.bn_scale));
            out.push((p("bn.shift"), &blk.bn_shift));
            out.push((p("bn.running_mean"), &blk.bn_running_mean));
            out.push((p("bn.running_var"), &blk.bn_running_var));
        }
        out.push(("expand.weight".into(), &self.expand_w));
        out.push(("proj.weight".into(), &self.proj_w));
        out.push(("proj.bias".into(), &self.proj_b));
        if let Some(t) = &self.revin_scale {
            out.push(("revin.scale".into(), t));
        }
        if let Some(t) = &self.revin_shift {
            out.push(("revin.shift".into(), t));
        }
        out
    }

    /// Mutable counterpart of [`ModelParams::visit`], same order.
    pub fn visit_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        out.push(("compress.weight".into(), &mut self.compress_w));
        if let Some(b) = &mut self.compress_b {
            out.push(("compress.bias".into(), b));
        }
        for (i, blk) in self.blocks.iter_mut().enumerate() {
            let p = |name: &str| format!("block{i}.{name}");
            out.push((p("query.weight"), &mut blk.query_w));
            out.push((p("query.bias"), &mut blk.query_b));
            out.push((p("key.weight"), &mut blk.key_w));
            out.push((p("key.bias"), &mut blk.key_b));
            out.push((p("value.weight"), &mut blk.value_w));
            out.push((p("value.bias"), &mut blk.value_b));
            if let Some(w) = &mut blk.gate_w {
                out.push((p("gate.weight"), w));
            }
            if let Some(b) = &mut blk.gate_b {
                out.push((p("gate.bias"), b));
            }
            out.push((p("ffn.w1"), &mut blk.ffn_w1));
            out.push((p("ffn.b1"), &mut blk.ffn_b1));
            out.push((p("ffn.w2"), &mut blk.ffn_w2));
            out.push((p("ffn.b2"), &mut blk.ffn_b2));
            out.push((p("bn.scale"), &mut blk.bn_scale));
            out.push((p("bn.shift"), &mut blk.bn_shift));
            out.push((p("bn.running_mean"), &mut blk.bn_running_mean));
            out.push((p("bn.running_var"), &mut blk.bn_running_var));
        }
        out.push(("expand.weight".into(), &mut self.expand_w));
        out.push(("proj.weight".into(), &mut self.proj_w));
        out.push(("proj.bias".into(), &mut self.proj_b));
        if let Some(t) = &mut self.revin_scale {
            out.push(("revin.scale".into(), t));
        }
        if let Some(t) = &mut self.revin_shift {
            out.push(("revin.shift".into(), t));
        }
        out
    }

    /// Number of trained scalar parameters (running stats excluded).
    pub fn param_count(&self) -> usize {
        self.visit()
            .iter()
            .filter(|(_, t)| t.requires_grad)
            .map(|(_, t)| t.numel())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        for (_, t) in self.visit_mut() {
            t.zero_grad();
        }
    }

    /// Set every trained parameter to zero (used by tests probing the
    /// zero-network behavior).
    pub fn set_all_zero(&mut self) {
        for (_, t) in self.visit_mut() {
            if t.requires_grad {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    /// Error if any parameter or gradient has gone non-finite; names the
    /// offending tensor.
    pub fn assert_finite(&self) -> Result<(), crate::tensor::TensorError> {
        for (name, t) in self.visit() {
            t.assert_finite(&name)?;
        }
        Ok(())
    }
}
