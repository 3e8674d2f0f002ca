//! Finite-difference verification of reverse-mode gradients.

use super::{Tape, Tensor, TensorError, Var};

/// Outcome of a [`grad_check`] run.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error over all input entries. The denominator is
    /// max(|autodiff|, |finite difference|, 1), so entries whose true
    /// gradient is tiny are compared absolutely rather than blowing up.
    pub max_rel_err: f64,
    pub tol: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err <= self.tol
    }
}

/// Compare the tape gradient of a scalar-valued function against central
/// finite differences with step h = 1e-5.
///
/// `f` rebuilds the computation on the tape it is given; it must be a pure
/// function of the input value.
pub fn grad_check<F>(f: F, x: &Tensor, tol: f64) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, TensorError>,
{
    const H: f64 = 1e-5;

    let mut probe = x.clone();
    probe.requires_grad = true;

    let mut tape = Tape::new();
    let xv = tape.leaf(&probe);
    let out = f(&mut tape, xv)?;
    if tape.value(out).len() != 1 {
        return Err(TensorError::NonScalarLoss {
            shape: tape.shape(out).to_vec(),
        });
    }
    tape.backward(out)?;
    let analytic = tape.grad_or_zeros(xv);

    let eval = |t: &Tensor| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let v = tape.leaf(t);
        let out = f(&mut tape, v)?;
        Ok(tape.value(out)[0])
    };

    let mut max_rel_err: f64 = 0.0;
    let mut shifted = x.clone();
    for i in 0..x.numel() {
        let orig = shifted.data()[i];
        shifted.data_mut()[i] = orig + H;
        let plus = eval(&shifted)?;
        shifted.data_mut()[i] = orig - H;
        let minus = eval(&shifted)?;
        shifted.data_mut()[i] = orig;

        let fd = (plus - minus) / (2.0 * H);
        let ad = analytic[i];
        if !fd.is_finite() || !ad.is_finite() {
            max_rel_err = f64::INFINITY;
            break;
        }
        let denom = ad.abs().max(fd.abs()).max(1.0);
        max_rel_err = max_rel_err.max((ad - fd).abs() / denom);
    }

    Ok(GradCheckReport {
        max_rel_err,
        tol,
        checked: x.numel(),
    })
}

/// A randomized finite-difference battery covering every tape primitive.
/// Unit tests run a few trials; the acceptance suite runs one hundred.
pub mod battery {
    use super::super::tape::ElemKind;
    use super::*;
    use crate::rng;
    use rand::Rng;

    pub struct PrimitiveCase {
        pub name: &'static str,
        pub build: Box<dyn Fn(&mut Tape, Var) -> Result<Var, TensorError>>,
        pub input: Tensor,
    }

    /// The full primitive battery at a given trial seed. Inputs are drawn
    /// from [-2, 2] except where an op's domain requires otherwise (sqrt
    /// needs positive inputs, divisors stay away from zero, relu/abs away
    /// from their kink).
    pub fn cases(trial_seed: u64) -> Vec<PrimitiveCase> {
        let mut r = rng::stream(trial_seed, "primitive-cases");
        let mut cases: Vec<PrimitiveCase> = Vec::new();
        let rt =
            |shape: &[usize], r: &mut rand_chacha::ChaCha8Rng| Tensor::uniform(shape, -2.0, 2.0, r);

        let b = rt(&[3, 2], &mut r);
        cases.push(PrimitiveCase {
            name: "matmul",
            input: rt(&[2, 3], &mut r),
            build: Box::new(move |t, x| {
                let bv = t.leaf(&b);
                let m = t.matmul(x, bv)?;
                Ok(t.sum_all(m))
            }),
        });
        let b = rt(&[3, 2], &mut r);
        cases.push(PrimitiveCase {
            name: "matmul_tn",
            input: rt(&[3, 4], &mut r),
            build: Box::new(move |t, x| {
                let bv = t.leaf(&b);
                let m = t.matmul_tn(x, bv)?;
                Ok(t.sum_all(m))
            }),
        });
        let b = rt(&[2, 3], &mut r);
        cases.push(PrimitiveCase {
            name: "matmul_nt",
            input: rt(&[4, 3], &mut r),
            build: Box::new(move |t, x| {
                let bv = t.leaf(&b);
                let m = t.matmul_nt(x, bv)?;
                Ok(t.sum_all(m))
            }),
        });

        let w = rt(&[3], &mut r);
        cases.push(PrimitiveCase {
            name: "conv1d_valid(x)",
            input: rt(&[9], &mut r),
            build: Box::new(move |t, x| {
                let wv = t.leaf(&w);
                let c = t.conv1d_valid(x, wv, 2)?;
                let sq = t.mul(c, c)?;
                Ok(t.sum_all(sq))
            }),
        });
        let x_fixed = rt(&[9], &mut r);
        cases.push(PrimitiveCase {
            name: "conv1d_valid(w)",
            input: rt(&[3], &mut r),
            build: Box::new(move |t, w| {
                let xv = t.leaf(&x_fixed);
                let c = t.conv1d_valid(xv, w, 2)?;
                let sq = t.mul(c, c)?;
                Ok(t.sum_all(sq))
            }),
        });
        let w = rt(&[3], &mut r);
        cases.push(PrimitiveCase {
            name: "conv1d_same",
            input: rt(&[7], &mut r),
            build: Box::new(move |t, x| {
                let wv = t.leaf(&w);
                let c = t.conv1d_same(x, wv)?;
                let sq = t.mul(c, c)?;
                Ok(t.sum_all(sq))
            }),
        });
        let w = rt(&[3, 2], &mut r);
        cases.push(PrimitiveCase {
            name: "transposed_conv1d(h)",
            input: rt(&[4, 2], &mut r),
            build: Box::new(move |t, h| {
                let wv = t.leaf(&w);
                let c = t.transposed_conv1d(h, wv, 2)?;
                let sq = t.mul(c, c)?;
                Ok(t.sum_all(sq))
            }),
        });
        let h_fixed = rt(&[4, 2], &mut r);
        cases.push(PrimitiveCase {
            name: "transposed_conv1d(w)",
            input: rt(&[3, 2], &mut r),
            build: Box::new(move |t, w| {
                let hv = t.leaf(&h_fixed);
                let c = t.transposed_conv1d(hv, w, 2)?;
                let sq = t.mul(c, c)?;
                Ok(t.sum_all(sq))
            }),
        });
        let w = rt(&[2, 2, 3], &mut r);
        cases.push(PrimitiveCase {
            name: "conv1d_mc",
            input: rt(&[2, 8], &mut r),
            build: Box::new(move |t, x| {
                let wv = t.leaf(&w);
                let c = t.conv1d_mc(x, wv, 2)?;
                let sq = t.mul(c, c)?;
                Ok(t.sum_all(sq))
            }),
        });
        let w = rt(&[2, 3, 4], &mut r);
        cases.push(PrimitiveCase {
            name: "transposed_conv1d_mc",
            input: rt(&[2, 5], &mut r),
            build: Box::new(move |t, h| {
                let wv = t.leaf(&w);
                let c = t.transposed_conv1d_mc(h, wv, 2)?;
                let sq = t.mul(c, c)?;
                Ok(t.sum_all(sq))
            }),
        });
        let w = rt(&[3, 2], &mut r);
        let bias = rt(&[2], &mut r);
        cases.push(PrimitiveCase {
            name: "depthwise_pair_same",
            input: rt(&[5, 3], &mut r),
            build: Box::new(move |t, x| {
                let wv = t.leaf(&w);
                let bv = t.leaf(&bias);
                let c = t.depthwise_pair_same(x, wv, Some(bv))?;
                let sq = t.mul(c, c)?;
                Ok(t.sum_all(sq))
            }),
        });
        cases.push(PrimitiveCase {
            name: "softmax",
            input: rt(&[3, 4], &mut r),
            build: Box::new(|t, x| {
                let s = t.softmax(x, 1)?;
                let sq = t.mul(s, s)?;
                Ok(t.sum_all(sq))
            }),
        });
        cases.push(PrimitiveCase {
            name: "glu",
            input: rt(&[2, 6], &mut r),
            build: Box::new(|t, x| {
                let gl = t.glu(x, 1)?;
                let sq = t.mul(gl, gl)?;
                Ok(t.sum_all(sq))
            }),
        });
        cases.push(PrimitiveCase {
            name: "sigmoid",
            input: rt(&[6], &mut r),
            build: Box::new(|t, x| {
                let s = t.sigmoid(x);
                let sq = t.mul(s, s)?;
                Ok(t.sum_all(sq))
            }),
        });
        cases.push(PrimitiveCase {
            name: "relu",
            input: away_from_zero(&[6], 0.05, &mut r),
            build: Box::new(|t, x| {
                let s = t.relu(x);
                let sq = t.mul(s, s)?;
                Ok(t.sum_all(sq))
            }),
        });
        cases.push(PrimitiveCase {
            name: "abs",
            input: away_from_zero(&[6], 0.05, &mut r),
            build: Box::new(|t, x| {
                let s = t.abs(x);
                let sq = t.mul(s, s)?;
                Ok(t.sum_all(sq))
            }),
        });
        cases.push(PrimitiveCase {
            name: "sqrt",
            input: Tensor::from_fn(&[6], |_| r.gen_range(0.1..2.0)),
            build: Box::new(|t, x| {
                let s = t.sqrt(x);
                let sq = t.mul(s, s)?;
                Ok(t.sum_all(sq))
            }),
        });
        cases.push(PrimitiveCase {
            name: "mean_axis0",
            input: rt(&[3, 4], &mut r),
            build: Box::new(|t, x| {
                let m = t.mean_axis(x, 0)?;
                let sq = t.mul(m, m)?;
                Ok(t.sum_all(sq))
            }),
        });
        cases.push(PrimitiveCase {
            name: "mean_axis1",
            input: rt(&[3, 4], &mut r),
            build: Box::new(|t, x| {
                let m = t.mean_axis(x, 1)?;
                let sq = t.mul(m, m)?;
                Ok(t.sum_all(sq))
            }),
        });
        for kind in [ElemKind::Add, ElemKind::Sub, ElemKind::Mul, ElemKind::Div] {
            let v = away_from_zero(&[4], 0.5, &mut r);
            let name = match kind {
                ElemKind::Add => "bcast_rows_add",
                ElemKind::Sub => "bcast_rows_sub",
                ElemKind::Mul => "bcast_rows_mul",
                ElemKind::Div => "bcast_rows_div",
            };
            cases.push(PrimitiveCase {
                name,
                input: rt(&[3, 4], &mut r),
                build: Box::new(move |t, x| {
                    let vv = t.leaf(&v);
                    let o = t.bcast_rows(x, vv, kind)?;
                    let sq = t.mul(o, o)?;
                    Ok(t.sum_all(sq))
                }),
            });
        }
        let v = away_from_zero(&[3], 0.5, &mut r);
        cases.push(PrimitiveCase {
            name: "bcast_cols_div(v)",
            input: rt(&[3, 4], &mut r),
            build: Box::new(move |t, x| {
                let vv = t.leaf(&v);
                let o = t.bcast_cols(x, vv, ElemKind::Div)?;
                let sq = t.mul(o, o)?;
                Ok(t.sum_all(sq))
            }),
        });
        cases.push(PrimitiveCase {
            name: "index_stack_narrow_concat",
            input: rt(&[3, 4], &mut r),
            build: Box::new(|t, x| {
                let row = t.index_axis(x, 0, 1)?;
                let col = t.index_axis(x, 1, 2)?;
                let stacked = t.stack(&[row, row], 0)?;
                let narrowed = t.narrow(stacked, 1, 1, 2)?;
                let joined = t.concat(&[narrowed, narrowed], 1)?;
                let flat = t.reshape(joined, vec![8])?;
                let s1 = t.sum_all(flat);
                let s2 = t.sum_all(col);
                let both = t.stack(&[s1, s2], 0)?;
                let sq = t.mul(both, both)?;
                Ok(t.sum_all(sq))
            }),
        });
        cases
    }

    fn away_from_zero(shape: &[usize], min_mag: f64, r: &mut rand_chacha::ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| {
            let v: f64 = r.gen_range(min_mag..2.0);
            if r.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
    }

    /// Run every primitive case once for a given trial seed; returns
    /// (name, max_rel_err) pairs.
    pub fn run_all(trial_seed: u64, tol: f64) -> Vec<(String, f64)> {
        cases(trial_seed)
            .into_iter()
            .map(|case| {
                let report = grad_check(|t, v| (case.build)(t, v), &case.input, tol)
                    .unwrap_or_else(|e| panic!("{}: {e}", case.name));
                (case.name.to_string(), report.max_rel_err)
            })
            .collect()
    }
}
