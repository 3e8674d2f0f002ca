use super::kernels;
use super::{numel_of, Tensor, TensorError};

/// Handle to a node on a [`Tape`]. Cheap to copy; only meaningful for the
/// tape that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(super) usize);

/// Elementwise combination used by the broadcast ops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElemKind {
    Add,
    Sub,
    Mul,
    Div,
}

/// Which way a rank-1 operand broadcasts over a rank-2 tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum BcastAxis {
    /// Vector indexed by column, applied to every row.
    Rows,
    /// Vector indexed by row, applied to every column.
    Cols,
}

#[derive(Debug)]
pub(super) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    Abs(Var),
    Relu(Var),
    Sigmoid(Var),
    Sqrt(Var),
    SumAll(Var),
    MeanAll(Var),
    MeanAxis(Var, usize),
    Bcast {
        a: Var,
        v: Var,
        axis: BcastAxis,
        kind: ElemKind,
    },
    Matmul(Var, Var),
    MatmulTn(Var, Var),
    MatmulNt(Var, Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    Glu {
        x: Var,
        axis: usize,
    },
    Conv1dValid {
        x: Var,
        w: Var,
        stride: usize,
    },
    Conv1dSame {
        x: Var,
        w: Var,
    },
    TransposedConv1d {
        h: Var,
        w: Var,
        stride: usize,
    },
    Conv1dMc {
        x: Var,
        w: Var,
        stride: usize,
    },
    TransposedConv1dMc {
        h: Var,
        w: Var,
        stride: usize,
    },
    DepthwisePairSame {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Reshape(Var),
    IndexAxis {
        x: Var,
        axis: usize,
        index: usize,
    },
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
        len: usize,
    },
    Stack {
        xs: Vec<Var>,
        axis: usize,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
}

impl Op {
    fn for_each_input(&self, mut f: impl FnMut(Var)) {
        match self {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                f(*a);
                f(*b);
            }
            Op::AddScalar(a)
            | Op::MulScalar(a, _)
            | Op::Abs(a)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Sqrt(a)
            | Op::SumAll(a)
            | Op::MeanAll(a)
            | Op::MeanAxis(a, _)
            | Op::Reshape(a) => f(*a),
            Op::Bcast { a, v, .. } => {
                f(*a);
                f(*v);
            }
            Op::Matmul(a, b) | Op::MatmulTn(a, b) | Op::MatmulNt(a, b) => {
                f(*a);
                f(*b);
            }
            Op::Softmax { x, .. } | Op::Glu { x, .. } => f(*x),
            Op::Conv1dValid { x, w, .. } | Op::Conv1dSame { x, w } => {
                f(*x);
                f(*w);
            }
            Op::TransposedConv1d { h, w, .. } | Op::TransposedConv1dMc { h, w, .. } => {
                f(*h);
                f(*w);
            }
            Op::Conv1dMc { x, w, .. } => {
                f(*x);
                f(*w);
            }
            Op::DepthwisePairSame { x, w, b } => {
                f(*x);
                f(*w);
                if let Some(b) = b {
                    f(*b);
                }
            }
            Op::IndexAxis { x, .. } | Op::Narrow { x, .. } => f(*x),
            Op::Stack { xs, .. } | Op::Concat { xs, .. } => xs.iter().copied().for_each(&mut f),
        }
    }
}

pub(super) struct Node {
    pub op: Op,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub needs_grad: bool,
}

/// Wengert tape: records every operation of a forward pass in topological
/// order, then replays them in exact reverse order to propagate adjoints.
///
/// A tape lives for one forward pass (or one forward pass plus several
/// backward sweeps from different scalar roots) and is then dropped.
/// Leaf gradients accumulate additively across backward calls until
/// [`Tape::zero_grads`] clears them.
#[derive(Default)]
pub struct Tape {
    pub(super) nodes: Vec<Node>,
    pub(super) grads: Vec<Option<Vec<f64>>>,
}

/// Decompose `shape` around `axis` into (outer, axis_len, inner) extents.
pub(super) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, data: Vec<f64>) -> Var {
        debug_assert_eq!(numel_of(&shape), data.len());
        let mut needs_grad = false;
        op.for_each_input(|v| needs_grad |= self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            op,
            shape,
            data,
            needs_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Register a tensor as a leaf. It participates in gradient propagation
    /// iff `tensor.requires_grad` is set.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        let v = self.push(Op::Leaf, tensor.shape().to_vec(), tensor.data().to_vec());
        self.nodes[v.0].needs_grad = tensor.requires_grad;
        v
    }

    /// Leaf that never receives gradient.
    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var, TensorError> {
        let expected = numel_of(shape);
        if expected != data.len() {
            return Err(TensorError::ShapeDataMismatch {
                shape: shape.to_vec(),
                expected,
                actual: data.len(),
            });
        }
        Ok(self.push(Op::Leaf, shape.to_vec(), data))
    }

    pub fn constant_scalar(&mut self, value: f64) -> Var {
        self.push(Op::Leaf, Vec::new(), vec![value])
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Copy a node's value out as a plain tensor.
    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.nodes[v.0].shape.clone(), self.nodes[v.0].data.clone())
            .expect("node shape/data always consistent")
    }

    /// Accumulated gradient of a leaf (None if nothing flowed to it).
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn grad_or_zeros(&self, v: Var) -> Vec<f64> {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| vec![0.0; self.nodes[v.0].data.len()])
    }

    /// Clear all accumulated leaf gradients.
    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn binary_same_shape(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
    ) -> Result<(), TensorError> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(TensorError::DimMismatch {
                op: op_name,
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary_same_shape("add", a, b)?;
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(Op::Add(a, b), self.nodes[a.0].shape.clone(), data))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary_same_shape("sub", a, b)?;
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x - y)
            .collect();
        Ok(self.push(Op::Sub(a, b), self.nodes[a.0].shape.clone(), data))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary_same_shape("mul", a, b)?;
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(Op::Mul(a, b), self.nodes[a.0].shape.clone(), data))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let data = self.nodes[a.0].data.iter().map(|x| x + c).collect();
        self.push(Op::AddScalar(a), self.nodes[a.0].shape.clone(), data)
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Var {
        let data = self.nodes[a.0].data.iter().map(|x| x * c).collect();
        self.push(Op::MulScalar(a, c), self.nodes[a.0].shape.clone(), data)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let data = self.nodes[a.0].data.iter().map(|x| x.abs()).collect();
        self.push(Op::Abs(a), self.nodes[a.0].shape.clone(), data)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data = self.nodes[a.0].data.iter().map(|x| x.max(0.0)).collect();
        self.push(Op::Relu(a), self.nodes[a.0].shape.clone(), data)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let data = self.nodes[a.0].data.iter().map(|x| sigmoid(*x)).collect();
        self.push(Op::Sigmoid(a), self.nodes[a.0].shape.clone(), data)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let data = self.nodes[a.0].data.iter().map(|x| x.sqrt()).collect();
        self.push(Op::Sqrt(a), self.nodes[a.0].shape.clone(), data)
    }

    /// Scalar sum of all entries.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.nodes[a.0].data.iter().sum();
        self.push(Op::SumAll(a), Vec::new(), vec![s])
    }

    /// Scalar mean of all entries.
    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].data.len() as f64;
        let s: f64 = self.nodes[a.0].data.iter().sum();
        self.push(Op::MeanAll(a), Vec::new(), vec![s / n])
    }

    /// Mean of a rank-2 tensor along `axis` (0 → over rows, 1 → over cols).
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        let shape = self.nodes[a.0].shape.clone();
        if shape.len() != 2 {
            return Err(TensorError::RankMismatch {
                op: "mean_axis",
                expected: 2,
                shape,
            });
        }
        if axis > 1 {
            return Err(TensorError::AxisOutOfRange {
                op: "mean_axis",
                axis,
                rank: 2,
            });
        }
        let (rows, cols) = (shape[0], shape[1]);
        let x = &self.nodes[a.0].data;
        let data = if axis == 0 {
            let mut out = vec![0.0; cols];
            for r in 0..rows {
                for (o, &v) in out.iter_mut().zip(&x[r * cols..(r + 1) * cols]) {
                    *o += v;
                }
            }
            out.iter_mut().for_each(|v| *v /= rows as f64);
            out
        } else {
            (0..rows)
                .map(|r| x[r * cols..(r + 1) * cols].iter().sum::<f64>() / cols as f64)
                .collect()
        };
        let out_len = if axis == 0 { cols } else { rows };
        Ok(self.push(Op::MeanAxis(a, axis), vec![out_len], data))
    }

    fn bcast(
        &mut self,
        a: Var,
        v: Var,
        axis: BcastAxis,
        kind: ElemKind,
    ) -> Result<Var, TensorError> {
        let a_shape = self.nodes[a.0].shape.clone();
        let v_shape = self.nodes[v.0].shape.clone();
        if a_shape.len() != 2 || v_shape.len() != 1 {
            return Err(TensorError::DimMismatch {
                op: "broadcast",
                lhs: a_shape,
                rhs: v_shape,
            });
        }
        let (rows, cols) = (a_shape[0], a_shape[1]);
        let expect = match axis {
            BcastAxis::Rows => cols,
            BcastAxis::Cols => rows,
        };
        if v_shape[0] != expect {
            return Err(TensorError::DimMismatch {
                op: "broadcast",
                lhs: a_shape,
                rhs: v_shape,
            });
        }
        let av = &self.nodes[a.0].data;
        let vv = &self.nodes[v.0].data;
        let mut data = Vec::with_capacity(av.len());
        for r in 0..rows {
            for c in 0..cols {
                let x = av[r * cols + c];
                let y = match axis {
                    BcastAxis::Rows => vv[c],
                    BcastAxis::Cols => vv[r],
                };
                data.push(apply_elem(kind, x, y));
            }
        }
        Ok(self.push(Op::Bcast { a, v, axis, kind }, a_shape, data))
    }

    /// Combine every row of `a` (R×C) with the length-C vector `v`.
    pub fn bcast_rows(&mut self, a: Var, v: Var, kind: ElemKind) -> Result<Var, TensorError> {
        self.bcast(a, v, BcastAxis::Rows, kind)
    }

    /// Combine every column of `a` (R×C) with the length-R vector `v`.
    pub fn bcast_cols(&mut self, a: Var, v: Var, kind: ElemKind) -> Result<Var, TensorError> {
        self.bcast(a, v, BcastAxis::Cols, kind)
    }

    fn matmul_dims(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        transpose_a: bool,
        transpose_b: bool,
    ) -> Result<(usize, usize, usize), TensorError> {
        let sa = &self.nodes[a.0].shape;
        let sb = &self.nodes[b.0].shape;
        let mismatch = || TensorError::DimMismatch {
            op,
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() != 2 || sb.len() != 2 {
            return Err(mismatch());
        }
        let (m, ka) = if transpose_a {
            (sa[1], sa[0])
        } else {
            (sa[0], sa[1])
        };
        let (kb, n) = if transpose_b {
            (sb[1], sb[0])
        } else {
            (sb[0], sb[1])
        };
        if ka != kb {
            return Err(mismatch());
        }
        Ok((m, ka, n))
    }

    /// a[m×k] · b[k×n]
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k, n) = self.matmul_dims("matmul", a, b, false, false)?;
        let mut out = vec![0.0; m * n];
        kernels::matmul(
            &self.nodes[a.0].data,
            &self.nodes[b.0].data,
            &mut out,
            m,
            k,
            n,
        );
        Ok(self.push(Op::Matmul(a, b), vec![m, n], out))
    }

    /// aᵀ · b with a[k×m], b[k×n]
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k, n) = self.matmul_dims("matmul_tn", a, b, true, false)?;
        let mut out = vec![0.0; m * n];
        kernels::matmul_tn_acc(
            &self.nodes[a.0].data,
            &self.nodes[b.0].data,
            &mut out,
            m,
            k,
            n,
        );
        Ok(self.push(Op::MatmulTn(a, b), vec![m, n], out))
    }

    /// a · bᵀ with a[m×k], b[n×k]
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k, n) = self.matmul_dims("matmul_nt", a, b, false, true)?;
        let mut out = vec![0.0; m * n];
        kernels::matmul_nt_acc(
            &self.nodes[a.0].data,
            &self.nodes[b.0].data,
            &mut out,
            m,
            k,
            n,
        );
        Ok(self.push(Op::MatmulNt(a, b), vec![m, n], out))
    }

    /// Numerically stable softmax along `axis`: max is subtracted before
    /// exponentiation, so arbitrarily large inputs cannot overflow.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let shape = self.nodes[x.0].shape.clone();
        if axis >= shape.len() {
            return Err(TensorError::AxisOutOfRange {
                op: "softmax",
                axis,
                rank: shape.len(),
            });
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let xv = &self.nodes[x.0].data;
        let mut data = vec![0.0; xv.len()];
        for o in 0..outer {
            for ii in 0..inner {
                let idx = |i: usize| (o * len + i) * inner + ii;
                let mut max = f64::NEG_INFINITY;
                for i in 0..len {
                    max = max.max(xv[idx(i)]);
                }
                let mut denom = 0.0;
                for i in 0..len {
                    let e = (xv[idx(i)] - max).exp();
                    data[idx(i)] = e;
                    denom += e;
                }
                for i in 0..len {
                    data[idx(i)] /= denom;
                }
            }
        }
        Ok(self.push(Op::Softmax { x, axis }, shape, data))
    }

    /// Gated linear unit along `axis`: the first half of the axis is the
    /// value, the second half the gate; out = value ⊙ sigmoid(gate).
    pub fn glu(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let shape = self.nodes[x.0].shape.clone();
        if axis >= shape.len() {
            return Err(TensorError::AxisOutOfRange {
                op: "glu",
                axis,
                rank: shape.len(),
            });
        }
        if shape[axis] % 2 != 0 {
            return Err(TensorError::OddSplitDim {
                op: "glu",
                dim: shape[axis],
            });
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let half = len / 2;
        let xv = &self.nodes[x.0].data;
        let mut out_shape = shape.clone();
        out_shape[axis] = half;
        let mut data = vec![0.0; numel_of(&out_shape)];
        for o in 0..outer {
            for i in 0..half {
                for ii in 0..inner {
                    let a = xv[(o * len + i) * inner + ii];
                    let g = xv[(o * len + half + i) * inner + ii];
                    data[(o * half + i) * inner + ii] = a * sigmoid(g);
                }
            }
        }
        Ok(self.push(Op::Glu { x, axis }, out_shape, data))
    }

    /// Valid (unpadded) strided 1-D convolution of a single sequence.
    /// Output length is ⌊(len − k)/stride⌋ + 1.
    pub fn conv1d_valid(&mut self, x: Var, w: Var, stride: usize) -> Result<Var, TensorError> {
        let (xs, ws) = (&self.nodes[x.0].shape, &self.nodes[w.0].shape);
        if xs.len() != 1 {
            return Err(TensorError::RankMismatch {
                op: "conv1d_valid",
                expected: 1,
                shape: xs.clone(),
            });
        }
        if ws.len() != 1 {
            return Err(TensorError::RankMismatch {
                op: "conv1d_valid",
                expected: 1,
                shape: ws.clone(),
            });
        }
        if stride == 0 {
            return Err(TensorError::Invalid("conv1d_valid: stride must be positive".into()));
        }
        let (lin, k) = (xs[0], ws[0]);
        if lin < k {
            return Err(TensorError::KernelLongerThanInput {
                op: "conv1d_valid",
                kernel: k,
                input: lin,
            });
        }
        let lout = (lin - k) / stride + 1;
        let mut out = vec![0.0; lout];
        kernels::conv1d_valid(&self.nodes[x.0].data, &self.nodes[w.0].data, stride, &mut out);
        Ok(self.push(Op::Conv1dValid { x, w, stride }, vec![lout], out))
    }

    /// Length-preserving 1-D convolution with zero padding; the kernel must
    /// be odd so that the padding (k−1)/2 is exact on both sides.
    pub fn conv1d_same(&mut self, x: Var, w: Var) -> Result<Var, TensorError> {
        let (xs, ws) = (&self.nodes[x.0].shape, &self.nodes[w.0].shape);
        if xs.len() != 1 || ws.len() != 1 {
            return Err(TensorError::RankMismatch {
                op: "conv1d_same",
                expected: 1,
                shape: if xs.len() != 1 { xs.clone() } else { ws.clone() },
            });
        }
        if ws[0] % 2 == 0 {
            return Err(TensorError::EvenKernel {
                op: "conv1d_same",
                kernel: ws[0],
            });
        }
        let mut out = vec![0.0; xs[0]];
        kernels::conv1d_same(&self.nodes[x.0].data, &self.nodes[w.0].data, &mut out);
        Ok(self.push(Op::Conv1dSame { x, w }, vec![xs[0]], out))
    }

    /// Strided transposed convolution: h is L×M (M representations per
    /// position), w is K×M; out[i·stride + j] += Σ_m h[i,m]·w[j,m].
    /// Output length is (L−1)·stride + K.
    pub fn transposed_conv1d(&mut self, h: Var, w: Var, stride: usize) -> Result<Var, TensorError> {
        let (hs, ws) = (
            self.nodes[h.0].shape.clone(),
            self.nodes[w.0].shape.clone(),
        );
        if hs.len() != 2 || ws.len() != 2 || hs[1] != ws[1] {
            return Err(TensorError::DimMismatch {
                op: "transposed_conv1d",
                lhs: hs,
                rhs: ws,
            });
        }
        if stride == 0 {
            return Err(TensorError::Invalid(
                "transposed_conv1d: stride must be positive".into(),
            ));
        }
        let (l, reps, k) = (hs[0], hs[1], ws[0]);
        let lout = (l - 1) * stride + k;
        let mut out = vec![0.0; lout];
        kernels::transposed_conv1d_acc(
            &self.nodes[h.0].data,
            &self.nodes[w.0].data,
            stride,
            reps,
            &mut out,
        );
        Ok(self.push(Op::TransposedConv1d { h, w, stride }, vec![lout], out))
    }

    /// Multi-channel valid convolution: x is cin×lin, w is cout×cin×k.
    pub fn conv1d_mc(&mut self, x: Var, w: Var, stride: usize) -> Result<Var, TensorError> {
        let (xs, ws) = (
            self.nodes[x.0].shape.clone(),
            self.nodes[w.0].shape.clone(),
        );
        if xs.len() != 2 || ws.len() != 3 || ws[1] != xs[0] {
            return Err(TensorError::DimMismatch {
                op: "conv1d_mc",
                lhs: xs,
                rhs: ws,
            });
        }
        let (cin, lin, cout, k) = (xs[0], xs[1], ws[0], ws[2]);
        if lin < k {
            return Err(TensorError::KernelLongerThanInput {
                op: "conv1d_mc",
                kernel: k,
                input: lin,
            });
        }
        let lout = (lin - k) / stride + 1;
        let mut out = vec![0.0; cout * lout];
        kernels::conv1d_mc(
            &self.nodes[x.0].data,
            &self.nodes[w.0].data,
            stride,
            cin,
            lin,
            cout,
            k,
            &mut out,
        );
        Ok(self.push(Op::Conv1dMc { x, w, stride }, vec![cout, lout], out))
    }

    /// Multi-channel transposed convolution: h is cin×l, w is cin×cout×k.
    pub fn transposed_conv1d_mc(
        &mut self,
        h: Var,
        w: Var,
        stride: usize,
    ) -> Result<Var, TensorError> {
        let (hs, ws) = (
            self.nodes[h.0].shape.clone(),
            self.nodes[w.0].shape.clone(),
        );
        if hs.len() != 2 || ws.len() != 3 || ws[0] != hs[0] {
            return Err(TensorError::DimMismatch {
                op: "transposed_conv1d_mc",
                lhs: hs,
                rhs: ws,
            });
        }
        let (cin, l, cout, k) = (hs[0], hs[1], ws[1], ws[2]);
        let lout = (l - 1) * stride + k;
        let mut out = vec![0.0; cout * lout];
        kernels::transposed_conv1d_mc_acc(
            &self.nodes[h.0].data,
            &self.nodes[w.0].data,
            stride,
            cin,
            l,
            cout,
            k,
            &mut out,
        );
        Ok(self.push(Op::TransposedConv1dMc { h, w, stride }, vec![cout, lout], out))
    }

    /// Depthwise length-preserving convolution producing a gate pair:
    /// x is L×F, w is K'×2 (shared across features), optional bias of
    /// length 2; out[t,f,g] = Σ_j x[t−pad+j, f]·w[j,g] + b[g].
    pub fn depthwise_pair_same(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
    ) -> Result<Var, TensorError> {
        let (xs, ws) = (
            self.nodes[x.0].shape.clone(),
            self.nodes[w.0].shape.clone(),
        );
        if xs.len() != 2 || ws.len() != 2 || ws[1] != 2 {
            return Err(TensorError::DimMismatch {
                op: "depthwise_pair_same",
                lhs: xs,
                rhs: ws,
            });
        }
        if ws[0] % 2 == 0 {
            return Err(TensorError::EvenKernel {
                op: "depthwise_pair_same",
                kernel: ws[0],
            });
        }
        if let Some(b) = b {
            let bs = &self.nodes[b.0].shape;
            if bs.as_slice() != [2] {
                return Err(TensorError::DimMismatch {
                    op: "depthwise_pair_same",
                    lhs: ws,
                    rhs: bs.clone(),
                });
            }
        }
        let (len, feats, k) = (xs[0], xs[1], ws[0]);
        let pad = (k - 1) / 2;
        let xv = &self.nodes[x.0].data;
        let wv = &self.nodes[w.0].data;
        let bias = b.map(|b| [self.nodes[b.0].data[0], self.nodes[b.0].data[1]]);
        let mut out = vec![0.0; len * feats * 2];
        for t in 0..len {
            for j in 0..k {
                let src = t as isize - pad as isize + j as isize;
                if src < 0 || src >= len as isize {
                    continue;
                }
                let row = &xv[src as usize * feats..(src as usize + 1) * feats];
                let (w0, w1) = (wv[j * 2], wv[j * 2 + 1]);
                let seg = &mut out[t * feats * 2..(t + 1) * feats * 2];
                for (f, &xvv) in row.iter().enumerate() {
                    seg[f * 2] += xvv * w0;
                    seg[f * 2 + 1] += xvv * w1;
                }
            }
            if let Some([b0, b1]) = bias {
                let seg = &mut out[t * feats * 2..(t + 1) * feats * 2];
                for f in 0..feats {
                    seg[f * 2] += b0;
                    seg[f * 2 + 1] += b1;
                }
            }
        }
        Ok(self.push(
            Op::DepthwisePairSame { x, w, b },
            vec![len, feats, 2],
            out,
        ))
    }

    /// View under a new shape with identical element count.
    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, TensorError> {
        let expected = numel_of(&shape);
        if expected != self.nodes[x.0].data.len() {
            return Err(TensorError::ShapeDataMismatch {
                expected,
                actual: self.nodes[x.0].data.len(),
                shape,
            });
        }
        let data = self.nodes[x.0].data.clone();
        Ok(self.push(Op::Reshape(x), shape, data))
    }

    /// Select one index along `axis`, dropping that axis.
    pub fn index_axis(&mut self, x: Var, axis: usize, index: usize) -> Result<Var, TensorError> {
        let shape = self.nodes[x.0].shape.clone();
        if axis >= shape.len() {
            return Err(TensorError::AxisOutOfRange {
                op: "index_axis",
                axis,
                rank: shape.len(),
            });
        }
        if index >= shape[axis] {
            return Err(TensorError::IndexOutOfRange {
                op: "index_axis",
                index,
                len: shape[axis],
            });
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let xv = &self.nodes[x.0].data;
        let mut data = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let base = (o * len + index) * inner;
            data.extend_from_slice(&xv[base..base + inner]);
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        Ok(self.push(Op::IndexAxis { x, axis, index }, out_shape, data))
    }

    /// Contiguous range along an existing axis.
    pub fn narrow(
        &mut self,
        x: Var,
        axis: usize,
        start: usize,
        len: usize,
    ) -> Result<Var, TensorError> {
        let shape = self.nodes[x.0].shape.clone();
        if axis >= shape.len() {
            return Err(TensorError::AxisOutOfRange {
                op: "narrow",
                axis,
                rank: shape.len(),
            });
        }
        if start + len > shape[axis] {
            return Err(TensorError::IndexOutOfRange {
                op: "narrow",
                index: start + len,
                len: shape[axis],
            });
        }
        let (outer, axis_len, inner) = axis_split(&shape, axis);
        let xv = &self.nodes[x.0].data;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * axis_len + start) * inner;
            data.extend_from_slice(&xv[base..base + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        Ok(self.push(
            Op::Narrow {
                x,
                axis,
                start,
                len,
            },
            out_shape,
            data,
        ))
    }

    /// Stack equally shaped tensors along a new axis inserted at `axis`.
    pub fn stack(&mut self, xs: &[Var], axis: usize) -> Result<Var, TensorError> {
        if xs.is_empty() {
            return Err(TensorError::Invalid("stack: empty input list".into()));
        }
        let base_shape = self.nodes[xs[0].0].shape.clone();
        if axis > base_shape.len() {
            return Err(TensorError::AxisOutOfRange {
                op: "stack",
                axis,
                rank: base_shape.len() + 1,
            });
        }
        for &x in xs {
            if self.nodes[x.0].shape != base_shape {
                return Err(TensorError::DimMismatch {
                    op: "stack",
                    lhs: base_shape,
                    rhs: self.nodes[x.0].shape.clone(),
                });
            }
        }
        let mut out_shape = base_shape.clone();
        out_shape.insert(axis, xs.len());
        let (outer, n, inner) = axis_split(&out_shape, axis);
        let mut data = vec![0.0; outer * n * inner];
        for (i, &x) in xs.iter().enumerate() {
            let xv = &self.nodes[x.0].data;
            for o in 0..outer {
                let dst = (o * n + i) * inner;
                data[dst..dst + inner].copy_from_slice(&xv[o * inner..(o + 1) * inner]);
            }
        }
        Ok(self.push(
            Op::Stack {
                xs: xs.to_vec(),
                axis,
            },
            out_shape,
            data,
        ))
    }

    /// Concatenate tensors of equal rank along an existing axis.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var, TensorError> {
        if xs.is_empty() {
            return Err(TensorError::Invalid("concat: empty input list".into()));
        }
        let first = self.nodes[xs[0].0].shape.clone();
        if axis >= first.len() {
            return Err(TensorError::AxisOutOfRange {
                op: "concat",
                axis,
                rank: first.len(),
            });
        }
        let mut total = 0;
        for &x in xs {
            let s = &self.nodes[x.0].shape;
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::DimMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: s.clone(),
                });
            }
            total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = axis_split(&out_shape, axis);
        let mut data = vec![0.0; outer * total * inner];
        let mut offset = 0;
        for &x in xs {
            let len = self.nodes[x.0].shape[axis];
            let xv = &self.nodes[x.0].data;
            for o in 0..outer {
                let dst = (o * total + offset) * inner;
                let src = o * len * inner;
                data[dst..dst + len * inner].copy_from_slice(&xv[src..src + len * inner]);
            }
            offset += len;
        }
        Ok(self.push(
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            out_shape,
            data,
        ))
    }

    /// Reverse sweep from a scalar root. Adjoints of interior nodes are
    /// recomputed fresh on every call; leaf gradients accumulate additively
    /// until [`Tape::zero_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: self.nodes[loss.0].shape.clone(),
            });
        }
        let mut adjoints: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adjoints[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = adjoints[id].take() else {
                continue;
            };
            if !self.nodes[id].needs_grad {
                continue;
            }
            if matches!(self.nodes[id].op, Op::Leaf) {
                match &mut self.grads[id] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, d)| *a += d),
                    slot => *slot = Some(g),
                }
                continue;
            }
            super::backward::backward_op(&self.nodes, &mut adjoints, id, &g);
        }
        Ok(())
    }
}

pub(super) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(super) fn apply_elem(kind: ElemKind, x: f64, y: f64) -> f64 {
    match kind {
        ElemKind::Add => x + y,
        ElemKind::Sub => x - y,
        ElemKind::Mul => x * y,
        ElemKind::Div => x / y,
    }
}
