//! Vector-Jacobian products for every tape operation.

use super::kernels;
use super::tape::{axis_split, sigmoid, BcastAxis, ElemKind, Node, Op};

/// Get (allocating if needed) the adjoint buffer of node `id`, or None when
/// the node does not participate in gradient propagation.
fn adj<'a>(
    nodes: &[Node],
    adjoints: &'a mut [Option<Vec<f64>>],
    id: usize,
) -> Option<&'a mut Vec<f64>> {
    if !nodes[id].needs_grad {
        return None;
    }
    Some(adjoints[id].get_or_insert_with(|| vec![0.0; nodes[id].data.len()]))
}

pub(super) fn backward_op(
    nodes: &[Node],
    adjoints: &mut [Option<Vec<f64>>],
    id: usize,
    g: &[f64],
) {
    match &nodes[id].op {
        Op::Leaf => unreachable!("leaf adjoints are folded into grads"),

        Op::Add(a, b) => {
            if let Some(ga) = adj(nodes, adjoints, a.0) {
                ga.iter_mut().zip(g).for_each(|(x, d)| *x += d);
            }
            if let Some(gb) = adj(nodes, adjoints, b.0) {
                gb.iter_mut().zip(g).for_each(|(x, d)| *x += d);
            }
        }
        Op::Sub(a, b) => {
            if let Some(ga) = adj(nodes, adjoints, a.0) {
                ga.iter_mut().zip(g).for_each(|(x, d)| *x += d);
            }
            if let Some(gb) = adj(nodes, adjoints, b.0) {
                gb.iter_mut().zip(g).for_each(|(x, d)| *x -= d);
            }
        }
        Op::Mul(a, b) => {
            let (a, b) = (*a, *b);
            if nodes[a.0].needs_grad {
                let bv = nodes[b.0].data.clone();
                let ga = adj(nodes, adjoints, a.0).unwrap();
                for ((x, d), y) in ga.iter_mut().zip(g).zip(&bv) {
                    *x += d * y;
                }
            }
            if nodes[b.0].needs_grad {
                let av = nodes[a.0].data.clone();
                let gb = adj(nodes, adjoints, b.0).unwrap();
                for ((x, d), y) in gb.iter_mut().zip(g).zip(&av) {
                    *x += d * y;
                }
            }
        }
        Op::AddScalar(a) => {
            if let Some(ga) = adj(nodes, adjoints, a.0) {
                ga.iter_mut().zip(g).for_each(|(x, d)| *x += d);
            }
        }
        Op::MulScalar(a, c) => {
            let c = *c;
            if let Some(ga) = adj(nodes, adjoints, a.0) {
                ga.iter_mut().zip(g).for_each(|(x, d)| *x += c * d);
            }
        }
        Op::Abs(a) => {
            let a = *a;
            let xv = &nodes[a.0].data;
            let contrib: Vec<f64> = g
                .iter()
                .zip(xv)
                .map(|(d, x)| {
                    if *x > 0.0 {
                        *d
                    } else if *x < 0.0 {
                        -*d
                    } else {
                        0.0
                    }
                })
                .collect();
            if let Some(ga) = adj(nodes, adjoints, a.0) {
                ga.iter_mut().zip(&contrib).for_each(|(x, d)| *x += d);
            }
        }
        Op::Relu(a) => {
            let a = *a;
            let contrib: Vec<f64> = g
                .iter()
                .zip(&nodes[a.0].data)
                .map(|(d, x)| if *x > 0.0 { *d } else { 0.0 })
                .collect();
            if let Some(ga) = adj(nodes, adjoints, a.0) {
                ga.iter_mut().zip(&contrib).for_each(|(x, d)| *x += d);
            }
        }
        Op::Sigmoid(a) => {
            let a = *a;
            let contrib: Vec<f64> = g
                .iter()
                .zip(&nodes[id].data)
                .map(|(d, y)| d * y * (1.0 - y))
                .collect();
            if let Some(ga) = adj(nodes, adjoints, a.0) {
                ga.iter_mut().zip(&contrib).for_each(|(x, d)| *x += d);
            }
        }
        Op::Sqrt(a) => {
            let a = *a;
            let contrib: Vec<f64> = g
                .iter()
                .zip(&nodes[id].data)
                .map(|(d, y)| d / (2.0 * y))
                .collect();
            if let Some(ga) = adj(nodes, adjoints, a.0) {
                ga.iter_mut().zip(&contrib).for_each(|(x, d)| *x += d);
            }
        }
        Op::SumAll(a) => {
            let g0 = g[0];
            if let Some(ga) = adj(nodes, adjoints, a.0) {
                ga.iter_mut().for_each(|x| *x += g0);
            }
        }
        Op::MeanAll(a) => {
            let a = *a;
            let scale = g[0] / nodes[a.0].data.len() as f64;
            if let Some(ga) = adj(nodes, adjoints, a.0) {
                ga.iter_mut().for_each(|x| *x += scale);
            }
        }
        Op::MeanAxis(a, axis) => {
            let (a, axis) = (*a, *axis);
            let shape = &nodes[a.0].shape;
            let (rows, cols) = (shape[0], shape[1]);
            if let Some(ga) = adj(nodes, adjoints, a.0) {
                if axis == 0 {
                    let inv = 1.0 / rows as f64;
                    for r in 0..rows {
                        for (x, d) in ga[r * cols..(r + 1) * cols].iter_mut().zip(g) {
                            *x += d * inv;
                        }
                    }
                } else {
                    let inv = 1.0 / cols as f64;
                    for r in 0..rows {
                        let d = g[r] * inv;
                        for x in &mut ga[r * cols..(r + 1) * cols] {
                            *x += d;
                        }
                    }
                }
            }
        }
        Op::Bcast { a, v, axis, kind } => {
            let (a, v, axis, kind) = (*a, *v, *axis, *kind);
            let shape = &nodes[a.0].shape;
            let (rows, cols) = (shape[0], shape[1]);
            let pick = |vv: &[f64], r: usize, c: usize| match axis {
                BcastAxis::Rows => vv[c],
                BcastAxis::Cols => vv[r],
            };
            if nodes[a.0].needs_grad {
                let vv = nodes[v.0].data.clone();
                let ga = adj(nodes, adjoints, a.0).unwrap();
                match kind {
                    ElemKind::Add | ElemKind::Sub => {
                        ga.iter_mut().zip(g).for_each(|(x, d)| *x += d)
                    }
                    ElemKind::Mul => {
                        for r in 0..rows {
                            for c in 0..cols {
                                ga[r * cols + c] += g[r * cols + c] * pick(&vv, r, c);
                            }
                        }
                    }
                    ElemKind::Div => {
                        for r in 0..rows {
                            for c in 0..cols {
                                ga[r * cols + c] += g[r * cols + c] / pick(&vv, r, c);
                            }
                        }
                    }
                }
            }
            if nodes[v.0].needs_grad {
                let av = nodes[a.0].data.clone();
                let vv = nodes[v.0].data.clone();
                let gv = adj(nodes, adjoints, v.0).unwrap();
                for r in 0..rows {
                    for c in 0..cols {
                        let d = g[r * cols + c];
                        let idx = match axis {
                            BcastAxis::Rows => c,
                            BcastAxis::Cols => r,
                        };
                        gv[idx] += match kind {
                            ElemKind::Add => d,
                            ElemKind::Sub => -d,
                            ElemKind::Mul => d * av[r * cols + c],
                            ElemKind::Div => {
                                let y = vv[idx];
                                -d * av[r * cols + c] / (y * y)
                            }
                        };
                    }
                }
            }
        }
        Op::Matmul(a, b) => {
            let (a, b) = (*a, *b);
            let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
            let n = nodes[b.0].shape[1];
            if nodes[a.0].needs_grad {
                let bv = nodes[b.0].data.clone();
                let ga = adj(nodes, adjoints, a.0).unwrap();
                // d_a = g · bᵀ
                kernels::matmul_nt_acc(g, &bv, ga, m, n, k);
            }
            if nodes[b.0].needs_grad {
                let av = nodes[a.0].data.clone();
                let gb = adj(nodes, adjoints, b.0).unwrap();
                // d_b = aᵀ · g
                kernels::matmul_tn_acc(&av, g, gb, k, m, n);
            }
        }
        Op::MatmulTn(a, b) => {
            // out = aᵀ·b, a: k×m, b: k×n, g: m×n
            let (a, b) = (*a, *b);
            let (k, m) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
            let n = nodes[b.0].shape[1];
            if nodes[a.0].needs_grad {
                let bv = nodes[b.0].data.clone();
                let ga = adj(nodes, adjoints, a.0).unwrap();
                // d_a = b · gᵀ  (k×n · n×m)
                kernels::matmul_nt_acc(&bv, g, ga, k, n, m);
            }
            if nodes[b.0].needs_grad {
                let av = nodes[a.0].data.clone();
                let gb = adj(nodes, adjoints, b.0).unwrap();
                // d_b = a · g  (k×m · m×n)
                kernels::matmul_acc(&av, g, gb, k, m, n);
            }
        }
        Op::MatmulNt(a, b) => {
            // out = a·bᵀ, a: m×k, b: n×k, g: m×n
            let (a, b) = (*a, *b);
            let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
            let n = nodes[b.0].shape[0];
            if nodes[a.0].needs_grad {
                let bv = nodes[b.0].data.clone();
                let ga = adj(nodes, adjoints, a.0).unwrap();
                // d_a = g · b  (m×n · n×k)
                kernels::matmul_acc(g, &bv, ga, m, n, k);
            }
            if nodes[b.0].needs_grad {
                let av = nodes[a.0].data.clone();
                let gb = adj(nodes, adjoints, b.0).unwrap();
                // d_b = gᵀ · a  (n×m · m×k)
                kernels::matmul_tn_acc(g, &av, gb, n, m, k);
            }
        }
        Op::Softmax { x, axis } => {
            let (x, axis) = (*x, *axis);
            let shape = &nodes[id].shape;
            let (outer, len, inner) = axis_split(shape, axis);
            let y = &nodes[id].data;
            let mut contrib = vec![0.0; y.len()];
            for o in 0..outer {
                for ii in 0..inner {
                    let idx = |i: usize| (o * len + i) * inner + ii;
                    let mut dot = 0.0;
                    for i in 0..len {
                        dot += g[idx(i)] * y[idx(i)];
                    }
                    for i in 0..len {
                        contrib[idx(i)] = y[idx(i)] * (g[idx(i)] - dot);
                    }
                }
            }
            if let Some(gx) = adj(nodes, adjoints, x.0) {
                gx.iter_mut().zip(&contrib).for_each(|(a, d)| *a += d);
            }
        }
        Op::Glu { x, axis } => {
            let (x, axis) = (*x, *axis);
            let in_shape = &nodes[x.0].shape;
            let (outer, len, inner) = axis_split(in_shape, axis);
            let half = len / 2;
            let xv = nodes[x.0].data.clone();
            if let Some(gx) = adj(nodes, adjoints, x.0) {
                for o in 0..outer {
                    for i in 0..half {
                        for ii in 0..inner {
                            let a_idx = (o * len + i) * inner + ii;
                            let g_idx = (o * len + half + i) * inner + ii;
                            let d = g[(o * half + i) * inner + ii];
                            let s = sigmoid(xv[g_idx]);
                            gx[a_idx] += d * s;
                            gx[g_idx] += d * xv[a_idx] * s * (1.0 - s);
                        }
                    }
                }
            }
        }
        Op::Conv1dValid { x, w, stride } => {
            let (x, w, stride) = (*x, *w, *stride);
            let k = nodes[w.0].shape[0];
            if nodes[x.0].needs_grad {
                let wv = nodes[w.0].data.clone();
                let gx = adj(nodes, adjoints, x.0).unwrap();
                for (i, &d) in g.iter().enumerate() {
                    for (j, &wj) in wv.iter().enumerate() {
                        gx[i * stride + j] += d * wj;
                    }
                }
            }
            if nodes[w.0].needs_grad {
                let xv = nodes[x.0].data.clone();
                let gw = adj(nodes, adjoints, w.0).unwrap();
                for (i, &d) in g.iter().enumerate() {
                    for j in 0..k {
                        gw[j] += d * xv[i * stride + j];
                    }
                }
            }
        }
        Op::Conv1dSame { x, w } => {
            let (x, w) = (*x, *w);
            let n = nodes[x.0].shape[0] as isize;
            let k = nodes[w.0].shape[0];
            let pad = (k as isize - 1) / 2;
            if nodes[x.0].needs_grad {
                let wv = nodes[w.0].data.clone();
                let gx = adj(nodes, adjoints, x.0).unwrap();
                for (t, &d) in g.iter().enumerate() {
                    for (j, &wj) in wv.iter().enumerate() {
                        let src = t as isize - pad + j as isize;
                        if src >= 0 && src < n {
                            gx[src as usize] += d * wj;
                        }
                    }
                }
            }
            if nodes[w.0].needs_grad {
                let xv = nodes[x.0].data.clone();
                let gw = adj(nodes, adjoints, w.0).unwrap();
                for (t, &d) in g.iter().enumerate() {
                    for (j, gwj) in gw.iter_mut().enumerate() {
                        let src = t as isize - pad + j as isize;
                        if src >= 0 && src < n {
                            *gwj += d * xv[src as usize];
                        }
                    }
                }
            }
        }
        Op::TransposedConv1d { h, w, stride } => {
            let (h, w, stride) = (*h, *w, *stride);
            let (l, reps) = (nodes[h.0].shape[0], nodes[h.0].shape[1]);
            let k = nodes[w.0].shape[0];
            if nodes[h.0].needs_grad {
                let wv = nodes[w.0].data.clone();
                let gh = adj(nodes, adjoints, h.0).unwrap();
                for i in 0..l {
                    for j in 0..k {
                        let d = g[i * stride + j];
                        for m in 0..reps {
                            gh[i * reps + m] += d * wv[j * reps + m];
                        }
                    }
                }
            }
            if nodes[w.0].needs_grad {
                let hv = nodes[h.0].data.clone();
                let gw = adj(nodes, adjoints, w.0).unwrap();
                for i in 0..l {
                    for j in 0..k {
                        let d = g[i * stride + j];
                        for m in 0..reps {
                            gw[j * reps + m] += d * hv[i * reps + m];
                        }
                    }
                }
            }
        }
        Op::Conv1dMc { x, w, stride } => {
            let (x, w, stride) = (*x, *w, *stride);
            let (cin, lin) = (nodes[x.0].shape[0], nodes[x.0].shape[1]);
            let (cout, k) = (nodes[w.0].shape[0], nodes[w.0].shape[2]);
            let lout = (lin - k) / stride + 1;
            if nodes[x.0].needs_grad {
                let wv = nodes[w.0].data.clone();
                let gx = adj(nodes, adjoints, x.0).unwrap();
                for co in 0..cout {
                    for ci in 0..cin {
                        let w_row = &wv[(co * cin + ci) * k..(co * cin + ci + 1) * k];
                        let gx_row = &mut gx[ci * lin..(ci + 1) * lin];
                        for t in 0..lout {
                            let d = g[co * lout + t];
                            if d == 0.0 {
                                continue;
                            }
                            let base = t * stride;
                            for (j, &wj) in w_row.iter().enumerate() {
                                gx_row[base + j] += d * wj;
                            }
                        }
                    }
                }
            }
            if nodes[w.0].needs_grad {
                let xv = nodes[x.0].data.clone();
                let gw = adj(nodes, adjoints, w.0).unwrap();
                for co in 0..cout {
                    for ci in 0..cin {
                        let x_row = &xv[ci * lin..(ci + 1) * lin];
                        let gw_row = &mut gw[(co * cin + ci) * k..(co * cin + ci + 1) * k];
                        for t in 0..lout {
                            let d = g[co * lout + t];
                            if d == 0.0 {
                                continue;
                            }
                            let base = t * stride;
                            for (j, gwj) in gw_row.iter_mut().enumerate() {
                                *gwj += d * x_row[base + j];
                            }
                        }
                    }
                }
            }
        }
        Op::TransposedConv1dMc { h, w, stride } => {
            let (h, w, stride) = (*h, *w, *stride);
            let (cin, l) = (nodes[h.0].shape[0], nodes[h.0].shape[1]);
            let (cout, k) = (nodes[w.0].shape[1], nodes[w.0].shape[2]);
            let lout = (l - 1) * stride + k;
            if nodes[h.0].needs_grad {
                let wv = nodes[w.0].data.clone();
                let gh = adj(nodes, adjoints, h.0).unwrap();
                for ci in 0..cin {
                    for co in 0..cout {
                        let w_row = &wv[(ci * cout + co) * k..(ci * cout + co + 1) * k];
                        let g_row = &g[co * lout..(co + 1) * lout];
                        for i in 0..l {
                            let mut acc = 0.0;
                            for (j, &wj) in w_row.iter().enumerate() {
                                acc += g_row[i * stride + j] * wj;
                            }
                            gh[ci * l + i] += acc;
                        }
                    }
                }
            }
            if nodes[w.0].needs_grad {
                let hv = nodes[h.0].data.clone();
                let gw = adj(nodes, adjoints, w.0).unwrap();
                for ci in 0..cin {
                    for co in 0..cout {
                        let gw_row = &mut gw[(ci * cout + co) * k..(ci * cout + co + 1) * k];
                        let g_row = &g[co * lout..(co + 1) * lout];
                        for i in 0..l {
                            let hvv = hv[ci * l + i];
                            if hvv == 0.0 {
                                continue;
                            }
                            for (j, gwj) in gw_row.iter_mut().enumerate() {
                                *gwj += g_row[i * stride + j] * hvv;
                            }
                        }
                    }
                }
            }
        }
        Op::DepthwisePairSame { x, w, b } => {
            let (x, w, b) = (*x, *w, *b);
            let (len, feats) = (nodes[x.0].shape[0], nodes[x.0].shape[1]);
            let k = nodes[w.0].shape[0];
            let pad = (k as isize - 1) / 2;
            if nodes[x.0].needs_grad {
                let wv = nodes[w.0].data.clone();
                let gx = adj(nodes, adjoints, x.0).unwrap();
                for t in 0..len {
                    let g_seg = &g[t * feats * 2..(t + 1) * feats * 2];
                    for j in 0..k {
                        let src = t as isize - pad + j as isize;
                        if src < 0 || src >= len as isize {
                            continue;
                        }
                        let (w0, w1) = (wv[j * 2], wv[j * 2 + 1]);
                        let gx_row = &mut gx[src as usize * feats..(src as usize + 1) * feats];
                        for (f, gxf) in gx_row.iter_mut().enumerate() {
                            *gxf += g_seg[f * 2] * w0 + g_seg[f * 2 + 1] * w1;
                        }
                    }
                }
            }
            if nodes[w.0].needs_grad {
                let xv = nodes[x.0].data.clone();
                let gw = adj(nodes, adjoints, w.0).unwrap();
                for t in 0..len {
                    let g_seg = &g[t * feats * 2..(t + 1) * feats * 2];
                    for j in 0..k {
                        let src = t as isize - pad + j as isize;
                        if src < 0 || src >= len as isize {
                            continue;
                        }
                        let x_row = &xv[src as usize * feats..(src as usize + 1) * feats];
                        let (mut acc0, mut acc1) = (0.0, 0.0);
                        for (f, &xf) in x_row.iter().enumerate() {
                            acc0 += g_seg[f * 2] * xf;
                            acc1 += g_seg[f * 2 + 1] * xf;
                        }
                        gw[j * 2] += acc0;
                        gw[j * 2 + 1] += acc1;
                    }
                }
            }
            if let Some(b) = b {
                if let Some(gb) = adj(nodes, adjoints, b.0) {
                    for t in 0..len {
                        let g_seg = &g[t * feats * 2..(t + 1) * feats * 2];
                        for f in 0..feats {
                            gb[0] += g_seg[f * 2];
                            gb[1] += g_seg[f * 2 + 1];
                        }
                    }
                }
            }
        }
        Op::Reshape(a) => {
            if let Some(ga) = adj(nodes, adjoints, a.0) {
                ga.iter_mut().zip(g).for_each(|(x, d)| *x += d);
            }
        }
        Op::IndexAxis { x, axis, index } => {
            let (x, axis, index) = (*x, *axis, *index);
            let shape = &nodes[x.0].shape;
            let (outer, len, inner) = axis_split(shape, axis);
            if let Some(gx) = adj(nodes, adjoints, x.0) {
                for o in 0..outer {
                    let dst = (o * len + index) * inner;
                    for ii in 0..inner {
                        gx[dst + ii] += g[o * inner + ii];
                    }
                }
            }
        }
        Op::Narrow {
            x,
            axis,
            start,
            len,
        } => {
            let (x, axis, start, len) = (*x, *axis, *start, *len);
            let shape = &nodes[x.0].shape;
            let (outer, axis_len, inner) = axis_split(shape, axis);
            if let Some(gx) = adj(nodes, adjoints, x.0) {
                for o in 0..outer {
                    let dst = (o * axis_len + start) * inner;
                    let src = o * len * inner;
                    for ii in 0..len * inner {
                        gx[dst + ii] += g[src + ii];
                    }
                }
            }
        }
        Op::Stack { xs, axis } => {
            let shape = &nodes[id].shape;
            let (outer, n, inner) = axis_split(shape, *axis);
            for (i, x) in xs.iter().enumerate() {
                if let Some(gx) = adj(nodes, adjoints, x.0) {
                    for o in 0..outer {
                        let src = (o * n + i) * inner;
                        for ii in 0..inner {
                            gx[o * inner + ii] += g[src + ii];
                        }
                    }
                }
            }
        }
        Op::Concat { xs, axis } => {
            let shape = &nodes[id].shape;
            let (outer, total, inner) = axis_split(shape, *axis);
            let mut offset = 0;
            for x in xs {
                let len = nodes[x.0].shape[*axis];
                if let Some(gx) = adj(nodes, adjoints, x.0) {
                    for o in 0..outer {
                        let src = (o * total + offset) * inner;
                        let dst = o * len * inner;
                        for ii in 0..len * inner {
                            gx[dst + ii] += g[src + ii];
                        }
                    }
                }
                offset += len;
            }
        }
    }
}
