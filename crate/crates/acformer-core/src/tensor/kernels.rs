//! Raw f64 loops shared by the forward ops and their backward rules.
//!
//! All buffers are row-major. The `*_acc` variants add into `out` instead of
//! overwriting, which is what gradient accumulation needs.

/// out[m×n] = a[m×k] · b[k×n]
pub fn matmul(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    out.iter_mut().for_each(|v| *v = 0.0);
    matmul_acc(a, b, out, m, k, n);
}

/// out[m×n] += a[m×k] · b[k×n]
pub fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (t, &a_it) in a_row.iter().enumerate() {
            if a_it == 0.0 {
                continue;
            }
            let b_row = &b[t * n..(t + 1) * n];
            for (o, &b_tj) in out_row.iter_mut().zip(b_row) {
                *o += a_it * b_tj;
            }
        }
    }
}

/// out[m×n] += aᵀ · b where a is k×m, b is k×n.
pub fn matmul_tn_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for t in 0..k {
        let a_row = &a[t * m..(t + 1) * m];
        let b_row = &b[t * n..(t + 1) * n];
        for (i, &a_ti) in a_row.iter().enumerate() {
            if a_ti == 0.0 {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &b_tj) in out_row.iter_mut().zip(b_row) {
                *o += a_ti * b_tj;
            }
        }
    }
}

/// out[m×n] += a · bᵀ where a is m×k, b is n×k.
pub fn matmul_nt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            out[i * n + j] += acc;
        }
    }
}

/// Valid (unpadded) strided correlation: out[i] = Σ_j x[i·s+j]·w[j].
pub fn conv1d_valid(x: &[f64], w: &[f64], stride: usize, out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let base = i * stride;
        let mut acc = 0.0;
        for (j, &wj) in w.iter().enumerate() {
            acc += x[base + j] * wj;
        }
        *o = acc;
    }
}

/// Length-preserving correlation with zero padding of (k-1)/2 on each side.
pub fn conv1d_same(x: &[f64], w: &[f64], out: &mut [f64]) {
    let n = x.len() as isize;
    let pad = (w.len() as isize - 1) / 2;
    for (t, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, &wj) in w.iter().enumerate() {
            let src = t as isize - pad + j as isize;
            if src >= 0 && src < n {
                acc += x[src as usize] * wj;
            }
        }
        *o = acc;
    }
}

/// Strided scatter-add expansion: out[i·s+j] += Σ_m h[i,m]·w[j,m].
///
/// `h` is L×M, `w` is K×M, `out` has length (L-1)·s + K and must be zeroed
/// by the caller.
pub fn transposed_conv1d_acc(
    h: &[f64],
    w: &[f64],
    stride: usize,
    reps: usize,
    out: &mut [f64],
) {
    let k = w.len() / reps;
    let l = h.len() / reps;
    for i in 0..l {
        let h_row = &h[i * reps..(i + 1) * reps];
        let out_seg = &mut out[i * stride..i * stride + k];
        for (j, o) in out_seg.iter_mut().enumerate() {
            let w_row = &w[j * reps..(j + 1) * reps];
            let mut acc = 0.0;
            for (&hv, &wv) in h_row.iter().zip(w_row) {
                acc += hv * wv;
            }
            *o += acc;
        }
    }
}

/// Multi-channel valid conv: x is cin×lin, w is cout×cin×k, out is cout×lout.
pub fn conv1d_mc(
    x: &[f64],
    w: &[f64],
    stride: usize,
    cin: usize,
    lin: usize,
    cout: usize,
    k: usize,
    out: &mut [f64],
) {
    let lout = (lin - k) / stride + 1;
    out.iter_mut().for_each(|v| *v = 0.0);
    for co in 0..cout {
        let out_row = &mut out[co * lout..(co + 1) * lout];
        for ci in 0..cin {
            let x_row = &x[ci * lin..(ci + 1) * lin];
            let w_row = &w[(co * cin + ci) * k..(co * cin + ci + 1) * k];
            for (t, o) in out_row.iter_mut().enumerate() {
                let base = t * stride;
                let mut acc = 0.0;
                for (j, &wj) in w_row.iter().enumerate() {
                    acc += x_row[base + j] * wj;
                }
                *o += acc;
            }
        }
    }
}

/// Multi-channel transposed conv: h is cin×l, w is cin×cout×k,
/// out is cout×lout with lout = (l-1)·stride + k. Caller zeroes `out`.
pub fn transposed_conv1d_mc_acc(
    h: &[f64],
    w: &[f64],
    stride: usize,
    cin: usize,
    l: usize,
    cout: usize,
    k: usize,
    out: &mut [f64],
) {
    let lout = (l - 1) * stride + k;
    for ci in 0..cin {
        let h_row = &h[ci * l..(ci + 1) * l];
        for co in 0..cout {
            let w_row = &w[(ci * cout + co) * k..(ci * cout + co + 1) * k];
            let out_row = &mut out[co * lout..(co + 1) * lout];
            for (i, &hv) in h_row.iter().enumerate() {
                if hv == 0.0 {
                    continue;
                }
                let seg = &mut out_row[i * stride..i * stride + k];
                for (o, &wv) in seg.iter_mut().zip(w_row) {
                    *o += hv * wv;
                }
            }
        }
    }
}
