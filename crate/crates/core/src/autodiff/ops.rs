//! Differentiable operations recorded on a [`Graph`].

use std::f64::consts::PI;

use super::graph::{Graph, Var};
use crate::error::{config_err, data_err, dim_err, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `c (+)= op(a) · op(b)` where `op` optionally transposes. `a` is stored
/// row-major as `[m×k]` (or `[k×m]` when `ta`), `b` as `[k×n]` (or `[n×k]`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slice lengths are checked above against the dimensions the
    // strides are derived from, so every access stays in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Strided `c = a·b + beta·c` over `[m×k]·[k×n]`; strides are `(row, col)`
/// in elements. Panics if any addressed element lies outside its slice.
#[allow(clippy::too_many_arguments)]
fn gemm_strided(
    (m, k, n): (usize, usize, usize),
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |r: usize, cc: usize, rs: usize, cs: usize| (r - 1) * rs + (cc - 1) * cs;
    assert!(k == 0 || last(m, k, rsa, csa) < a.len(), "gemm: lhs out of bounds");
    assert!(k == 0 || last(k, n, rsb, csb) < b.len(), "gemm: rhs out of bounds");
    assert!(last(m, n, rsc, csc) < c.len(), "gemm: output out of bounds");
    // SAFETY: the asserts above bound the largest offset each operand is
    // addressed at; all strides are non-negative.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

fn matrix_dims(g: &Graph, v: Var, what: &str) -> Result<(usize, usize)> {
    match *g.shape(v) {
        [r, c] => Ok((r, c)),
        ref s => dim_err(format!("{what} must be 2-D, got shape {s:?}")),
    }
}

const GELU_C: f64 = 0.044_715;

/// `σ(2u)` with `u = √(2/π)(x + c·x³)`, which equals `(1 + tanh u)/2`.
fn gelu_gate(x: f64) -> f64 {
    let u = (2.0 / PI).sqrt() * (x + GELU_C * x * x * x);
    1.0 / (1.0 + (-2.0 * u).exp())
}

fn gelu_deriv(x: f64, s: f64) -> f64 {
    let du = (2.0 / PI).sqrt() * (1.0 + 3.0 * GELU_C * x * x);
    s + 2.0 * x * s * (1.0 - s) * du
}

impl Graph {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return dim_err(format!("add: {:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        self.custom(
            "add",
            &[a, b],
            shape,
            value,
            Box::new(|g, needs| {
                vec![needs[0].then(|| g.to_vec()), needs[1].then(|| g.to_vec())]
            }),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return dim_err(format!("mul: {:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        let (av, bv) = (self.shared_value(a), self.shared_value(b));
        let value = av.iter().zip(bv.iter()).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        self.custom(
            "mul",
            &[a, b],
            shape,
            value,
            Box::new(move |g, needs| {
                vec![
                    needs[0].then(|| g.iter().zip(bv.iter()).map(|(g, y)| g * y).collect()),
                    needs[1].then(|| g.iter().zip(av.iter()).map(|(g, x)| g * x).collect()),
                ]
            }),
        )
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let value = self.value(a).iter().map(|x| x * factor).collect();
        let shape = self.shape(a).to_vec();
        self.custom(
            "scale",
            &[a],
            shape,
            value,
            Box::new(move |g, _| vec![Some(g.iter().map(|v| v * factor).collect())]),
        )
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        let value = vec![self.value(a).iter().sum()];
        self.custom("sum", &[a], vec![1], value, Box::new(move |g, _| vec![Some(vec![g[0]; n])]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix_dims(self, a, "matmul lhs")?;
        let (k2, n) = matrix_dims(self, b, "matmul rhs")?;
        if k != k2 {
            return dim_err(format!("matmul inner dimensions {k} and {k2} differ"));
        }
        let (av, bv) = (self.shared_value(a), self.shared_value(b));
        let mut value = vec![0.0; m * n];
        gemm(m, k, n, &av, false, &bv, false, &mut value, false);
        self.custom(
            "matmul",
            &[a, b],
            vec![m, n],
            value,
            Box::new(move |g, needs| {
                let da = needs[0].then(|| {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g, false, &bv, true, &mut da, false);
                    da
                });
                let db = needs[1].then(|| {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, &av, true, g, false, &mut db, false);
                    db
                });
                vec![da, db]
            }),
        )
    }

    /// Affine map `x·W + b` with `x: [n×k]`, `W: [k×m]`, `b: [m]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, k) = matrix_dims(self, x, "linear input")?;
        let (k2, m) = matrix_dims(self, w, "linear weight")?;
        if k != k2 {
            return dim_err(format!("linear: input width {k} vs weight rows {k2}"));
        }
        if self.shape(b) != [m] {
            return dim_err(format!("linear: bias shape {:?}, expected [{m}]", self.shape(b)));
        }
        let (xv, wv) = (self.shared_value(x), self.shared_value(w));
        let mut value = vec![0.0; n * m];
        for row in value.chunks_exact_mut(m) {
            row.copy_from_slice(self.value(b));
        }
        gemm(n, k, m, &xv, false, &wv, false, &mut value, true);
        self.custom(
            "linear",
            &[x, w, b],
            vec![n, m],
            value,
            Box::new(move |g, needs| {
                let dx = needs[0].then(|| {
                    let mut dx = vec![0.0; n * k];
                    gemm(n, m, k, g, false, &wv, true, &mut dx, false);
                    dx
                });
                let dw = needs[1].then(|| {
                    let mut dw = vec![0.0; k * m];
                    gemm(k, n, m, &xv, true, g, false, &mut dw, false);
                    dw
                });
                let db = needs[2].then(|| {
                    let mut db = vec![0.0; m];
                    for row in g.chunks_exact(m) {
                        db.iter_mut().zip(row).for_each(|(d, r)| *d += r);
                    }
                    db
                });
                vec![dx, dw, db]
            }),
        )
    }

    /// Row gather from an embedding table `[V×E]`; output `[ids.len()×E]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, e) = matrix_dims(self, table, "embedding table")?;
        if let Some((pos, &bad)) = ids.iter().enumerate().find(|(_, &id)| id >= vocab) {
            return data_err(format!("token id {bad} at position {pos} outside vocabulary of {vocab}"));
        }
        let tv = self.value(table);
        let mut value = Vec::with_capacity(ids.len() * e);
        for &id in ids {
            value.extend_from_slice(&tv[id * e..(id + 1) * e]);
        }
        let ids = ids.to_vec();
        let n = ids.len();
        self.custom(
            "embedding",
            &[table],
            vec![n, e],
            value,
            Box::new(move |g, _| {
                let mut dt = vec![0.0; vocab * e];
                for (row, &id) in g.chunks_exact(e).zip(&ids) {
                    dt[id * e..(id + 1) * e].iter_mut().zip(row).for_each(|(d, r)| *d += r);
                }
                vec![Some(dt)]
            }),
        )
    }

    /// Picks rows of a `[n×d]` matrix.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (n, d) = matrix_dims(self, x, "select_rows input")?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return dim_err(format!("row {bad} out of range for {n} rows"));
        }
        let xv = self.value(x);
        let mut value = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            value.extend_from_slice(&xv[r * d..(r + 1) * d]);
        }
        let rows = rows.to_vec();
        let count = rows.len();
        self.custom(
            "select_rows",
            &[x],
            vec![count, d],
            value,
            Box::new(move |g, _| {
                let mut dx = vec![0.0; n * d];
                for (row, &r) in g.chunks_exact(d).zip(&rows) {
                    dx[r * d..(r + 1) * d].iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                vec![Some(dx)]
            }),
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let xv = self.shared_value(x);
        let value = xv.iter().map(|&v| v.max(0.0)).collect();
        let shape = self.shape(x).to_vec();
        self.custom(
            "relu",
            &[x],
            shape,
            value,
            Box::new(move |g, _| {
                vec![Some(g.iter().zip(xv.iter()).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect())]
            }),
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let xv = self.shared_value(x);
        let gates: Vec<f64> = xv.iter().map(|&v| gelu_gate(v)).collect();
        let value = xv.iter().zip(&gates).map(|(x, s)| x * s).collect();
        let shape = self.shape(x).to_vec();
        self.custom(
            "gelu",
            &[x],
            shape,
            value,
            Box::new(move |g, _| {
                vec![Some(g.iter().zip(xv.iter().zip(&gates)).map(|(g, (&x, &s))| g * gelu_deriv(x, s)).collect())]
            }),
        )
    }

    /// Normalises over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let e = *self.shape(x).last().ok_or_else(|| {
            crate::error::Error::Dimension("layer_norm on a scalar".into())
        })?;
        if self.shape(gain) != [e] || self.shape(bias) != [e] {
            return dim_err(format!(
                "layer_norm: gain {:?} / bias {:?} must be [{e}]",
                self.shape(gain),
                self.shape(bias)
            ));
        }
        let shape = self.shape(x).to_vec();
        let xv = self.value(x);
        let (gv, bv) = (self.shared_value(gain), self.value(bias));
        let rows = xv.len() / e;
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut value = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * e..(r + 1) * e];
            let mean = row.iter().sum::<f64>() / e as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / e as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..e {
                let h = (row[c] - mean) * is;
                xhat[r * e + c] = h;
                value[r * e + c] = gv[c] * h + bv[c];
            }
        }
        self.custom(
            "layer_norm",
            &[x, gain, bias],
            shape,
            value,
            Box::new(move |g, needs| {
                let mut dx = needs[0].then(|| vec![0.0; rows * e]);
                let mut dg = needs[1].then(|| vec![0.0; e]);
                let mut db = needs[2].then(|| vec![0.0; e]);
                for r in 0..rows {
                    let gr = &g[r * e..(r + 1) * e];
                    let hr = &xhat[r * e..(r + 1) * e];
                    if let Some(dg) = dg.as_mut() {
                        dg.iter_mut().zip(gr.iter().zip(hr)).for_each(|(d, (g, h))| *d += g * h);
                    }
                    if let Some(db) = db.as_mut() {
                        db.iter_mut().zip(gr).for_each(|(d, g)| *d += g);
                    }
                    if let Some(dx) = dx.as_mut() {
                        let dh: Vec<f64> = gr.iter().zip(gv.iter()).map(|(g, w)| g * w).collect();
                        let mean_dh = dh.iter().sum::<f64>() / e as f64;
                        let mean_dh_h = dh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / e as f64;
                        for c in 0..e {
                            dx[r * e + c] = inv_std[r] * (dh[c] - mean_dh - hr[c] * mean_dh_h);
                        }
                    }
                }
                vec![dx, dg, db]
            }),
        )
    }

    /// Single-sequence causal multi-head attention over `[L×d]` inputs.
    pub fn softmax_causal_attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (l, _) = matrix_dims(self, q, "attention query")?;
        self.causal_attention(q, k, v, heads, l)
    }

    /// Causal multi-head attention over a batch of sequences stacked as
    /// `[B·L×d]` rows. Position `t` of each sequence attends to positions
    /// `0..=t` of the same sequence only.
    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var, heads: usize, seq_len: usize) -> Result<Var> {
        let (rows, d) = matrix_dims(self, q, "attention query")?;
        if self.shape(k) != [rows, d] || self.shape(v) != [rows, d] {
            return dim_err("attention: q, k, v must share a shape");
        }
        if heads == 0 || d % heads != 0 {
            return config_err(format!("embedding width {d} not divisible by {heads} heads"));
        }
        if seq_len == 0 || rows % seq_len != 0 {
            return dim_err(format!("{rows} rows do not split into sequences of {seq_len}"));
        }
        let batch = rows / seq_len;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.shared_value(q), self.shared_value(k), self.shared_value(v));
        let l = seq_len;
        // probs[(b, h)] is an [L×L] block whose upper triangle is exactly zero,
        // so the full products below never mix in later positions.
        let mut probs = vec![0.0; batch * heads * l * l];
        let mut out = vec![0.0; rows * d];
        for b in 0..batch {
            for h in 0..heads {
                let base = b * l * d + h * dh;
                let p = &mut probs[(b * heads + h) * l * l..][..l * l];
                gemm_strided((l, dh, l), &qv[base..], (d, 1), &kv[base..], (1, d), 0.0, p, (l, 1));
                for t in 0..l {
                    let row = &mut p[t * l..(t + 1) * l];
                    let max = row[..=t].iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x * scale));
                    let mut z = 0.0;
                    for x in row[..=t].iter_mut() {
                        *x = (*x * scale - max).exp();
                        z += *x;
                    }
                    row[..=t].iter_mut().for_each(|x| *x /= z);
                    row[t + 1..].iter_mut().for_each(|x| *x = 0.0);
                }
                gemm_strided((l, l, dh), p, (l, 1), &vv[base..], (d, 1), 0.0, &mut out[base..], (d, 1));
            }
        }
        self.custom(
            "causal_attention",
            &[q, k, v],
            vec![rows, d],
            out,
            Box::new(move |g, _| {
                let mut dq = vec![0.0; rows * d];
                let mut dk = vec![0.0; rows * d];
                let mut dv = vec![0.0; rows * d];
                let mut ds = vec![0.0; l * l];
                for b in 0..batch {
                    for h in 0..heads {
                        let base = b * l * d + h * dh;
                        let p = &probs[(b * heads + h) * l * l..][..l * l];
                        gemm_strided((l, l, dh), p, (1, l), &g[base..], (d, 1), 0.0, &mut dv[base..], (d, 1));
                        gemm_strided((l, dh, l), &g[base..], (d, 1), &vv[base..], (1, d), 0.0, &mut ds, (l, 1));
                        for t in 0..l {
                            let pr = &p[t * l..(t + 1) * l];
                            let dr = &mut ds[t * l..(t + 1) * l];
                            let dot: f64 = pr[..=t].iter().zip(&dr[..=t]).map(|(a, b)| a * b).sum();
                            for s in 0..=t {
                                dr[s] = pr[s] * (dr[s] - dot) * scale;
                            }
                            dr[t + 1..].iter_mut().for_each(|x| *x = 0.0);
                        }
                        gemm_strided((l, l, dh), &ds, (l, 1), &kv[base..], (d, 1), 0.0, &mut dq[base..], (d, 1));
                        gemm_strided((l, l, dh), &ds, (1, l), &qv[base..], (d, 1), 0.0, &mut dk[base..], (d, 1));
                    }
                }
                vec![Some(dq), Some(dk), Some(dv)]
            }),
        )
    }

    /// Causal convolution of a 1-D signal with a kernel of length `K`:
    /// `y[t] = Σ_m kernel[m]·x[t−m]`, with `x` zero-padded on the left.
    pub fn causal_conv1d_varlen(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let (l, kl) = match (self.shape(x), self.shape(kernel)) {
            ([l], [k]) => (*l, *k),
            (xs, ks) => return dim_err(format!("causal_conv1d: x {xs:?} and kernel {ks:?} must be 1-D")),
        };
        if kl == 0 || kl > l {
            return config_err(format!("kernel length {kl} must lie in 1..={l}"));
        }
        let (xv, kv) = (self.shared_value(x), self.shared_value(kernel));
        let value = crate::wavelet::causal::conv_forward(&xv, &kv);
        self.custom(
            "causal_conv1d_varlen",
            &[x, kernel],
            vec![l],
            value,
            Box::new(move |g, needs| {
                let mut dx = needs[0].then(|| vec![0.0; l]);
                let mut dk = needs[1].then(|| vec![0.0; kl]);
                crate::wavelet::causal::conv_backward(&xv, &kv, g, dx.as_deref_mut(), dk.as_deref_mut());
                vec![dx, dk]
            }),
        )
    }

    /// Mean token cross-entropy in nats between `logits: [n×V]` and targets.
    pub fn cross_entropy_logits(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (n, vocab) = matrix_dims(self, logits, "logits")?;
        if targets.len() != n {
            return dim_err(format!("{} targets for {n} logit rows", targets.len()));
        }
        if let Some((pos, &bad)) = targets.iter().enumerate().find(|(_, &t)| t >= vocab) {
            return data_err(format!("target {bad} at position {pos} outside vocabulary of {vocab}"));
        }
        let lv = self.value(logits);
        let mut probs = vec![0.0; n * vocab];
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = &lv[r * vocab..(r + 1) * vocab];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + z.ln();
            total += lse - row[t];
            for c in 0..vocab {
                probs[r * vocab + c] = (row[c] - lse).exp();
            }
        }
        let targets = targets.to_vec();
        self.custom(
            "cross_entropy",
            &[logits],
            vec![1],
            vec![total / n as f64],
            Box::new(move |g, _| {
                let s = g[0] / n as f64;
                let mut d: Vec<f64> = probs.iter().map(|p| p * s).collect();
                for (r, &t) in targets.iter().enumerate() {
                    d[r * vocab + t] -= s;
                }
                vec![Some(d)]
            }),
        )
    }
}

/// Converts a per-token loss in nats to bits (bits-per-character for text).
pub fn nats_to_bits(nats: f64) -> f64 {
    nats / std::f64::consts::LN_2
}
