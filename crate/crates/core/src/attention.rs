//! Softmax attention, Taylor-expansion linear attention and the gated
//! attention layer (LAG).
//!
//! The linear form replaces `exp(q·k)` with its first-order expansion
//! `1 + q·k`. Because the expansion is linear in `k`, the key/value product
//! `Kᵀ V` (C×C) can be formed once and shared by every query, giving
//! `O(N·C²)` time and `O(N·C + C²)` memory instead of `O(N²·C)`.
//!
//! For row `i` with (optionally l2-normalized) `q̄ᵢ`, `k̄ₗ`:
//!
//! ```text
//! s  = Σₗ k̄ₗ                      (C)
//! M  = K̄ᵀ V                       (C×C)
//! dᵢ = N + q̄ᵢ·s                   (guarded away from 0)
//! oᵢ = (baseᵢ + q̄ᵢ M) / dᵢ
//! ```
//!
//! where `baseᵢ` is `vᵢ` ([`TaylorMode::Residual`]), `Σⱼ vⱼ`
//! ([`TaylorMode::Sum`]) or zero ([`TaylorMode::None`]).

use crate::autograd::{Graph, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::nn::Conv2dLayer;
use crate::rng::Rng;
use crate::tensor::{gemm, matmul, softmax_rows, transpose, Tensor};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Which constant term the first-order expansion keeps in the numerator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaylorMode {
    /// `Σⱼ vⱼ + q̄ᵢ M`, the literal expansion of the softmax weights.
    Sum,
    /// `vᵢ + q̄ᵢ M`, the per-row value acting as a residual term.
    #[default]
    Residual,
    /// `q̄ᵢ M` alone, the kernel-linearization family without the constant.
    None,
}

impl TaylorMode {
    pub const ALL: [TaylorMode; 3] = [TaylorMode::Sum, TaylorMode::Residual, TaylorMode::None];
}

impl fmt::Display for TaylorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaylorMode::Sum => "sum",
            TaylorMode::Residual => "residual",
            TaylorMode::None => "none",
        })
    }
}

impl FromStr for TaylorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(TaylorMode::Sum),
            "residual" => Ok(TaylorMode::Residual),
            "none" => Ok(TaylorMode::None),
            other => Err(Error::Config(format!(
                "unknown taylor mode `{other}` (expected sum, residual or none)"
            ))),
        }
    }
}

/// Per-call options of [`taylor_linear_attention`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaylorOptions {
    pub mode: TaylorMode,
    /// Denominator guard: `|dᵢ| < eps` is replaced by `sign(dᵢ)·eps`.
    pub eps: f64,
    pub normalize_qk: bool,
    /// Divide the numerator by `dᵢ`. When false the raw numerator is returned.
    pub divide: bool,
}

impl Default for TaylorOptions {
    fn default() -> Self {
        TaylorOptions {
            mode: TaylorMode::Residual,
            eps: 1e-6,
            normalize_qk: true,
            divide: true,
        }
    }
}

/// Row norms below this are treated as zero when normalizing queries and keys.
pub const NORMALIZE_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionConfig {
    pub channels: usize,
    pub heads: usize,
    pub taylor_mode: TaylorMode,
    pub gated: bool,
    pub eps: f64,
    pub normalize_qk: bool,
    pub divide: bool,
}

impl AttentionConfig {
    pub fn new(channels: usize, heads: usize) -> Self {
        AttentionConfig {
            channels,
            heads,
            taylor_mode: TaylorMode::Residual,
            gated: true,
            eps: 1e-6,
            normalize_qk: true,
            divide: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.heads == 0 {
            return Err(Error::Config("channels and heads must be positive".into()));
        }
        if !self.channels.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "{} channels do not split into {} heads",
                self.channels, self.heads
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    pub fn options(&self) -> TaylorOptions {
        TaylorOptions {
            mode: self.taylor_mode,
            eps: self.eps,
            normalize_qk: self.normalize_qk,
            divide: self.divide,
        }
    }
}

fn check_qkv(q: &Tensor, k: &Tensor, v: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    let (n, c) = q.matrix_dims(op)?;
    if k.dims() != [n, c] || v.dims() != [n, c] {
        return Err(Error::shape(
            op,
            format!("q {:?}, k {:?}, v {:?}", q.dims(), k.dims(), v.dims()),
        ));
    }
    Ok((n, c))
}

/// `softmax(q kᵀ / √C) v`, materializing the N×N weight matrix.
pub fn vanilla_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    let (_, c) = check_qkv(q, k, v, "vanilla_attention")?;
    softmax_attention(q, k, v, 1.0 / (c as f64).sqrt())
}

/// `softmax(scale · q kᵀ) v`, materializing the N×N weight matrix.
pub fn softmax_attention(q: &Tensor, k: &Tensor, v: &Tensor, scale: f64) -> Result<Tensor> {
    check_qkv(q, k, v, "softmax_attention")?;
    let logits = matmul(q, &transpose(k)?)?.scale(scale);
    matmul(&softmax_rows(&logits)?, v)
}

const QUERY_BLOCK: usize = 64;
const KEY_TILE: usize = 512;

/// Same result as [`softmax_attention`] but streams over key tiles with an
/// online softmax, so memory stays `O(N·C)` while time remains `O(N²·C)`.
/// This is the quadratic baseline used for timing at large N.
pub fn softmax_attention_streaming(q: &Tensor, k: &Tensor, v: &Tensor, scale: f64) -> Result<Tensor> {
    let (n, c) = check_qkv(q, k, v, "softmax_attention_streaming")?;
    // K transposed, one contiguous C×T block per key tile
    let tiles: Vec<(usize, usize, Vec<f64>)> = (0..n)
        .step_by(KEY_TILE)
        .map(|start| {
            let t = KEY_TILE.min(n - start);
            let mut block = vec![0.0; c * t];
            for j in 0..t {
                for ch in 0..c {
                    block[ch * t + j] = k.data()[(start + j) * c + ch];
                }
            }
            (start, t, block)
        })
        .collect();

    let mut out = vec![0.0; n * c];
    let mut scores = vec![0.0; QUERY_BLOCK * KEY_TILE];
    let mut acc = vec![0.0; QUERY_BLOCK * c];
    let mut row_max = vec![0.0; QUERY_BLOCK];
    let mut row_sum = vec![0.0; QUERY_BLOCK];
    for qs in (0..n).step_by(QUERY_BLOCK) {
        let b = QUERY_BLOCK.min(n - qs);
        let qb: Vec<f64> = q.data()[qs * c..(qs + b) * c].iter().map(|x| x * scale).collect();
        acc[..b * c].fill(0.0);
        row_max[..b].fill(f64::NEG_INFINITY);
        row_sum[..b].fill(0.0);
        for (start, t, block) in &tiles {
            let (start, t) = (*start, *t);
            let s = &mut scores[..b * t];
            s.fill(0.0);
            gemm(&qb, block, s, b, c, t);
            for i in 0..b {
                let row = &mut s[i * t..(i + 1) * t];
                let tile_max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                let new_max = row_max[i].max(tile_max);
                let rescale = (row_max[i] - new_max).exp();
                let mut total = 0.0;
                for x in row.iter_mut() {
                    *x = (*x - new_max).exp();
                    total += *x;
                }
                row_sum[i] = row_sum[i] * rescale + total;
                row_max[i] = new_max;
                acc[i * c..(i + 1) * c].iter_mut().for_each(|a| *a *= rescale);
            }
            gemm(s, &v.data()[start * c..(start + t) * c], &mut acc[..b * c], b, t, c);
        }
        for i in 0..b {
            let inv = 1.0 / row_sum[i];
            for ch in 0..c {
                out[(qs + i) * c + ch] = acc[i * c + ch] * inv;
            }
        }
    }
    Tensor::from_vec(&[n, c], out)
}

/// Intermediates of one head kept for the backward pass.
pub(crate) struct TaylorSaved {
    n: usize,
    d: usize,
    opts: TaylorOptions,
    qn: Vec<f64>,
    q_norm: Vec<f64>,
    kn: Vec<f64>,
    k_norm: Vec<f64>,
    v: Vec<f64>,
    s: Vec<f64>,
    m: Vec<f64>,
    denom: Vec<f64>,
    guarded: Vec<bool>,
    out: Vec<f64>,
}

/// Normalizes rows in place, returning each row's norm (0 for zeroed rows).
fn normalize_rows_in_place(x: &mut [f64], d: usize) -> Vec<f64> {
    x.chunks_mut(d)
        .map(|row| {
            let norm = row.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm < NORMALIZE_EPS {
                row.fill(0.0);
                0.0
            } else {
                row.iter_mut().for_each(|a| *a /= norm);
                norm
            }
        })
        .collect()
}

fn normalize_rows_backward(y: &[f64], norms: &[f64], dy: &[f64], d: usize) -> Vec<f64> {
    let mut dx = vec![0.0; y.len()];
    for (i, &norm) in norms.iter().enumerate() {
        if norm == 0.0 {
            continue;
        }
        let (yr, dyr) = (&y[i * d..(i + 1) * d], &dy[i * d..(i + 1) * d]);
        let dot: f64 = yr.iter().zip(dyr).map(|(a, b)| a * b).sum();
        for c in 0..d {
            dx[i * d + c] = (dyr[c] - yr[c] * dot) / norm;
        }
    }
    dx
}

fn transpose_raw(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = x[i * cols + j];
        }
    }
    out
}

fn column_sums(x: &[f64], d: usize) -> Vec<f64> {
    let mut s = vec![0.0; d];
    for row in x.chunks(d) {
        for (a, b) in s.iter_mut().zip(row) {
            *a += b;
        }
    }
    s
}

/// One head of Taylor linear attention on raw N×d buffers.
pub(crate) fn taylor_head_forward(q: &[f64], k: &[f64], v: &[f64], n: usize, d: usize, opts: TaylorOptions) -> TaylorSaved {
    let mut qn = q.to_vec();
    let mut kn = k.to_vec();
    let (q_norm, k_norm) = if opts.normalize_qk {
        (normalize_rows_in_place(&mut qn, d), normalize_rows_in_place(&mut kn, d))
    } else {
        (Vec::new(), Vec::new())
    };

    let s = column_sums(&kn, d);
    let mut m = vec![0.0; d * d];
    gemm(&transpose_raw(&kn, n, d), v, &mut m, d, n, d);

    let mut numer = match opts.mode {
        TaylorMode::Residual => v.to_vec(),
        TaylorMode::Sum => column_sums(v, d).repeat(n),
        TaylorMode::None => vec![0.0; n * d],
    };
    gemm(&qn, &m, &mut numer, n, d, d);

    let mut denom = vec![0.0; n];
    let mut guarded = vec![false; n];
    for i in 0..n {
        let dot: f64 = qn[i * d..(i + 1) * d].iter().zip(&s).map(|(a, b)| a * b).sum();
        let raw = n as f64 + dot;
        if raw.abs() < opts.eps {
            denom[i] = if raw < 0.0 { -opts.eps } else { opts.eps };
            guarded[i] = true;
        } else {
            denom[i] = raw;
        }
    }
    if opts.divide {
        for (row, &di) in numer.chunks_mut(d).zip(&denom) {
            row.iter_mut().for_each(|x| *x /= di);
        }
    }

    TaylorSaved {
        n,
        d,
        opts,
        qn,
        q_norm,
        kn,
        k_norm,
        v: v.to_vec(),
        s,
        m,
        denom,
        guarded,
        out: numer,
    }
}

/// Gradients (dq, dk, dv) of one head given the output gradient.
pub(crate) fn taylor_head_backward(saved: &TaylorSaved, grad: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (n, d) = (saved.n, saved.d);
    let divide = saved.opts.divide;

    let mut dn = grad.to_vec();
    let mut dd = vec![0.0; n];
    if divide {
        for i in 0..n {
            let di = saved.denom[i];
            let g = &grad[i * d..(i + 1) * d];
            if !saved.guarded[i] {
                let o = &saved.out[i * d..(i + 1) * d];
                dd[i] = -g.iter().zip(o).map(|(a, b)| a * b).sum::<f64>() / di;
            }
            dn[i * d..(i + 1) * d].iter_mut().for_each(|x| *x /= di);
        }
    }

    // dq̄ = dn Mᵀ + dd sᵀ
    let mut dqn = vec![0.0; n * d];
    gemm(&dn, &transpose_raw(&saved.m, d, d), &mut dqn, n, d, d);
    for i in 0..n {
        for c in 0..d {
            dqn[i * d + c] += dd[i] * saved.s[c];
        }
    }

    // dM = q̄ᵀ dn, ds = Σᵢ ddᵢ q̄ᵢ
    let mut dm = vec![0.0; d * d];
    gemm(&transpose_raw(&saved.qn, n, d), &dn, &mut dm, d, n, d);
    let mut ds = vec![0.0; d];
    for i in 0..n {
        for c in 0..d {
            ds[c] += dd[i] * saved.qn[i * d + c];
        }
    }

    // dk̄ = v dMᵀ + 1 dsᵀ
    let mut dkn = vec![0.0; n * d];
    gemm(&saved.v, &transpose_raw(&dm, d, d), &mut dkn, n, d, d);
    for row in dkn.chunks_mut(d) {
        for (a, b) in row.iter_mut().zip(&ds) {
            *a += b;
        }
    }

    // dv = k̄ dM + constant-term gradient
    let mut dv = match saved.opts.mode {
        TaylorMode::Residual => dn.clone(),
        TaylorMode::Sum => column_sums(&dn, d).repeat(n),
        TaylorMode::None => vec![0.0; n * d],
    };
    gemm(&saved.kn, &dm, &mut dv, n, d, d);

    if saved.opts.normalize_qk {
        (
            normalize_rows_backward(&saved.qn, &saved.q_norm, &dqn, d),
            normalize_rows_backward(&saved.kn, &saved.k_norm, &dkn, d),
            dv,
        )
    } else {
        (dqn, dkn, dv)
    }
}

fn head_columns(x: &[f64], n: usize, c: usize, start: usize, d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * d);
    for row in x.chunks(c) {
        out.extend_from_slice(&row[start..start + d]);
    }
    out
}

fn scatter_head(dst: &mut [f64], src: &[f64], c: usize, start: usize, d: usize) {
    for (drow, srow) in dst.chunks_mut(c).zip(src.chunks(d)) {
        drow[start..start + d].copy_from_slice(srow);
    }
}

/// Multi-head Taylor attention on N×C matrices; heads are contiguous column blocks.
pub(crate) fn taylor_heads_forward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    heads: usize,
    opts: TaylorOptions,
) -> Result<(Tensor, Vec<TaylorSaved>)> {
    let (n, c) = check_qkv(q, k, v, "taylor_linear_attention")?;
    if heads == 0 || c % heads != 0 {
        return Err(Error::Config(format!("{c} channels do not split into {heads} heads")));
    }
    let d = c / heads;
    let mut out = vec![0.0; n * c];
    let mut saved = Vec::with_capacity(heads);
    for h in 0..heads {
        let start = h * d;
        let head = taylor_head_forward(
            &head_columns(q.data(), n, c, start, d),
            &head_columns(k.data(), n, c, start, d),
            &head_columns(v.data(), n, c, start, d),
            n,
            d,
            opts,
        );
        scatter_head(&mut out, &head.out, c, start, d);
        saved.push(head);
    }
    Ok((Tensor::from_vec(&[n, c], out)?, saved))
}

pub(crate) fn taylor_heads_backward(saved: &[TaylorSaved], grad: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c) = grad.matrix_dims("taylor_attention_backward")?;
    let mut dq = vec![0.0; n * c];
    let mut dk = vec![0.0; n * c];
    let mut dv = vec![0.0; n * c];
    for (h, head) in saved.iter().enumerate() {
        let start = h * head.d;
        let g = head_columns(grad.data(), n, c, start, head.d);
        let (hq, hk, hv) = taylor_head_backward(head, &g);
        scatter_head(&mut dq, &hq, c, start, head.d);
        scatter_head(&mut dk, &hk, c, start, head.d);
        scatter_head(&mut dv, &hv, c, start, head.d);
    }
    Ok((
        Tensor::from_vec(&[n, c], dq)?,
        Tensor::from_vec(&[n, c], dk)?,
        Tensor::from_vec(&[n, c], dv)?,
    ))
}

/// Taylor linear attention on N×C matrices (single head), `O(N·C²)`.
pub fn taylor_linear_attention(q: &Tensor, k: &Tensor, v: &Tensor, opts: &TaylorOptions) -> Result<Tensor> {
    Ok(taylor_heads_forward(q, k, v, 1, *opts)?.0)
}

/// Multi-head Taylor linear attention on N×C matrices.
pub fn taylor_attention_heads(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize, opts: &TaylorOptions) -> Result<Tensor> {
    Ok(taylor_heads_forward(q, k, v, heads, *opts)?.0)
}

/// Query, key, value, gate and output projections of a LAG layer.
#[derive(Clone, Debug)]
pub struct ProjectionSet {
    pub wq: Conv2dLayer,
    pub wk: Conv2dLayer,
    pub wv: Conv2dLayer,
    /// Present only for gated layers.
    pub w_gate: Option<Conv2dLayer>,
    pub w_out: Conv2dLayer,
}

impl ProjectionSet {
    pub fn register(store: &mut ParamStore, rng: &mut Rng, name: &str, channels: usize, gated: bool) -> Self {
        let mut proj = |suffix: &str| Conv2dLayer::pointwise(store, rng, &format!("{name}.{suffix}"), channels, channels);
        ProjectionSet {
            wq: proj("q"),
            wk: proj("k"),
            wv: proj("v"),
            w_gate: gated.then(|| proj("gate")),
            w_out: proj("out"),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        [Some(&self.wq), Some(&self.wk), Some(&self.wv), self.w_gate.as_ref(), Some(&self.w_out)]
            .into_iter()
            .flatten()
            .flat_map(Conv2dLayer::param_ids)
            .collect()
    }
}

/// Projects `x` (C×H×W) to queries, keys and values, runs per-head Taylor
/// attention over the N = H·W positions and reshapes back to C×H×W.
pub fn multi_head_attention<G: Graph>(
    g: &mut G,
    x: &G::Value,
    proj: &ProjectionSet,
    cfg: &AttentionConfig,
) -> Result<G::Value> {
    cfg.validate()?;
    let (c, h, w) = g.tensor(x).chw("multi_head_attention")?;
    if c != cfg.channels {
        return Err(Error::shape(
            "multi_head_attention",
            format!("input has {c} channels, layer expects {}", cfg.channels),
        ));
    }
    let q = proj.wq.forward(g, x)?;
    let k = proj.wk.forward(g, x)?;
    let v = proj.wv.forward(g, x)?;
    let q = g.channels_to_rows(&q)?;
    let k = g.channels_to_rows(&k)?;
    let v = g.channels_to_rows(&v)?;
    let o = g.taylor_attention(&q, &k, &v, cfg.heads, cfg.options())?;
    g.rows_to_channels(&o, h, w)
}

/// Linear attention with gating: `w_out(A ⊙ gelu(w_gate x))`, or `w_out(A)`
/// when the gate is disabled.
pub fn lag_forward<G: Graph>(g: &mut G, x: &G::Value, proj: &ProjectionSet, cfg: &AttentionConfig) -> Result<G::Value> {
    let a = multi_head_attention(g, x, proj, cfg)?;
    let mixed = match (cfg.gated, &proj.w_gate) {
        (true, Some(w_gate)) => {
            let pre = w_gate.forward(g, x)?;
            let gate = g.gelu(&pre)?;
            g.hadamard(&a, &gate)?
        }
        (false, _) => a,
        (true, None) => return Err(Error::Config("gated attention needs a gate projection".into())),
    };
    proj.w_out.forward(g, &mixed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Eager;

    fn rand_qkv(rng: &mut Rng, n: usize, c: usize) -> (Tensor, Tensor, Tensor) {
        (
            rng.normal_tensor(&[n, c], 1.0),
            rng.normal_tensor(&[n, c], 1.0),
            rng.normal_tensor(&[n, c], 1.0),
        )
    }

    #[test]
    fn vanilla_single_row_returns_value() {
        let mut rng = Rng::new(1);
        let (q, k, v) = rand_qkv(&mut rng, 1, 4);
        assert!(vanilla_attention(&q, &k, &v).unwrap().max_abs_diff(&v).unwrap() < 1e-15);
    }

    #[test]
    fn vanilla_zero_query_is_column_mean() {
        let mut rng = Rng::new(2);
        let (_, k, v) = rand_qkv(&mut rng, 5, 3);
        let q = Tensor::zeros(&[5, 3]).unwrap();
        let o = vanilla_attention(&q, &k, &v).unwrap();
        for c in 0..3 {
            let mean: f64 = (0..5).map(|j| v.get(&[j, c])).sum::<f64>() / 5.0;
            for i in 0..5 {
                assert!((o.get(&[i, c]) - mean).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn streaming_matches_materialized() {
        let mut rng = Rng::new(3);
        for &(n, c) in &[(7, 4), (600, 8), (1100, 3)] {
            let (q, k, v) = rand_qkv(&mut rng, n, c);
            let a = softmax_attention(&q, &k, &v, 0.5).unwrap();
            let b = softmax_attention_streaming(&q, &k, &v, 0.5).unwrap();
            assert!(a.max_abs_diff(&b).unwrap() < 1e-12, "n={n}");
        }
    }

    #[test]
    fn sum_mode_zero_query_matches_vanilla() {
        let mut rng = Rng::new(4);
        let (_, k, v) = rand_qkv(&mut rng, 6, 4);
        let q = Tensor::zeros(&[6, 4]).unwrap();
        let opts = TaylorOptions { mode: TaylorMode::Sum, ..Default::default() };
        let t = taylor_linear_attention(&q, &k, &v, &opts).unwrap();
        let o = vanilla_attention(&q, &k, &v).unwrap();
        assert!(t.max_abs_diff(&o).unwrap() < 1e-14);
    }

    #[test]
    fn residual_mode_zero_query_scales_values() {
        let mut rng = Rng::new(5);
        let (_, k, v) = rand_qkv(&mut rng, 6, 4);
        let q = Tensor::zeros(&[6, 4]).unwrap();
        let t = taylor_linear_attention(&q, &k, &v, &TaylorOptions::default()).unwrap();
        assert!(t.max_abs_diff(&v.scale(1.0 / 6.0)).unwrap() < 1e-15);
    }

    #[test]
    fn undivided_variant_returns_numerator() {
        let mut rng = Rng::new(6);
        let (q, k, v) = rand_qkv(&mut rng, 5, 4);
        let divided = taylor_linear_attention(&q, &k, &v, &TaylorOptions::default()).unwrap();
        let raw = taylor_linear_attention(&q, &k, &v, &TaylorOptions { divide: false, ..Default::default() }).unwrap();
        assert!(divided.max_abs_diff(&raw).unwrap() > 1e-3);
    }

    #[test]
    fn guard_keeps_output_finite() {
        // every key is the negation of the single query direction → d = 0
        let n = 4;
        let q = Tensor::from_vec(&[n, 2], [1.0, 0.0].repeat(n)).unwrap();
        let k = Tensor::from_vec(&[n, 2], [-1.0, 0.0].repeat(n)).unwrap();
        let v = Tensor::ones(&[n, 2]).unwrap();
        for mode in TaylorMode::ALL {
            let opts = TaylorOptions { mode, ..Default::default() };
            let (out, saved) = taylor_heads_forward(&q, &k, &v, 1, opts).unwrap();
            assert!(out.all_finite(), "{mode}");
            assert!(saved[0].guarded.iter().all(|&g| g));
        }
    }

    #[test]
    fn mode_parsing_round_trips() {
        for mode in TaylorMode::ALL {
            assert_eq!(mode.to_string().parse::<TaylorMode>().unwrap(), mode);
        }
        assert!("linear".parse::<TaylorMode>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(AttentionConfig::new(8, 3).validate().is_err());
        assert!(AttentionConfig::new(8, 2).validate().is_ok());
        let mut cfg = AttentionConfig::new(8, 2);
        cfg.eps = 0.0;
        assert!(cfg.validate().is_err());
    }

    fn lag_setup(c: usize, heads: usize) -> (ParamStore, ProjectionSet, AttentionConfig, Tensor) {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(11);
        let proj = ProjectionSet::register(&mut store, &mut rng, "lag", c, true);
        let x = rng.normal_tensor(&[c, 4, 4], 1.0);
        (store, proj, AttentionConfig::new(c, heads), x)
    }

    #[test]
    fn mha_shape_and_single_head() {
        let (store, proj, cfg, x) = lag_setup(8, 1);
        let mut g = Eager::new(&store);
        let a = multi_head_attention(&mut g, &x, &proj, &cfg).unwrap();
        assert_eq!(a.dims(), &[8, 4, 4]);
        let mut bad = cfg.clone();
        bad.heads = 3;
        assert!(multi_head_attention(&mut g, &x, &proj, &bad).is_err());
    }

    #[test]
    fn gate_of_zero_annihilates() {
        let (mut store, proj, cfg, x) = lag_setup(4, 2);
        store.get_mut(proj.w_gate.as_ref().unwrap().weight).value = Tensor::zeros(&[4, 4, 1, 1]).unwrap();
        store.get_mut(proj.w_out.bias).value = Tensor::zeros(&[4]).unwrap();
        let mut g = Eager::new(&store);
        let o = lag_forward(&mut g, &x, &proj, &cfg).unwrap();
        assert_eq!(o.max_abs(), 0.0);
    }
}
