//! Independent reference implementations used only by the tests.
#![allow(dead_code)]

use tformer::attention::{TaylorMode, TaylorOptions};
use tformer::tensor::Tensor;

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    let (n, c) = (t.dims()[0], t.dims()[1]);
    (0..n).map(|i| t.data()[i * c..(i + 1) * c].to_vec()).collect()
}

fn unit_rows(m: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    m.into_iter()
        .map(|r| {
            let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-12 {
                vec![0.0; r.len()]
            } else {
                r.into_iter().map(|x| x / norm).collect()
            }
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Materializes every weight `1 + q̄ᵢ·k̄ⱼ` and sums over keys: O(N²·C).
pub fn taylor_oracle(q: &Tensor, k: &Tensor, v: &Tensor, opts: &TaylorOptions) -> Tensor {
    let (mut qr, mut kr, vr) = (rows(q), rows(k), rows(v));
    if opts.normalize_qk {
        qr = unit_rows(qr);
        kr = unit_rows(kr);
    }
    let n = qr.len();
    let c = vr[0].len();
    let mut out = Vec::with_capacity(n * c);
    for i in 0..n {
        let sims: Vec<f64> = (0..n).map(|j| dot(&qr[i], &kr[j])).collect();
        let mut num = vec![0.0; c];
        let mut den = 0.0;
        for j in 0..n {
            let w = match opts.mode {
                TaylorMode::Sum => 1.0 + sims[j],
                TaylorMode::Residual | TaylorMode::None => sims[j],
            };
            den += 1.0 + sims[j];
            for (x, vj) in num.iter_mut().zip(&vr[j]) {
                *x += w * vj;
            }
        }
        if opts.mode == TaylorMode::Residual {
            for (x, vi) in num.iter_mut().zip(&vr[i]) {
                *x += vi;
            }
        }
        if opts.divide {
            if den.abs() < opts.eps {
                den = if den < 0.0 { -opts.eps } else { opts.eps };
            }
            num.iter_mut().for_each(|x| *x /= den);
        }
        out.extend(num);
    }
    Tensor::from_vec(&[n, c], out).unwrap()
}

/// `softmax(s·QKᵀ)V` by explicit scalar loops.
pub fn softmax_oracle(q: &Tensor, k: &Tensor, v: &Tensor, scale: f64) -> Tensor {
    let (qr, kr, vr) = (rows(q), rows(k), rows(v));
    let n = qr.len();
    let c = vr[0].len();
    let mut out = Vec::with_capacity(n * c);
    for qi in &qr {
        let logits: Vec<f64> = kr.iter().map(|kj| scale * dot(qi, kj)).collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = e.iter().sum();
        for ch in 0..c {
            out.push((0..n).map(|j| e[j] * vr[j][ch]).sum::<f64>() / z);
        }
    }
    Tensor::from_vec(&[n, c], out).unwrap()
}

/// Applies the oracle to each contiguous block of `c / heads` columns.
pub fn taylor_oracle_heads(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize, opts: &TaylorOptions) -> Tensor {
    let (n, c) = (q.dims()[0], q.dims()[1]);
    let d = c / heads;
    let slice = |t: &Tensor, h: usize| {
        let data = (0..n).flat_map(|i| t.data()[i * c + h * d..i * c + (h + 1) * d].to_vec()).collect();
        Tensor::from_vec(&[n, d], data).unwrap()
    };
    let mut out = vec![0.0; n * c];
    for h in 0..heads {
        let o = taylor_oracle(&slice(q, h), &slice(k, h), &slice(v, h), opts);
        for i in 0..n {
            out[i * c + h * d..i * c + (h + 1) * d].copy_from_slice(&o.data()[i * d..(i + 1) * d]);
        }
    }
    Tensor::from_vec(&[n, c], out).unwrap()
}

/// Reference 2-d convolution by direct summation.
pub fn conv2d_oracle(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize) -> Tensor {
    let (cin, h, wd) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    let (cout, k) = (w.dims()[0], w.dims()[2]);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = Tensor::zeros(&[cout, oh, ow]).unwrap();
    for o in 0..cout {
        for y in 0..oh {
            for xo in 0..ow {
                let mut acc = bias.map_or(0.0, |b| b.data()[o]);
                for c in 0..cin {
                    for i in 0..k {
                        for j in 0..k {
                            let iy = (y * stride + i) as isize - pad as isize;
                            let ix = (xo * stride + j) as isize - pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                acc += w.get(&[o, c, i, j]) * x.get(&[c, iy as usize, ix as usize]);
                            }
                        }
                    }
                }
                out.set(&[o, y, xo], acc);
            }
        }
    }
    out
}
