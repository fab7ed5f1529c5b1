// Forward/backward kernels for the ops that are not plain tensor methods.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub(crate) struct LayerNormSaved {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
}

pub(crate) fn layer_norm_channels(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<(Tensor, LayerNormSaved)> {
    let (c, h, w) = x.chw("layer_norm_channels")?;
    if gamma.dims() != [c] || beta.dims() != [c] {
        return Err(Error::shape(
            "layer_norm_channels",
            format!("affine {:?}/{:?} for {c} channels", gamma.dims(), beta.dims()),
        ));
    }
    let plane = h * w;
    let xs = x.data();
    let mut mean = vec![0.0; plane];
    for ch in 0..c {
        for (m, v) in mean.iter_mut().zip(&xs[ch * plane..(ch + 1) * plane]) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= c as f64);
    let mut var = vec![0.0; plane];
    for ch in 0..c {
        for ((s, v), m) in var.iter_mut().zip(&xs[ch * plane..(ch + 1) * plane]).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let inv_std: Vec<f64> = var.iter().map(|s| 1.0 / (s / c as f64 + eps).sqrt()).collect();
    let mut xhat = vec![0.0; x.numel()];
    let mut y = vec![0.0; x.numel()];
    for ch in 0..c {
        let (g, b) = (gamma.data()[ch], beta.data()[ch]);
        for p in 0..plane {
            let i = ch * plane + p;
            xhat[i] = (xs[i] - mean[p]) * inv_std[p];
            y[i] = xhat[i] * g + b;
        }
    }
    Ok((
        Tensor::from_vec(x.dims(), y)?,
        LayerNormSaved {
            xhat: Tensor::from_vec(x.dims(), xhat)?,
            inv_std,
        },
    ))
}

/// Returns (dx, dgamma, dbeta).
pub(crate) fn layer_norm_backward(saved: &LayerNormSaved, gamma: &Tensor, grad: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (c, h, w) = grad.chw("layer_norm_backward")?;
    let plane = h * w;
    let (xh, gy) = (saved.xhat.data(), grad.data());
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    let mut mean_g = vec![0.0; plane];
    let mut mean_gx = vec![0.0; plane];
    for ch in 0..c {
        let gm = gamma.data()[ch];
        for p in 0..plane {
            let i = ch * plane + p;
            dgamma[ch] += gy[i] * xh[i];
            dbeta[ch] += gy[i];
            let dxh = gy[i] * gm;
            mean_g[p] += dxh;
            mean_gx[p] += dxh * xh[i];
        }
    }
    let cf = c as f64;
    let mut dx = vec![0.0; grad.numel()];
    for ch in 0..c {
        let gm = gamma.data()[ch];
        for p in 0..plane {
            let i = ch * plane + p;
            let dxh = gy[i] * gm;
            dx[i] = saved.inv_std[p] * (dxh - mean_g[p] / cf - xh[i] * mean_gx[p] / cf);
        }
    }
    Ok((
        Tensor::from_vec(grad.dims(), dx)?,
        Tensor::from_vec(&[c], dgamma)?,
        Tensor::from_vec(&[c], dbeta)?,
    ))
}

/// Views a Cout×… kernel as a Cout×(rest) matrix and returns `uᵀ W v`.
pub(crate) fn spectral_sigma(w: &Tensor, u: &Tensor, v: &Tensor) -> Result<f64> {
    let rows = w.dims()[0];
    let cols = w.numel() / rows;
    if u.numel() != rows || v.numel() != cols {
        return Err(Error::shape(
            "spectral_scale",
            format!("u {:?}, v {:?} for weight {:?}", u.dims(), v.dims(), w.dims()),
        ));
    }
    let wd = w.data();
    let mut sigma = 0.0;
    for (r, &ur) in u.data().iter().enumerate() {
        let row = &wd[r * cols..(r + 1) * cols];
        sigma += ur * row.iter().zip(v.data()).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(sigma)
}

/// Gradient of `W / (uᵀ W v)` with respect to `W`.
pub(crate) fn spectral_scale_backward(w: &Tensor, u: &Tensor, v: &Tensor, sigma: f64, grad: &Tensor) -> Result<Tensor> {
    let rows = w.dims()[0];
    let cols = w.numel() / rows;
    let inner: f64 = grad.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
    let coef = inner / (sigma * sigma);
    let mut dw = grad.scale(1.0 / sigma);
    let d = dw.data_mut();
    for r in 0..rows {
        for c in 0..cols {
            d[r * cols + c] -= coef * u.data()[r] * v.data()[c];
        }
    }
    Ok(dw)
}

/// `log σ(x)` without overflow.
pub(crate) fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub(crate) fn softmax_backward(y: &Tensor, grad: &Tensor) -> Result<Tensor> {
    let (_, m) = y.matrix_dims("softmax_backward")?;
    let mut dx = grad.clone();
    for (row_d, row_y) in dx.data_mut().chunks_mut(m).zip(y.data().chunks(m)) {
        let dot: f64 = row_d.iter().zip(row_y).map(|(a, b)| a * b).sum();
        for (d, yv) in row_d.iter_mut().zip(row_y) {
            *d = yv * (*d - dot);
        }
    }
    Ok(dx)
}

/// Row norms of `x` (0 where the row was zeroed by the guard).
pub(crate) fn row_norms(x: &Tensor, eps: f64) -> Result<Vec<f64>> {
    let (_, m) = x.matrix_dims("l2_normalize_rows")?;
    Ok(x.data()
        .chunks(m)
        .map(|row| {
            let n = row.iter().map(|a| a * a).sum::<f64>().sqrt();
            if n < eps {
                0.0
            } else {
                n
            }
        })
        .collect())
}

pub(crate) fn l2_normalize_backward(y: &Tensor, norms: &[f64], grad: &Tensor) -> Result<Tensor> {
    let (_, m) = y.matrix_dims("l2_normalize_backward")?;
    let mut dx = vec![0.0; y.numel()];
    for (i, &norm) in norms.iter().enumerate() {
        if norm == 0.0 {
            continue;
        }
        let yr = &y.data()[i * m..(i + 1) * m];
        let gr = &grad.data()[i * m..(i + 1) * m];
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for c in 0..m {
            dx[i * m + c] = (gr[c] - yr[c] * dot) / norm;
        }
    }
    Tensor::from_vec(y.dims(), dx)
}
