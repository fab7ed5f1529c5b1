//! PSNR, SSIM and mask statistics on images with values in `[0, 1]`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// A reference image and a candidate of the same shape, clamped to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    reference: Tensor,
    candidate: Tensor,
}

impl ImagePair {
    pub fn new(reference: &Tensor, candidate: &Tensor) -> Result<Self> {
        reference.chw("ImagePair")?;
        reference.expect_same_shape(candidate, "ImagePair")?;
        let clamp = |t: &Tensor| t.map(|v| v.clamp(0.0, 1.0));
        Ok(ImagePair {
            reference: clamp(reference),
            candidate: clamp(candidate),
        })
    }

    pub fn reference(&self) -> &Tensor {
        &self.reference
    }

    pub fn candidate(&self) -> &Tensor {
        &self.candidate
    }
}

/// `10·log10(1/MSE)` in dB; identical images give `f64::INFINITY`.
pub fn psnr(pair: &ImagePair) -> f64 {
    let mse = pair
        .reference
        .data()
        .iter()
        .zip(pair.candidate.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / pair.reference.numel() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let centre = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - centre).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = g.iter().sum();
    g.into_iter().map(|v| v / total).collect()
}

/// Separable weighted mean over every fully contained window.
fn filter_valid(plane: &[f64], h: usize, w: usize, win: &[f64]) -> Vec<f64> {
    let k = win.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = win.iter().enumerate().map(|(i, g)| g * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = win.iter().enumerate().map(|(i, g)| g * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity with an 11×11 Gaussian window (σ = 1.5),
/// averaged over valid window positions and then over channels.
pub fn ssim(pair: &ImagePair) -> Result<f64> {
    ssim_with(pair, SSIM_WINDOW, SSIM_SIGMA)
}

pub fn ssim_with(pair: &ImagePair, window: usize, sigma: f64) -> Result<f64> {
    let (c, h, w) = pair.reference.chw("ssim")?;
    if window == 0 || h < window || w < window {
        return Err(Error::InvalidArgument(format!(
            "image {h}×{w} is smaller than the {window}×{window} window"
        )));
    }
    let win = gaussian_window(window, sigma);
    let plane = h * w;
    let mut total = 0.0;
    for ch in 0..c {
        let x = &pair.reference.data()[ch * plane..(ch + 1) * plane];
        let y = &pair.candidate.data()[ch * plane..(ch + 1) * plane];
        let xx: Vec<f64> = x.iter().map(|a| a * a).collect();
        let yy: Vec<f64> = y.iter().map(|a| a * a).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
        let mx = filter_valid(x, h, w, &win);
        let my = filter_valid(y, h, w, &win);
        let sxx = filter_valid(&xx, h, w, &win);
        let syy = filter_valid(&yy, h, w, &win);
        let sxy = filter_valid(&xy, h, w, &win);
        let mut acc = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            let num = (2.0 * ux * uy + SSIM_C1) * (2.0 * cov + SSIM_C2);
            let den = (ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2);
            acc += num / den;
        }
        total += acc / mx.len() as f64;
    }
    Ok(total / c as f64)
}

/// Fraction of missing pixels (entries equal to 0) in a binary mask.
pub fn mask_ratio(mask: &Tensor) -> Result<f64> {
    let mut missing = 0usize;
    for (i, &v) in mask.data().iter().enumerate() {
        if v == 0.0 {
            missing += 1;
        } else if v != 1.0 {
            return Err(Error::InvalidArgument(format!("mask entry {i} is {v}, expected 0 or 1")));
        }
    }
    Ok(missing as f64 / mask.numel() as f64)
}

/// Ten-percent bucket label for a mask ratio, e.g. `0.23 → "20-30%"`.
pub fn mask_bucket(ratio: f64) -> String {
    let lo = ((ratio.clamp(0.0, 1.0) * 10.0).floor() as usize).min(9) * 10;
    format!("{lo}-{}%", lo + 10)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn psnr_closed_form() {
        let a = Rng::new(1).uniform_tensor(&[3, 8, 8], 0.1, 0.9);
        let b = a.add_scalar(1.0 / 255.0);
        let p = psnr(&ImagePair::new(&a, &b).unwrap());
        assert!((p - 20.0 * 255f64.log10()).abs() < 1e-9);
        assert_eq!(psnr(&ImagePair::new(&a, &a).unwrap()), f64::INFINITY);
    }

    #[test]
    fn ssim_identity_and_constants() {
        let a = Rng::new(2).uniform_tensor(&[3, 16, 16], 0.0, 1.0);
        assert_eq!(ssim(&ImagePair::new(&a, &a).unwrap()).unwrap(), 1.0);
        let p = Tensor::full(&[1, 12, 12], 0.2).unwrap();
        let q = Tensor::full(&[1, 12, 12], 0.6).unwrap();
        let expected = (2.0 * 0.2 * 0.6 + SSIM_C1) / (0.04 + 0.36 + SSIM_C1);
        let s = ssim(&ImagePair::new(&p, &q).unwrap()).unwrap();
        assert!((s - expected).abs() < 1e-12, "{s} vs {expected}");
        let small = Tensor::zeros(&[1, 8, 8]).unwrap();
        assert!(ssim(&ImagePair::new(&small, &small).unwrap()).is_err());
    }

    #[test]
    fn mask_statistics() {
        assert_eq!(mask_ratio(&Tensor::ones(&[1, 4, 4]).unwrap()).unwrap(), 0.0);
        let half = Tensor::from_vec(&[1, 2, 2], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(mask_ratio(&half).unwrap(), 0.5);
        assert!(mask_ratio(&Tensor::full(&[1, 2, 2], 0.5).unwrap()).is_err());
        assert_eq!(mask_bucket(0.23), "20-30%");
        assert_eq!(mask_bucket(0.0), "0-10%");
        assert_eq!(mask_bucket(1.0), "90-100%");
    }
}
