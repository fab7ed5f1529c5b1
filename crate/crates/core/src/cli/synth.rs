//! Deterministic test images and masks.

use crate::rng::Rng;
use crate::tensor::Tensor;

/// Smooth 3×H×W image in `[0, 1]`: a few random low-frequency waves per
/// channel over a colour gradient.
pub fn synthetic_image(h: usize, w: usize, seed: u64) -> Tensor {
    let mut rng = Rng::new(seed);
    let plane = h * w;
    let mut data = vec![0.0; 3 * plane];
    for c in 0..3 {
        let waves: Vec<[f64; 4]> = (0..3)
            .map(|_| {
                [
                    rng.uniform() * 3.0 + 0.5,
                    rng.uniform() * 3.0 + 0.5,
                    rng.uniform() * std::f64::consts::TAU,
                    0.1 + 0.1 * rng.uniform(),
                ]
            })
            .collect();
        let (gx, gy) = (rng.uniform() - 0.5, rng.uniform() - 0.5);
        for y in 0..h {
            for x in 0..w {
                let (u, v) = (x as f64 / w as f64, y as f64 / h as f64);
                let mut val = 0.5 + 0.3 * (gx * (u - 0.5) + gy * (v - 0.5));
                for [fx, fy, phase, amp] in &waves {
                    val += amp * (std::f64::consts::TAU * (fx * u + fy * v) + phase).sin();
                }
                data[c * plane + y * w + x] = val.clamp(0.0, 1.0);
            }
        }
    }
    Tensor::from_vec(&[3, h, w], data).expect("positive dims")
}

/// 1×H×W binary mask (1 = valid) built from random rectangles until at least
/// `ratio` of the pixels are missing.
pub fn synthetic_mask(h: usize, w: usize, ratio: f64, seed: u64) -> Tensor {
    let mut rng = Rng::new(seed);
    let mut mask = vec![1.0; h * w];
    let target = (ratio.clamp(0.0, 1.0) * (h * w) as f64).ceil() as usize;
    let mut missing = 0;
    while missing < target {
        let rh = 1 + rng.below(h.div_ceil(4));
        let rw = 1 + rng.below(w.div_ceil(4));
        let y0 = rng.below(h - rh + 1);
        let x0 = rng.below(w - rw + 1);
        'rect: for y in y0..y0 + rh {
            for x in x0..x0 + rw {
                if missing >= target {
                    break 'rect;
                }
                if mask[y * w + x] == 1.0 {
                    mask[y * w + x] = 0.0;
                    missing += 1;
                }
            }
        }
    }
    Tensor::from_vec(&[1, h, w], mask).expect("positive dims")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::mask_ratio;

    #[test]
    fn mask_hits_ratio() {
        let m = synthetic_mask(64, 64, 0.3, 1);
        let r = mask_ratio(&m).unwrap();
        assert!((r - 0.3).abs() < 1.0 / 4096.0 + 1e-12, "{r}");
    }

    #[test]
    fn image_in_range_and_seeded() {
        let a = synthetic_image(16, 24, 2);
        assert_eq!(a.dims(), &[3, 16, 24]);
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a, synthetic_image(16, 24, 2));
        assert_ne!(a, synthetic_image(16, 24, 3));
    }
}
