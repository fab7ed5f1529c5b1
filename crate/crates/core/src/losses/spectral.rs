use crate::autograd::spectral_sigma;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Below this the weight is treated as zero and left unscaled.
pub const SPECTRAL_EPS: f64 = 1e-12;

/// Running singular-vector estimates for one weight tensor viewed as a
/// `Cout × (Cin·k·k)` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralNormState {
    /// Left singular estimate, unit length.
    pub u: Tensor,
    /// Right singular estimate, unit length once updated.
    pub v: Tensor,
    pub power_iters: usize,
}

fn normalized(mut x: Vec<f64>) -> Option<Vec<f64>> {
    let norm = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm < SPECTRAL_EPS {
        return None;
    }
    x.iter_mut().for_each(|a| *a /= norm);
    Some(x)
}

impl SpectralNormState {
    pub fn new(rows: usize, cols: usize, power_iters: usize, rng: &mut Rng) -> Self {
        let mut u = rng.normal_tensor(&[rows], 1.0);
        let unit = normalized(u.data().to_vec()).unwrap_or_else(|| {
            let mut e = vec![0.0; rows];
            e[0] = 1.0;
            e
        });
        u.data_mut().copy_from_slice(&unit);
        SpectralNormState {
            u,
            v: Tensor::zeros(&[cols]).expect("positive width"),
            power_iters,
        }
    }

    pub fn for_weight(w: &Tensor, power_iters: usize, rng: &mut Rng) -> Self {
        let rows = w.dims()[0];
        Self::new(rows, w.numel() / rows, power_iters, rng)
    }

    /// Runs `power_iters` rounds of `v ← Wᵀu/‖·‖`, `u ← Wv/‖·‖` and returns
    /// `σ̂ = uᵀ W v`. For a zero matrix the estimates are kept and σ̂ = 0.
    pub fn update(&mut self, w: &Tensor) -> Result<f64> {
        let rows = self.u.numel();
        let cols = self.v.numel();
        if w.dims()[0] != rows || w.numel() != rows * cols {
            return Err(Error::shape(
                "spectral_normalize",
                format!("weight {:?} does not match state {rows}×{cols}", w.dims()),
            ));
        }
        if self.power_iters == 0 {
            return Err(Error::InvalidArgument("spectral norm needs at least one power iteration".into()));
        }
        let wd = w.data();
        for _ in 0..self.power_iters {
            let u = self.u.data();
            let mut v = vec![0.0; cols];
            for (r, &ur) in u.iter().enumerate() {
                for (vc, &x) in v.iter_mut().zip(&wd[r * cols..(r + 1) * cols]) {
                    *vc += ur * x;
                }
            }
            let Some(v) = normalized(v) else { break };
            let u: Vec<f64> = (0..rows)
                .map(|r| wd[r * cols..(r + 1) * cols].iter().zip(&v).map(|(a, b)| a * b).sum())
                .collect();
            let Some(u) = normalized(u) else { break };
            self.u.data_mut().copy_from_slice(&u);
            self.v.data_mut().copy_from_slice(&v);
        }
        spectral_sigma(w, &self.u, &self.v)
    }
}

/// Updates `state` and returns `w / σ̂`, or `w` unchanged when σ̂ is below
/// [`SPECTRAL_EPS`].
pub fn spectral_normalize(w: &Tensor, state: &mut SpectralNormState) -> Result<Tensor> {
    let sigma = state.update(w)?;
    Ok(if sigma.abs() < SPECTRAL_EPS { w.clone() } else { w.scale(1.0 / sigma) })
}
