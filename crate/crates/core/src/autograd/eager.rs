use super::functional::{self, log_sigmoid};
use super::{Graph, ParamId, ParamStore};
use crate::attention::{taylor_heads_forward, TaylorOptions};
use crate::error::Result;
use crate::tensor::{self, Tensor};

/// Immediate evaluation with no recording.
pub struct Eager<'s> {
    store: &'s ParamStore,
}

impl<'s> Eager<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Eager { store }
    }
}

impl Graph for Eager<'_> {
    type Value = Tensor;

    fn store(&self) -> &ParamStore {
        self.store
    }

    fn tensor<'a>(&'a self, v: &'a Tensor) -> &'a Tensor {
        v
    }

    fn constant(&mut self, t: Tensor) -> Tensor {
        t
    }

    fn param(&mut self, id: ParamId) -> Tensor {
        self.store.value(id).clone()
    }

    fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.add(b)
    }

    fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.sub(b)
    }

    fn hadamard(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.hadamard(b)
    }

    fn scale(&mut self, a: &Tensor, s: f64) -> Result<Tensor> {
        Ok(a.scale(s))
    }

    fn add_scalar(&mut self, a: &Tensor, s: f64) -> Result<Tensor> {
        Ok(a.add_scalar(s))
    }

    fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        tensor::matmul(a, b)
    }

    fn transpose(&mut self, a: &Tensor) -> Result<Tensor> {
        tensor::transpose(a)
    }

    fn reshape(&mut self, a: &Tensor, dims: &[usize]) -> Result<Tensor> {
        a.reshape(dims)
    }

    fn conv2d(&mut self, x: &Tensor, w: &Tensor, bias: Option<&Tensor>, stride: usize, padding: usize) -> Result<Tensor> {
        tensor::conv2d(x, w, bias, stride, padding)
    }

    fn depthwise_conv2d(&mut self, x: &Tensor, w: &Tensor, bias: Option<&Tensor>, stride: usize, padding: usize) -> Result<Tensor> {
        tensor::depthwise_conv2d(x, w, bias, stride, padding)
    }

    fn upsample2x(&mut self, x: &Tensor) -> Result<Tensor> {
        tensor::nearest_upsample2x(x)
    }

    fn concat_channels(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.concat_channels(b)
    }

    fn gelu(&mut self, x: &Tensor) -> Result<Tensor> {
        Ok(tensor::gelu(x))
    }

    fn tanh(&mut self, x: &Tensor) -> Result<Tensor> {
        Ok(tensor::tanh(x))
    }

    fn relu(&mut self, x: &Tensor) -> Result<Tensor> {
        Ok(tensor::relu(x))
    }

    fn leaky_relu(&mut self, x: &Tensor, slope: f64) -> Result<Tensor> {
        Ok(tensor::leaky_relu(x, slope))
    }

    fn abs(&mut self, x: &Tensor) -> Result<Tensor> {
        Ok(x.map(f64::abs))
    }

    fn log_sigmoid_clamped(&mut self, x: &Tensor, floor: f64) -> Result<Tensor> {
        let lf = floor.ln();
        Ok(x.map(|v| log_sigmoid(v).max(lf)))
    }

    fn layer_norm_channels(&mut self, x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        Ok(functional::layer_norm_channels(x, gamma, beta, eps)?.0)
    }

    fn softmax_rows(&mut self, x: &Tensor) -> Result<Tensor> {
        tensor::softmax_rows(x)
    }

    fn l2_normalize_rows(&mut self, x: &Tensor, eps: f64) -> Result<Tensor> {
        tensor::l2_normalize_rows(x, eps)
    }

    fn taylor_attention(&mut self, q: &Tensor, k: &Tensor, v: &Tensor, heads: usize, opts: TaylorOptions) -> Result<Tensor> {
        Ok(taylor_heads_forward(q, k, v, heads, opts)?.0)
    }

    fn spectral_scale(&mut self, w: &Tensor, u: &Tensor, v: &Tensor, eps: f64) -> Result<Tensor> {
        let sigma = functional::spectral_sigma(w, u, v)?;
        Ok(if sigma.abs() < eps { w.clone() } else { w.scale(1.0 / sigma) })
    }

    fn sum(&mut self, x: &Tensor) -> Result<Tensor> {
        Ok(Tensor::scalar(x.sum()))
    }

    fn mean(&mut self, x: &Tensor) -> Result<Tensor> {
        Ok(Tensor::scalar(x.mean()))
    }
}
