use super::functional::{self, log_sigmoid, LayerNormSaved};
use super::{Graph, ParamId, ParamStore};
use crate::attention::{taylor_heads_backward, taylor_heads_forward, TaylorOptions, TaylorSaved};
use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};
use std::collections::BTreeMap;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Constant,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Conv2d { x: Var, w: Var, bias: Option<Var>, stride: usize, padding: usize },
    Depthwise { x: Var, w: Var, bias: Option<Var>, stride: usize, padding: usize },
    Upsample2x(Var),
    Concat(Var, Var),
    Gelu(Var),
    Tanh(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Abs(Var),
    LogSigmoidClamped { x: Var, clamped: Vec<bool> },
    LayerNorm { x: Var, gamma: Var, beta: Var, saved: LayerNormSaved },
    Softmax(Var),
    L2Normalize { x: Var, norms: Vec<f64> },
    Taylor { q: Var, k: Var, v: Var, saved: Vec<TaylorSaved> },
    SpectralScale { w: Var, u: Tensor, v: Tensor, sigma: f64 },
    Sum(Var),
    Mean(Var),
    Opaque(&'static str),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Opaque(name) => name,
            _ => "op",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records ops in execution order for a single reverse pass.
pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
}

/// Result of [`Tape::backward`]: gradients per parameter and per recorded value.
pub struct Gradients {
    params: BTreeMap<ParamId, Tensor>,
    nodes: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params.iter().map(|(&id, t)| (id, t))
    }

    /// Gradient of the loss with respect to a recorded value, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Tape { store, nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Records a value computed outside the tape from `inputs`. It has no
    /// derivative: a backward pass that reaches it fails.
    pub fn opaque(&mut self, name: &'static str, value: Tensor) -> Var {
        self.push(value, Op::Opaque(name))
    }

    /// Propagates d(loss)/d(·) through every recorded op in reverse order.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = self.val(loss);
        if !loss_value.is_scalar() {
            return Err(Error::NotScalar(loss_value.dims().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(loss_value.map(|_| 1.0));
        let mut params: BTreeMap<ParamId, Tensor> = BTreeMap::new();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => match params.get_mut(id) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        params.insert(*id, g.clone());
                    }
                },
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.scale(-1.0));
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Hadamard(a, b) => {
                    let ga = g.hadamard(self.val(*b))?;
                    let gb = g.hadamard(self.val(*a))?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.scale(*s)),
                Op::AddScalar(a) => accumulate(&mut grads, *a, g.clone()),
                Op::MatMul(a, b) => {
                    let ga = tensor::matmul(&g, &tensor::transpose(self.val(*b))?)?;
                    let gb = tensor::matmul(&tensor::transpose(self.val(*a))?, &g)?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, tensor::transpose(&g)?),
                Op::Reshape(a) => accumulate(&mut grads, *a, g.reshape(self.val(*a).dims())?),
                Op::Conv2d { x, w, bias, stride, padding } => {
                    let (dx, dw, db) = tensor::conv2d_backward(self.val(*x), self.val(*w), &g, *stride, *padding)?;
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *w, dw);
                    if let Some(b) = bias {
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Depthwise { x, w, bias, stride, padding } => {
                    let (dx, dw, db) =
                        tensor::depthwise_conv2d_backward(self.val(*x), self.val(*w), &g, *stride, *padding)?;
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *w, dw);
                    if let Some(b) = bias {
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Upsample2x(a) => accumulate(&mut grads, *a, tensor::upsample2x_backward(&g)?),
                Op::Concat(a, b) => {
                    let ca = self.val(*a).dims()[0];
                    let cb = self.val(*b).dims()[0];
                    accumulate(&mut grads, *a, g.slice_channels(0, ca)?);
                    accumulate(&mut grads, *b, g.slice_channels(ca, ca + cb)?);
                }
                Op::Gelu(a) => {
                    let d = tensor::gelu_derivative(self.val(*a));
                    accumulate(&mut grads, *a, g.hadamard(&d)?);
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    accumulate(&mut grads, *a, g.zip_map(y, "tanh_backward", |gv, yv| gv * (1.0 - yv * yv))?);
                }
                Op::Relu(a) => {
                    let x = self.val(*a);
                    accumulate(&mut grads, *a, g.zip_map(x, "relu_backward", |gv, xv| if xv > 0.0 { gv } else { 0.0 })?);
                }
                Op::LeakyRelu(a, slope) => {
                    let x = self.val(*a);
                    let s = *slope;
                    accumulate(
                        &mut grads,
                        *a,
                        g.zip_map(x, "leaky_relu_backward", |gv, xv| if xv >= 0.0 { gv } else { s * gv })?,
                    );
                }
                Op::Abs(a) => {
                    let x = self.val(*a);
                    accumulate(&mut grads, *a, g.zip_map(x, "abs_backward", |gv, xv| gv * sign(xv))?);
                }
                Op::LogSigmoidClamped { x, clamped } => {
                    let xv = self.val(*x);
                    let mut d = g.clone();
                    for ((dv, &xi), &c) in d.data_mut().iter_mut().zip(xv.data()).zip(clamped) {
                        *dv = if c { 0.0 } else { *dv * tensor_sigmoid(-xi) };
                    }
                    accumulate(&mut grads, *x, d);
                }
                Op::LayerNorm { x, gamma, beta, saved } => {
                    let (dx, dg, db) = functional::layer_norm_backward(saved, self.val(*gamma), &g)?;
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gamma, dg);
                    accumulate(&mut grads, *beta, db);
                }
                Op::Softmax(a) => accumulate(&mut grads, *a, functional::softmax_backward(&node.value, &g)?),
                Op::L2Normalize { x, norms } => {
                    accumulate(&mut grads, *x, functional::l2_normalize_backward(&node.value, norms, &g)?)
                }
                Op::Taylor { q, k, v, saved } => {
                    let (dq, dk, dv) = taylor_heads_backward(saved, &g)?;
                    accumulate(&mut grads, *q, dq);
                    accumulate(&mut grads, *k, dk);
                    accumulate(&mut grads, *v, dv);
                }
                Op::SpectralScale { w, u, v, sigma } => {
                    let dw = if sigma.is_nan() {
                        g.clone()
                    } else {
                        functional::spectral_scale_backward(self.val(*w), u, v, *sigma, &g)?
                    };
                    accumulate(&mut grads, *w, dw);
                }
                Op::Sum(a) => {
                    let gv = g.item()?;
                    accumulate(&mut grads, *a, self.val(*a).map(|_| gv));
                }
                Op::Mean(a) => {
                    let x = self.val(*a);
                    let gv = g.item()? / x.numel() as f64;
                    accumulate(&mut grads, *a, x.map(|_| gv));
                }
                op @ Op::Opaque(_) => return Err(Error::NoDerivative(op.name())),
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { params, nodes: grads })
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn tensor_sigmoid(x: f64) -> f64 {
    log_sigmoid(x).exp()
}

impl Graph for Tape<'_> {
    type Value = Var;

    fn store(&self) -> &ParamStore {
        self.store
    }

    fn tensor<'a>(&'a self, v: &'a Var) -> &'a Tensor {
        self.val(*v)
    }

    fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant)
    }

    fn param(&mut self, id: ParamId) -> Var {
        let value = self.store.value(id).clone();
        self.push(value, Op::Param(id))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let y = self.val(*a).add(self.val(*b))?;
        Ok(self.push(y, Op::Add(*a, *b)))
    }

    fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let y = self.val(*a).sub(self.val(*b))?;
        Ok(self.push(y, Op::Sub(*a, *b)))
    }

    fn hadamard(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let y = self.val(*a).hadamard(self.val(*b))?;
        Ok(self.push(y, Op::Hadamard(*a, *b)))
    }

    fn scale(&mut self, a: &Var, s: f64) -> Result<Var> {
        let y = self.val(*a).scale(s);
        Ok(self.push(y, Op::Scale(*a, s)))
    }

    fn add_scalar(&mut self, a: &Var, s: f64) -> Result<Var> {
        let y = self.val(*a).add_scalar(s);
        Ok(self.push(y, Op::AddScalar(*a)))
    }

    fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let y = tensor::matmul(self.val(*a), self.val(*b))?;
        Ok(self.push(y, Op::MatMul(*a, *b)))
    }

    fn transpose(&mut self, a: &Var) -> Result<Var> {
        let y = tensor::transpose(self.val(*a))?;
        Ok(self.push(y, Op::Transpose(*a)))
    }

    fn reshape(&mut self, a: &Var, dims: &[usize]) -> Result<Var> {
        let y = self.val(*a).reshape(dims)?;
        Ok(self.push(y, Op::Reshape(*a)))
    }

    fn conv2d(&mut self, x: &Var, w: &Var, bias: Option<&Var>, stride: usize, padding: usize) -> Result<Var> {
        let y = tensor::conv2d(self.val(*x), self.val(*w), bias.map(|b| self.val(*b)), stride, padding)?;
        Ok(self.push(
            y,
            Op::Conv2d { x: *x, w: *w, bias: bias.copied(), stride, padding },
        ))
    }

    fn depthwise_conv2d(&mut self, x: &Var, w: &Var, bias: Option<&Var>, stride: usize, padding: usize) -> Result<Var> {
        let y = tensor::depthwise_conv2d(self.val(*x), self.val(*w), bias.map(|b| self.val(*b)), stride, padding)?;
        Ok(self.push(
            y,
            Op::Depthwise { x: *x, w: *w, bias: bias.copied(), stride, padding },
        ))
    }

    fn upsample2x(&mut self, x: &Var) -> Result<Var> {
        let y = tensor::nearest_upsample2x(self.val(*x))?;
        Ok(self.push(y, Op::Upsample2x(*x)))
    }

    fn concat_channels(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let y = self.val(*a).concat_channels(self.val(*b))?;
        Ok(self.push(y, Op::Concat(*a, *b)))
    }

    fn gelu(&mut self, x: &Var) -> Result<Var> {
        let y = tensor::gelu(self.val(*x));
        Ok(self.push(y, Op::Gelu(*x)))
    }

    fn tanh(&mut self, x: &Var) -> Result<Var> {
        let y = tensor::tanh(self.val(*x));
        Ok(self.push(y, Op::Tanh(*x)))
    }

    fn relu(&mut self, x: &Var) -> Result<Var> {
        let y = tensor::relu(self.val(*x));
        Ok(self.push(y, Op::Relu(*x)))
    }

    fn leaky_relu(&mut self, x: &Var, slope: f64) -> Result<Var> {
        let y = tensor::leaky_relu(self.val(*x), slope);
        Ok(self.push(y, Op::LeakyRelu(*x, slope)))
    }

    fn abs(&mut self, x: &Var) -> Result<Var> {
        let y = self.val(*x).map(f64::abs);
        Ok(self.push(y, Op::Abs(*x)))
    }

    fn log_sigmoid_clamped(&mut self, x: &Var, floor: f64) -> Result<Var> {
        let lf = floor.ln();
        let xv = self.val(*x);
        let raw: Vec<f64> = xv.data().iter().map(|&v| log_sigmoid(v)).collect();
        let clamped: Vec<bool> = raw.iter().map(|&r| r < lf).collect();
        let y = Tensor::from_vec(xv.dims(), raw.into_iter().map(|r| r.max(lf)).collect())?;
        Ok(self.push(y, Op::LogSigmoidClamped { x: *x, clamped }))
    }

    fn layer_norm_channels(&mut self, x: &Var, gamma: &Var, beta: &Var, eps: f64) -> Result<Var> {
        let (y, saved) = functional::layer_norm_channels(self.val(*x), self.val(*gamma), self.val(*beta), eps)?;
        Ok(self.push(y, Op::LayerNorm { x: *x, gamma: *gamma, beta: *beta, saved }))
    }

    fn softmax_rows(&mut self, x: &Var) -> Result<Var> {
        let y = tensor::softmax_rows(self.val(*x))?;
        Ok(self.push(y, Op::Softmax(*x)))
    }

    fn l2_normalize_rows(&mut self, x: &Var, eps: f64) -> Result<Var> {
        let y = tensor::l2_normalize_rows(self.val(*x), eps)?;
        let norms = functional::row_norms(self.val(*x), eps)?;
        Ok(self.push(y, Op::L2Normalize { x: *x, norms }))
    }

    fn taylor_attention(&mut self, q: &Var, k: &Var, v: &Var, heads: usize, opts: TaylorOptions) -> Result<Var> {
        let (y, saved) = taylor_heads_forward(self.val(*q), self.val(*k), self.val(*v), heads, opts)?;
        Ok(self.push(y, Op::Taylor { q: *q, k: *k, v: *v, saved }))
    }

    fn spectral_scale(&mut self, w: &Var, u: &Tensor, v: &Tensor, eps: f64) -> Result<Var> {
        let wv = self.val(*w);
        let sigma = functional::spectral_sigma(wv, u, v)?;
        // NaN marks the pass-through branch taken for a (near) zero weight
        let (y, sigma) = if sigma.abs() < eps {
            (wv.clone(), f64::NAN)
        } else {
            (wv.scale(1.0 / sigma), sigma)
        };
        Ok(self.push(
            y,
            Op::SpectralScale { w: *w, u: u.clone(), v: v.clone(), sigma },
        ))
    }

    fn sum(&mut self, x: &Var) -> Result<Var> {
        let y = Tensor::scalar(self.val(*x).sum());
        Ok(self.push(y, Op::Sum(*x)))
    }

    fn mean(&mut self, x: &Var) -> Result<Var> {
        let y = Tensor::scalar(self.val(*x).mean());
        Ok(self.push(y, Op::Mean(*x)))
    }
}
