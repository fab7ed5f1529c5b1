//! Reverse-mode differentiation, parameters and the AdamW optimizer.
//!
//! Model code is written once against the [`Graph`] trait and runs on either
//! backend:
//!
//! * [`Eager`] evaluates each op immediately and keeps nothing, which is what
//!   inference and benchmarks want.
//! * [`Tape`] records every op with the intermediates its derivative needs and
//!   replays them in reverse in [`Tape::backward`].
//!
//! Trainable weights live in a [`ParamStore`] and are referenced by
//! [`ParamId`]. A tape borrows the store immutably for the forward pass and
//! hands back a [`Gradients`] value, which is then accumulated into the store
//! before the optimizer step.

mod adamw;
mod eager;
mod functional;
mod gradcheck;
mod tape;

pub use adamw::AdamW;
pub use eager::Eager;
pub use gradcheck::{finite_diff_check, GradCheckOptions, GradCheckReport};
pub use tape::{Gradients, Tape, Var};

pub(crate) use functional::spectral_sigma;

use crate::attention::TaylorOptions;
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable tensor with its gradient and AdamW moment estimates.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub adam_m: Tensor,
    pub adam_v: Tensor,
    pub step_count: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let zeros = value.zeros_like();
        Parameter {
            name: name.into(),
            grad: zeros.clone(),
            adam_m: zeros.clone(),
            adam_v: zeros,
            value,
            step_count: 0,
        }
    }
}

/// Owns every parameter, in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Parameter::new(name, value));
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total element count of the given parameters.
    pub fn numel(&self, ids: &[ParamId]) -> usize {
        ids.iter().map(|&id| self.params[id.0].value.numel()).sum()
    }

    /// Adds recorded gradients into each parameter's `grad`.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in grads.params() {
            self.params[id.0].grad.add_assign(g);
        }
    }

    pub fn zero_grads(&mut self, ids: &[ParamId]) {
        for &id in ids {
            self.params[id.0].grad.data_mut().fill(0.0);
        }
    }
}

/// The op vocabulary shared by the eager and taped backends.
pub trait Graph {
    type Value: Clone;

    fn store(&self) -> &ParamStore;
    fn tensor<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor;

    fn constant(&mut self, t: Tensor) -> Self::Value;
    fn param(&mut self, id: ParamId) -> Self::Value;

    /// A copy of `v` with no gradient path back to its inputs.
    fn detach(&mut self, v: &Self::Value) -> Self::Value {
        let t = self.tensor(v).clone();
        self.constant(t)
    }

    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn sub(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn hadamard(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn scale(&mut self, a: &Self::Value, s: f64) -> Result<Self::Value>;
    fn add_scalar(&mut self, a: &Self::Value, s: f64) -> Result<Self::Value>;

    fn matmul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn transpose(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn reshape(&mut self, a: &Self::Value, dims: &[usize]) -> Result<Self::Value>;

    fn conv2d(
        &mut self,
        x: &Self::Value,
        w: &Self::Value,
        bias: Option<&Self::Value>,
        stride: usize,
        padding: usize,
    ) -> Result<Self::Value>;
    fn depthwise_conv2d(
        &mut self,
        x: &Self::Value,
        w: &Self::Value,
        bias: Option<&Self::Value>,
        stride: usize,
        padding: usize,
    ) -> Result<Self::Value>;
    fn upsample2x(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn concat_channels(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;

    fn gelu(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn tanh(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn relu(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn leaky_relu(&mut self, x: &Self::Value, slope: f64) -> Result<Self::Value>;
    fn abs(&mut self, x: &Self::Value) -> Result<Self::Value>;
    /// `max(log σ(x), log floor)` elementwise.
    fn log_sigmoid_clamped(&mut self, x: &Self::Value, floor: f64) -> Result<Self::Value>;

    /// Layer normalization across channels at every spatial site of a C×H×W
    /// tensor, with per-channel affine `gamma`, `beta`.
    fn layer_norm_channels(
        &mut self,
        x: &Self::Value,
        gamma: &Self::Value,
        beta: &Self::Value,
        eps: f64,
    ) -> Result<Self::Value>;
    fn softmax_rows(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn l2_normalize_rows(&mut self, x: &Self::Value, eps: f64) -> Result<Self::Value>;
    /// Multi-head Taylor linear attention on N×C matrices.
    fn taylor_attention(
        &mut self,
        q: &Self::Value,
        k: &Self::Value,
        v: &Self::Value,
        heads: usize,
        opts: TaylorOptions,
    ) -> Result<Self::Value>;
    /// `w / σ` with `σ = uᵀ W v` for fixed singular-vector estimates `u`, `v`;
    /// `w` unchanged when `σ < eps`.
    fn spectral_scale(&mut self, w: &Self::Value, u: &Tensor, v: &Tensor, eps: f64) -> Result<Self::Value>;

    fn sum(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn mean(&mut self, x: &Self::Value) -> Result<Self::Value>;

    /// C×H×W → (H·W)×C.
    fn channels_to_rows(&mut self, x: &Self::Value) -> Result<Self::Value> {
        let (c, h, w) = self.tensor(x).chw("channels_to_rows")?;
        let flat = self.reshape(x, &[c, h * w])?;
        self.transpose(&flat)
    }

    /// (H·W)×C → C×H×W.
    fn rows_to_channels(&mut self, x: &Self::Value, h: usize, w: usize) -> Result<Self::Value> {
        let t = self.transpose(x)?;
        let c = self.tensor(&t).dims()[0];
        self.reshape(&t, &[c, h, w])
    }

    /// Mean absolute difference.
    fn l1_mean(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        let d = self.sub(a, b)?;
        let d = self.abs(&d)?;
        self.mean(&d)
    }

    /// Sum of absolute differences.
    fn l1_sum(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        let d = self.sub(a, b)?;
        let d = self.abs(&d)?;
        self.sum(&d)
    }
}
