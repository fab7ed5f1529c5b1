//! Dense row-major `f64` tensors and the numerical primitives the rest of the
//! crate is built from.
//!
//! Every operation takes its inputs by reference and returns a fresh tensor;
//! nothing is modified in place through the public interface. Reductions run in
//! a fixed loop order so results are bit-reproducible for a given build.

mod activation;
mod conv;
mod linalg;

pub use activation::{gelu, gelu_derivative, leaky_relu, normal_cdf, relu, sigmoid, tanh};
pub use conv::{
    col2im, conv2d, conv2d_backward, conv_output_size, depthwise_conv2d,
    depthwise_conv2d_backward, im2col, nearest_upsample2x, upsample2x_backward,
};
pub(crate) use linalg::gemm;
pub use linalg::{l2_normalize_rows, matmul, softmax_rows, transpose};

use crate::error::{Error, Result};
use std::fmt;

/// Tensor dimensions, outermost first.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::shape("shape", "a shape needs at least one dimension"));
        }
        if dims.contains(&0) {
            return Err(Error::shape("shape", format!("zero-sized dimension in {dims:?}")));
        }
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::shape("shape", format!("element count of {dims:?} overflows")))?;
        Ok(Shape(dims.to_vec()))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor{:?} ", self.shape)?;
        if self.data.len() <= PREVIEW {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "{:?}..", &self.data[..PREVIEW])
        }
    }
}

impl Tensor {
    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return Err(Error::shape(
                "from_vec",
                format!("shape {:?} needs {} elements, got {}", dims, shape.numel(), data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    /// Builds a 2-d tensor from rows. Panics on ragged input; meant for literals.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Tensor::from_vec(&[rows.len(), cols], data).expect("valid literal")
    }

    pub fn full(dims: &[usize], value: f64) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let data = vec![value; shape.numel()];
        Ok(Tensor { shape, data })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::full(dims, 0.0)
    }

    pub fn ones(dims: &[usize]) -> Result<Self> {
        Self::full(dims, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Shape(vec![1]),
            data: vec![value],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: vec![0.0; self.data.len()],
        }
    }

    pub fn eye(n: usize) -> Result<Self> {
        let mut t = Self::zeros(&[n, n])?;
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        Ok(t)
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::NotScalar(self.dims().to_vec()))
        }
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    fn offset(&self, index: &[usize]) -> usize {
        let dims = self.dims();
        assert_eq!(index.len(), dims.len(), "index rank mismatch");
        index.iter().zip(dims).fold(0, |acc, (&i, &d)| {
            assert!(i < d, "index {index:?} out of bounds for {dims:?}");
            acc * d + i
        })
    }

    pub fn reshape(&self, dims: &[usize]) -> Result<Tensor> {
        let shape = Shape::new(dims)?;
        if shape.numel() != self.numel() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {:?} changes the element count", self.dims(), dims),
            ));
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.expect_same_shape(other, op)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub(crate) fn expect_same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.dims(), other.dims())));
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "hadamard", |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|x| x * s)
    }

    pub fn add_scalar(&self, s: f64) -> Tensor {
        self.map(|x| x + s)
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.numel() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.expect_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Stacks `a` (C1×H×W) on top of `b` (C2×H×W) along the channel axis.
    pub fn concat_channels(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.dims(), other.dims());
        if a.len() != 3 || b.len() != 3 || a[1..] != b[1..] {
            return Err(Error::shape("concat_channels", format!("{a:?} vs {b:?}")));
        }
        let mut data = Vec::with_capacity(self.numel() + other.numel());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Tensor::from_vec(&[a[0] + b[0], a[1], a[2]], data)
    }

    /// Channels `[start, end)` of a C×H×W tensor.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<Tensor> {
        let d = self.dims();
        if d.len() != 3 || start >= end || end > d[0] {
            return Err(Error::shape(
                "slice_channels",
                format!("range {start}..{end} of {d:?}"),
            ));
        }
        let plane = d[1] * d[2];
        Tensor::from_vec(&[end - start, d[1], d[2]], self.data[start * plane..end * plane].to_vec())
    }

    /// Requires a C×H×W tensor; returns (C, H, W).
    pub fn chw(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match *self.dims() {
            [c, h, w] => Ok((c, h, w)),
            ref d => Err(Error::shape(op, format!("expected C×H×W, got {d:?}"))),
        }
    }

    /// Requires a 2-d tensor; returns (rows, cols).
    pub fn matrix_dims(&self, op: &'static str) -> Result<(usize, usize)> {
        match *self.dims() {
            [r, c] => Ok((r, c)),
            ref d => Err(Error::shape(op, format!("expected a matrix, got {d:?}"))),
        }
    }
}
