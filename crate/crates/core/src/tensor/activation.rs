use super::Tensor;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Standard normal CDF, Φ(x) = (1 + erf(x/√2)) / 2.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub(crate) fn gelu_scalar(x: f64) -> f64 {
    x * normal_cdf(x)
}

pub(crate) fn gelu_grad_scalar(x: f64) -> f64 {
    normal_cdf(x) + x * normal_pdf(x)
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Exact (erf-form) GELU.
pub fn gelu(x: &Tensor) -> Tensor {
    x.map(gelu_scalar)
}

pub fn gelu_derivative(x: &Tensor) -> Tensor {
    x.map(gelu_grad_scalar)
}

pub fn tanh(x: &Tensor) -> Tensor {
    x.map(f64::tanh)
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    x.map(|v| if v >= 0.0 { v } else { slope * v })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_points() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!((gelu_scalar(10.0) - 10.0).abs() < 1e-6);
        assert!((gelu_scalar(1.0) - 0.841_344_746_068_543).abs() < 1e-12);
        assert!((normal_cdf(-1.0) - 0.158_655_253_931_457).abs() < 1e-12);
    }

    #[test]
    fn gelu_derivative_matches_central_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu_scalar(x + h) - gelu_scalar(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad_scalar(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid_scalar(-1000.0), 0.0);
        assert_eq!(sigmoid_scalar(1000.0), 1.0);
        assert_eq!(sigmoid_scalar(0.0), 0.5);
    }
}
