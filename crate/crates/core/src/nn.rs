//! Small parameterized layers shared by the attention, model and loss code.

use crate::autograd::{Graph, ParamId, ParamStore};
use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Dense 2-d convolution with bias. Weights start as N(0, 1/fan_in).
#[derive(Clone, Debug)]
pub struct Conv2dLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn register(
        store: &mut ParamStore,
        rng: &mut Rng,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f64;
        let w = rng.normal_tensor(&[out_channels, in_channels, kernel, kernel], fan_in.recip().sqrt());
        Conv2dLayer {
            weight: store.add(format!("{name}.weight"), w),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels]).expect("positive width")),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    /// 1×1, stride 1, no padding.
    pub fn pointwise(store: &mut ParamStore, rng: &mut Rng, name: &str, cin: usize, cout: usize) -> Self {
        Self::register(store, rng, name, cin, cout, 1, 1, 0)
    }

    /// k×k, stride 1, padding k/2 (spatial size preserved for odd k).
    pub fn same(store: &mut ParamStore, rng: &mut Rng, name: &str, cin: usize, cout: usize, k: usize) -> Self {
        Self::register(store, rng, name, cin, cout, k, 1, k / 2)
    }

    pub fn forward<G: Graph>(&self, g: &mut G, x: &G::Value) -> Result<G::Value> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.conv2d(x, &w, Some(&b), self.stride, self.padding)
    }

    pub fn param_ids(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

/// Per-channel k×k convolution with bias, stride 1, same padding.
#[derive(Clone, Debug)]
pub struct DepthwiseLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub channels: usize,
    pub kernel: usize,
}

impl DepthwiseLayer {
    pub fn register(store: &mut ParamStore, rng: &mut Rng, name: &str, channels: usize, kernel: usize) -> Self {
        let fan_in = (kernel * kernel) as f64;
        let w = rng.normal_tensor(&[channels, kernel, kernel], fan_in.recip().sqrt());
        DepthwiseLayer {
            weight: store.add(format!("{name}.weight"), w),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[channels]).expect("positive width")),
            channels,
            kernel,
        }
    }

    pub fn forward<G: Graph>(&self, g: &mut G, x: &G::Value) -> Result<G::Value> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.depthwise_conv2d(x, &w, Some(&b), 1, self.kernel / 2)
    }

    pub fn param_ids(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

/// Layer normalization over channels with learnable per-channel scale and shift.
#[derive(Clone, Debug)]
pub struct ChannelLayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl ChannelLayerNorm {
    pub fn register(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        ChannelLayerNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[channels]).expect("positive width")),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels]).expect("positive width")),
            eps: 1e-5,
        }
    }

    pub fn forward<G: Graph>(&self, g: &mut G, x: &G::Value) -> Result<G::Value> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm_channels(x, &gamma, &beta, self.eps)
    }

    pub fn param_ids(&self) -> [ParamId; 2] {
        [self.gamma, self.beta]
    }
}
