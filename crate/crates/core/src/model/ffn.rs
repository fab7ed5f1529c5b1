use crate::autograd::{Graph, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::nn::{Conv2dLayer, DepthwiseLayer};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FFNConfig {
    pub channels: usize,
    /// Hidden width multiplier.
    pub expansion: f64,
}

impl FFNConfig {
    pub fn hidden(&self) -> usize {
        (self.channels as f64 * self.expansion).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !self.expansion.is_finite() || self.expansion <= 0.0 || self.hidden() < 1 {
            return Err(Error::Config(format!(
                "ffn expansion {} gives no hidden channels at width {}",
                self.expansion, self.channels
            )));
        }
        Ok(())
    }
}

/// Gated feed-forward unit: two `depthwise3×3(conv1×1(x))` branches, the
/// second through GELU, multiplied and projected back with a 1×1 conv.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub config: FFNConfig,
    pub expand_i: Conv2dLayer,
    pub depthwise_i: DepthwiseLayer,
    pub expand_g: Conv2dLayer,
    pub depthwise_g: DepthwiseLayer,
    pub project: Conv2dLayer,
}

impl FeedForward {
    pub fn register(store: &mut ParamStore, rng: &mut Rng, name: &str, config: FFNConfig) -> Result<Self> {
        config.validate()?;
        let (c, hid) = (config.channels, config.hidden());
        Ok(FeedForward {
            config,
            expand_i: Conv2dLayer::pointwise(store, rng, &format!("{name}.expand_i"), c, hid),
            depthwise_i: DepthwiseLayer::register(store, rng, &format!("{name}.dw_i"), hid, 3),
            expand_g: Conv2dLayer::pointwise(store, rng, &format!("{name}.expand_g"), c, hid),
            depthwise_g: DepthwiseLayer::register(store, rng, &format!("{name}.dw_g"), hid, 3),
            project: Conv2dLayer::pointwise(store, rng, &format!("{name}.project"), hid, c),
        })
    }

    pub fn forward<G: Graph>(&self, g: &mut G, x: &G::Value) -> Result<G::Value> {
        let a = self.expand_i.forward(g, x)?;
        let a = self.depthwise_i.forward(g, &a)?;
        let b = self.expand_g.forward(g, x)?;
        let b = self.depthwise_g.forward(g, &b)?;
        let b = g.gelu(&b)?;
        let mixed = g.hadamard(&a, &b)?;
        self.project.forward(g, &mixed)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::with_capacity(10);
        ids.extend(self.expand_i.param_ids());
        ids.extend(self.depthwise_i.param_ids());
        ids.extend(self.expand_g.param_ids());
        ids.extend(self.depthwise_g.param_ids());
        ids.extend(self.project.param_ids());
        ids
    }
}
