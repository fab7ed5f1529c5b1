use super::spectral::{SpectralNormState, SPECTRAL_EPS};
use crate::autograd::{Graph, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::nn::Conv2dLayer;
use crate::rng::Rng;

pub const LEAKY_SLOPE: f64 = 0.2;

/// Four 4×4 stride-2 convs (widths `base·{1,2,4,8}`) with leaky ReLU, then a
/// 3×3 conv to a one-channel score map. Every kernel is spectrally
/// normalized.
#[derive(Clone, Debug)]
pub struct PatchDiscriminator {
    pub convs: Vec<Conv2dLayer>,
    pub spectral: Vec<SpectralNormState>,
}

impl PatchDiscriminator {
    pub const DEFAULT_BASE: usize = 64;

    pub fn new(store: &mut ParamStore, rng: &mut Rng, in_channels: usize, base: usize, power_iters: usize) -> Result<Self> {
        if base == 0 || in_channels == 0 {
            return Err(Error::Config("discriminator widths must be positive".into()));
        }
        let mut convs = Vec::with_capacity(5);
        let mut cin = in_channels;
        for i in 0..4 {
            let cout = base << i;
            convs.push(Conv2dLayer::register(store, rng, &format!("disc.conv{i}"), cin, cout, 4, 2, 1));
            cin = cout;
        }
        convs.push(Conv2dLayer::same(store, rng, "disc.score", cin, 1, 3));
        let spectral = convs
            .iter()
            .map(|c| SpectralNormState::for_weight(store.value(c.weight), power_iters, rng))
            .collect();
        Ok(PatchDiscriminator { convs, spectral })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.convs.iter().flat_map(Conv2dLayer::param_ids).collect()
    }

    /// Advances every power-iteration estimate against the current weights.
    pub fn refresh(&mut self, store: &ParamStore) -> Result<()> {
        for (conv, state) in self.convs.iter().zip(&mut self.spectral) {
            state.update(store.value(conv.weight))?;
        }
        Ok(())
    }

    /// Score map for `x`. With `trainable = false` the weights enter the graph
    /// as constants, so no gradient is recorded for them.
    pub fn forward<G: Graph>(&self, g: &mut G, x: &G::Value, trainable: bool) -> Result<G::Value> {
        let last = self.convs.len() - 1;
        let mut h = x.clone();
        for (i, (conv, state)) in self.convs.iter().zip(&self.spectral).enumerate() {
            let (w, b) = if trainable {
                (g.param(conv.weight), g.param(conv.bias))
            } else {
                let w = g.store().value(conv.weight).clone();
                let b = g.store().value(conv.bias).clone();
                (g.constant(w), g.constant(b))
            };
            let w = g.spectral_scale(&w, &state.u, &state.v, SPECTRAL_EPS)?;
            h = g.conv2d(&h, &w, Some(&b), conv.stride, conv.padding)?;
            if i < last {
                h = g.leaky_relu(&h, LEAKY_SLOPE)?;
            }
        }
        Ok(h)
    }
}
