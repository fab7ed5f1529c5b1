use super::NormKind;
use crate::attention::{lag_forward, AttentionConfig, ProjectionSet};
use crate::autograd::{Graph, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::model::ffn::{FFNConfig, FeedForward};
use crate::nn::ChannelLayerNorm;
use crate::rng::Rng;

/// Pre-norm residual block: `y = x + LAG(norm(x))`, `out = y + FFN(norm(y))`.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub attention: AttentionConfig,
    pub norm1: Option<ChannelLayerNorm>,
    pub lag: ProjectionSet,
    pub norm2: Option<ChannelLayerNorm>,
    pub ffn: FeedForward,
}

impl TransformerBlock {
    pub fn register(
        store: &mut ParamStore,
        rng: &mut Rng,
        name: &str,
        attention: AttentionConfig,
        expansion: f64,
        norm: NormKind,
    ) -> Result<Self> {
        attention.validate()?;
        let c = attention.channels;
        let layer_norm = |store: &mut ParamStore, suffix: &str| match norm {
            NormKind::Layer => Some(ChannelLayerNorm::register(store, &format!("{name}.{suffix}"), c)),
            NormKind::None => None,
        };
        let norm1 = layer_norm(store, "norm1");
        let lag = ProjectionSet::register(store, rng, &format!("{name}.lag"), c, attention.gated);
        let norm2 = layer_norm(store, "norm2");
        let ffn = FeedForward::register(store, rng, &format!("{name}.ffn"), FFNConfig { channels: c, expansion })?;
        Ok(TransformerBlock {
            attention,
            norm1,
            lag,
            norm2,
            ffn,
        })
    }

    pub fn channels(&self) -> usize {
        self.attention.channels
    }

    pub fn forward<G: Graph>(&self, g: &mut G, x: &G::Value) -> Result<G::Value> {
        let c = g.tensor(x).chw("block_forward")?.0;
        if c != self.channels() {
            return Err(Error::shape(
                "block_forward",
                format!("input has {c} channels, block expects {}", self.channels()),
            ));
        }
        let n1 = match &self.norm1 {
            Some(norm) => norm.forward(g, x)?,
            None => x.clone(),
        };
        let a = lag_forward(g, &n1, &self.lag, &self.attention)?;
        let y = g.add(x, &a)?;
        let n2 = match &self.norm2 {
            Some(norm) => norm.forward(g, &y)?,
            None => y.clone(),
        };
        let f = self.ffn.forward(g, &n2)?;
        g.add(&y, &f)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        if let Some(n) = &self.norm1 {
            ids.extend(n.param_ids());
        }
        ids.extend(self.lag.param_ids());
        if let Some(n) = &self.norm2 {
            ids.extend(n.param_ids());
        }
        ids.extend(self.ffn.param_ids());
        ids
    }
}
