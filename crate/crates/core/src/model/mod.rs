//! The inpainting network: gated linear-attention transformer blocks arranged
//! as a four-level U-net.
//!
//! ```text
//! I_m ─ 7×7 conv ─ E1 ─ ↓ ─ E2 ─ ↓ ─ E3 ─ ↓ ─ E4
//!                  │         │         │         │
//!                  D1 ←──── D2 ←───── D3 ←───────┘   (↑ + 3×3 conv, concat, 1×1 conv)
//!                  └─ 7×7 conv ─ tanh ─ I_out
//! ```
//!
//! Level `i` (1..=4) runs at `2^(i−1)·C` channels and `H/2^(i−1) × W/2^(i−1)`.
//! Stage indices 0..7 follow the block-count order: encoder levels 1–4, then
//! decoder levels 3, 2, 1.

mod block;
mod checkpoint;
mod ffn;

pub use block::TransformerBlock;
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use ffn::{FFNConfig, FeedForward};

use crate::attention::{AttentionConfig, TaylorMode};
use crate::autograd::{Graph, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::nn::Conv2dLayer;
use crate::rng::Rng;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

pub const STAGES: usize = 7;
pub const LEVELS: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    #[default]
    Layer,
    None,
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormKind::Layer => "layer",
            NormKind::None => "none",
        })
    }
}

impl FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "layer" => Ok(NormKind::Layer),
            "none" => Ok(NormKind::None),
            _ => Err(Error::Config(format!("unknown norm {s:?} (expected layer or none)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TFormerConfig {
    pub base_channels: usize,
    pub block_counts: [usize; STAGES],
    pub heads: [usize; STAGES],
    pub in_channels: usize,
    pub out_channels: usize,
    pub taylor_mode: TaylorMode,
    pub gated: bool,
    pub norm: NormKind,
    pub ffn_expansion: f64,
    pub normalize_qk: bool,
    /// Divide the attention numerator by its normalizer.
    pub divide: bool,
    pub attention_eps: f64,
    pub compose_output: bool,
}

impl Default for TFormerConfig {
    fn default() -> Self {
        TFormerConfig {
            base_channels: 8,
            block_counts: [1, 2, 3, 4, 3, 2, 1],
            heads: [1, 2, 4, 8, 4, 2, 1],
            in_channels: 3,
            out_channels: 3,
            taylor_mode: TaylorMode::Residual,
            gated: true,
            norm: NormKind::Layer,
            ffn_expansion: 2.0,
            normalize_qk: true,
            divide: true,
            attention_eps: 1e-6,
            compose_output: true,
        }
    }
}

impl TFormerConfig {
    pub fn with_channels(base_channels: usize) -> Self {
        TFormerConfig {
            base_channels,
            ..Self::default()
        }
    }

    /// One block per stage and one head everywhere; the smallest model that
    /// still exercises every boundary.
    pub fn tiny(base_channels: usize) -> Self {
        TFormerConfig {
            base_channels,
            block_counts: [1; STAGES],
            heads: [1; STAGES],
            ..Self::default()
        }
    }

    /// Channel width at level 1..=4.
    pub fn level_channels(&self, level: usize) -> usize {
        self.base_channels << (level - 1)
    }

    /// The U-net level a stage index runs at.
    pub fn stage_level(stage: usize) -> usize {
        [1, 2, 3, 4, 3, 2, 1][stage]
    }

    pub fn stage_channels(&self, stage: usize) -> usize {
        self.level_channels(Self::stage_level(stage))
    }

    pub fn attention_config(&self, stage: usize) -> AttentionConfig {
        AttentionConfig {
            channels: self.stage_channels(stage),
            heads: self.heads[stage],
            taylor_mode: self.taylor_mode,
            gated: self.gated,
            eps: self.attention_eps,
            normalize_qk: self.normalize_qk,
            divide: self.divide,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.base_channels > usize::MAX >> LEVELS {
            return Err(Error::Config(format!("base_channels {} is too large", self.base_channels)));
        }
        for stage in 0..STAGES {
            self.attention_config(stage)
                .validate()
                .map_err(|e| Error::Config(format!("stage {stage}: {e}")))?;
            FFNConfig {
                channels: self.stage_channels(stage),
                expansion: self.ffn_expansion,
            }
            .validate()?;
        }
        Ok(())
    }

    /// Spatial dims the network accepts: positive multiples of 8.
    pub fn check_spatial(h: usize, w: usize) -> Result<()> {
        if h == 0 || w == 0 || !h.is_multiple_of(8) || !w.is_multiple_of(8) {
            return Err(Error::InvalidArgument(format!(
                "spatial dims {h}×{w} must be positive multiples of 8"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct DecoderStage {
    pub level: usize,
    /// 3×3 conv after nearest upsampling, `2^level·C → 2^(level−1)·C`.
    pub up: Conv2dLayer,
    /// 1×1 conv halving the concatenated skip features.
    pub fuse: Conv2dLayer,
    pub blocks: Vec<TransformerBlock>,
}

#[derive(Clone, Debug)]
pub struct TFormerModel {
    pub config: TFormerConfig,
    pub head: Conv2dLayer,
    pub encoder: Vec<Vec<TransformerBlock>>,
    /// 3×3 stride-2 convs between encoder levels.
    pub downsample: Vec<Conv2dLayer>,
    pub decoder: Vec<DecoderStage>,
    pub tail: Conv2dLayer,
}

/// Every intermediate boundary of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace<V> {
    /// E1..E4.
    pub encoder: Vec<V>,
    /// D3, D2, D1 after their stage blocks.
    pub decoder: Vec<V>,
    /// Network output before composition.
    pub raw: V,
}

fn register_blocks(
    store: &mut ParamStore,
    rng: &mut Rng,
    config: &TFormerConfig,
    stage: usize,
    prefix: &str,
) -> Result<Vec<TransformerBlock>> {
    (0..config.block_counts[stage])
        .map(|j| {
            TransformerBlock::register(
                store,
                rng,
                &format!("{prefix}.block{j}"),
                config.attention_config(stage),
                config.ffn_expansion,
                config.norm,
            )
        })
        .collect()
}

fn run_blocks<G: Graph>(g: &mut G, blocks: &[TransformerBlock], x: G::Value) -> Result<G::Value> {
    blocks.iter().try_fold(x, |h, b| b.forward(g, &h))
}

impl TFormerModel {
    /// Registers every weight in `store` in a fixed order and draws initial
    /// values from `rng`.
    pub fn new(config: TFormerConfig, store: &mut ParamStore, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let c = config.base_channels;
        let head = Conv2dLayer::same(store, rng, "head", config.in_channels, c, 7);
        let mut encoder = Vec::with_capacity(LEVELS);
        let mut downsample = Vec::with_capacity(LEVELS - 1);
        for level in 1..=LEVELS {
            encoder.push(register_blocks(store, rng, &config, level - 1, &format!("enc{level}"))?);
            if level < LEVELS {
                let (cin, cout) = (config.level_channels(level), config.level_channels(level + 1));
                downsample.push(Conv2dLayer::register(store, rng, &format!("down{level}"), cin, cout, 3, 2, 1));
            }
        }
        let mut decoder = Vec::with_capacity(LEVELS - 1);
        for (stage, level) in (LEVELS..STAGES).zip((1..LEVELS).rev()) {
            let (wide, narrow) = (config.level_channels(level + 1), config.level_channels(level));
            let prefix = format!("dec{level}");
            let up = Conv2dLayer::same(store, rng, &format!("{prefix}.up"), wide, narrow, 3);
            let fuse = Conv2dLayer::pointwise(store, rng, &format!("{prefix}.fuse"), 2 * narrow, narrow);
            let blocks = register_blocks(store, rng, &config, stage, &prefix)?;
            decoder.push(DecoderStage { level, up, fuse, blocks });
        }
        let tail = Conv2dLayer::same(store, rng, "tail", c, config.out_channels, 7);
        Ok(TFormerModel {
            config,
            head,
            encoder,
            downsample,
            decoder,
            tail,
        })
    }

    /// Parameters in registration order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        ids.extend(self.head.param_ids());
        for (level, blocks) in self.encoder.iter().enumerate() {
            ids.extend(blocks.iter().flat_map(TransformerBlock::param_ids));
            if let Some(down) = self.downsample.get(level) {
                ids.extend(down.param_ids());
            }
        }
        for stage in &self.decoder {
            ids.extend(stage.up.param_ids());
            ids.extend(stage.fuse.param_ids());
            ids.extend(stage.blocks.iter().flat_map(TransformerBlock::param_ids));
        }
        ids.extend(self.tail.param_ids());
        ids
    }

    /// Live element count of every trainable parameter.
    pub fn num_params(&self, store: &ParamStore) -> usize {
        store.numel(&self.param_ids())
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (c, h, w) = x.chw("encoder_forward")?;
        if c != self.config.in_channels {
            return Err(Error::shape(
                "encoder_forward",
                format!("expected {} input channels, got {c}", self.config.in_channels),
            ));
        }
        TFormerConfig::check_spatial(h, w)
    }

    /// Head conv and the four encoder levels; returns E1..E4.
    pub fn encoder_forward<G: Graph>(&self, g: &mut G, image: &G::Value) -> Result<Vec<G::Value>> {
        self.check_input(g.tensor(image))?;
        let mut features = Vec::with_capacity(LEVELS);
        let mut h = self.head.forward(g, image)?;
        for (level, blocks) in self.encoder.iter().enumerate() {
            if level > 0 {
                h = self.downsample[level - 1].forward(g, &h)?;
            }
            h = run_blocks(g, blocks, h)?;
            features.push(h.clone());
        }
        Ok(features)
    }

    /// Decoder levels 3, 2, 1; returns their features and the tanh output.
    pub fn decoder_forward<G: Graph>(&self, g: &mut G, encoded: &[G::Value]) -> Result<(Vec<G::Value>, G::Value)> {
        if encoded.len() != LEVELS {
            return Err(Error::shape(
                "decoder_forward",
                format!("expected {LEVELS} encoder features, got {}", encoded.len()),
            ));
        }
        let mut h = encoded[LEVELS - 1].clone();
        let mut features = Vec::with_capacity(LEVELS - 1);
        for stage in &self.decoder {
            let up = g.upsample2x(&h)?;
            let up = stage.up.forward(g, &up)?;
            let cat = g.concat_channels(&up, &encoded[stage.level - 1])?;
            let fused = stage.fuse.forward(g, &cat)?;
            h = run_blocks(g, &stage.blocks, fused)?;
            features.push(h.clone());
        }
        let out = self.tail.forward(g, &h)?;
        let out = g.tanh(&out)?;
        Ok((features, out))
    }

    pub fn trace<G: Graph>(&self, g: &mut G, image: &G::Value) -> Result<ForwardTrace<G::Value>> {
        let encoder = self.encoder_forward(g, image)?;
        let (decoder, raw) = self.decoder_forward(g, &encoder)?;
        Ok(ForwardTrace { encoder, decoder, raw })
    }

    /// Raw network output for a masked image in `[−1, 1]`.
    pub fn forward_raw<G: Graph>(&self, g: &mut G, image: &G::Value) -> Result<G::Value> {
        let encoded = self.encoder_forward(g, image)?;
        Ok(self.decoder_forward(g, &encoded)?.1)
    }

    /// Full pass. With `compose`, valid pixels (mask = 1) are taken from the
    /// input and only missing ones from the network.
    pub fn forward<G: Graph>(&self, g: &mut G, image: &G::Value, mask: &Tensor, compose: bool) -> Result<G::Value> {
        let raw = self.forward_raw(g, image)?;
        if !compose {
            return Ok(raw);
        }
        let input = g.tensor(image).clone();
        compose_constant(g, &input, &raw, mask)
    }
}

/// Broadcasts a 1×H×W mask to `channels`×H×W.
pub fn expand_mask(mask: &Tensor, channels: usize) -> Result<Tensor> {
    let (mc, h, w) = mask.chw("expand_mask")?;
    if mc != 1 {
        return Err(Error::shape("expand_mask", format!("mask must have 1 channel, got {mc}")));
    }
    Tensor::from_vec(&[channels, h, w], mask.data().repeat(channels))
}

/// `mask ⊙ input + (1 − mask) ⊙ output`, elementwise with a 1×H×W mask.
///
/// Where the mask is 1 the result is the input value exactly.
pub fn compose(input: &Tensor, output: &Tensor, mask: &Tensor) -> Result<Tensor> {
    input.expect_same_shape(output, "compose")?;
    let (c, h, w) = input.chw("compose")?;
    if mask.dims() != [1, h, w] {
        return Err(Error::shape("compose", format!("mask {:?} vs image {:?}", mask.dims(), input.dims())));
    }
    let plane = h * w;
    let m = mask.data();
    let data = (0..c * plane)
        .map(|i| {
            let mi = m[i % plane];
            mi * input.data()[i] + (1.0 - mi) * output.data()[i]
        })
        .collect();
    Tensor::from_vec(&[c, h, w], data)
}

fn compose_constant<G: Graph>(g: &mut G, input: &Tensor, raw: &G::Value, mask: &Tensor) -> Result<G::Value> {
    let c = input.dims()[0];
    let m = expand_mask(mask, c)?;
    input.expect_same_shape(&m, "compose")?;
    let keep = g.constant(m.hadamard(input)?);
    let fill = g.constant(m.map(|v| 1.0 - v));
    let filled = g.hadamard(&fill, raw)?;
    g.add(&keep, &filled)
}
