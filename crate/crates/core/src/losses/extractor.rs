use crate::autograd::Graph;
use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Maps an image to an ordered list of feature maps.
///
/// Extractor weights are fixed: they enter a graph as constants, so gradients
/// reach the image but never the extractor.
pub trait FeatureExtractor {
    fn features<G: Graph>(&self, g: &mut G, image: &G::Value) -> Result<Vec<G::Value>>;
}

/// Returns the image itself as the only stage.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn features<G: Graph>(&self, _g: &mut G, image: &G::Value) -> Result<Vec<G::Value>> {
        Ok(vec![image.clone()])
    }
}

#[derive(Clone, Debug)]
pub struct ConvStage {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
}

/// Stack of 3×3 conv + ReLU stages with seeded random weights, every stage
/// after the first halving resolution. Stands in for a pretrained network.
#[derive(Clone, Debug)]
pub struct RandomConvExtractor {
    pub stages: Vec<ConvStage>,
}

impl RandomConvExtractor {
    /// Widths of the first three blocks of the usual pretrained perceptual
    /// network; narrower stacks give Gram matrices too weak to pin down
    /// missing content.
    pub const DEFAULT_WIDTHS: [usize; 3] = [64, 128, 256];

    pub fn new(in_channels: usize, widths: &[usize], seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let mut cin = in_channels;
        let stages = widths
            .iter()
            .enumerate()
            .map(|(i, &cout)| {
                let std = (2.0 / (cin * 9) as f64).sqrt();
                let stage = ConvStage {
                    weight: rng.normal_tensor(&[cout, cin, 3, 3], std),
                    bias: Tensor::zeros(&[cout]).expect("positive width"),
                    stride: if i == 0 { 1 } else { 2 },
                };
                cin = cout;
                stage
            })
            .collect();
        RandomConvExtractor { stages }
    }

    pub fn with_seed(seed: u64) -> Self {
        Self::new(3, &Self::DEFAULT_WIDTHS, seed)
    }

    /// Same stage layout with every weight zero.
    pub fn zeroed(&self) -> Self {
        let stages = self
            .stages
            .iter()
            .map(|s| ConvStage {
                weight: s.weight.zeros_like(),
                bias: s.bias.zeros_like(),
                stride: s.stride,
            })
            .collect();
        RandomConvExtractor { stages }
    }
}

impl FeatureExtractor for RandomConvExtractor {
    fn features<G: Graph>(&self, g: &mut G, image: &G::Value) -> Result<Vec<G::Value>> {
        let mut out = Vec::with_capacity(self.stages.len());
        let mut h = image.clone();
        for stage in &self.stages {
            let w = g.constant(stage.weight.clone());
            let b = g.constant(stage.bias.clone());
            let y = g.conv2d(&h, &w, Some(&b), stage.stride, 1)?;
            h = g.relu(&y)?;
            out.push(h.clone());
        }
        Ok(out)
    }
}
