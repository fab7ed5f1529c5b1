//! Reconstruction, perceptual, style and adversarial losses.

mod discriminator;
mod extractor;
mod spectral;

pub use discriminator::{PatchDiscriminator, LEAKY_SLOPE};
pub use extractor::{ConvStage, FeatureExtractor, IdentityExtractor, RandomConvExtractor};
pub use spectral::{spectral_normalize, SpectralNormState, SPECTRAL_EPS};

use crate::autograd::Graph;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Floor applied inside every log of the adversarial terms.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub reconstruction: f64,
    pub perceptual: f64,
    pub style: f64,
    pub adversarial: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            reconstruction: 1.0,
            perceptual: 1.0,
            style: 250.0,
            adversarial: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.reconstruction, self.perceptual, self.style, self.adversarial];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative: {all:?}")));
        }
        Ok(())
    }
}

/// Mean absolute difference over all elements.
pub fn l1_reconstruction<G: Graph>(g: &mut G, out: &G::Value, target: &G::Value) -> Result<G::Value> {
    g.l1_mean(out, target)
}

/// `Σᵢ mean|φᵢ(out) − φᵢ(target)|`.
pub fn perceptual_loss<G: Graph, F: FeatureExtractor>(
    g: &mut G,
    out: &G::Value,
    target: &G::Value,
    fx: &F,
) -> Result<G::Value> {
    let a = fx.features(g, out)?;
    let b = fx.features(g, target)?;
    sum_over_stages(g, &a, &b, |g, x, y| g.l1_mean(x, y))
}

/// `G[a,b] = Σ_{h,w} F[a,h,w]·F[b,h,w] / (C·H·W)`.
pub fn gram_matrix<G: Graph>(g: &mut G, features: &G::Value) -> Result<G::Value> {
    let (c, h, w) = g.tensor(features).chw("gram_matrix")?;
    let flat = g.reshape(features, &[c, h * w])?;
    let ft = g.transpose(&flat)?;
    let gram = g.matmul(&flat, &ft)?;
    g.scale(&gram, 1.0 / (c * h * w) as f64)
}

/// Mean over stages of `Σ|Gram(φⱼ(out)) − Gram(φⱼ(target))|`.
pub fn style_loss<G: Graph, F: FeatureExtractor>(g: &mut G, out: &G::Value, target: &G::Value, fx: &F) -> Result<G::Value> {
    let a = fx.features(g, out)?;
    let b = fx.features(g, target)?;
    let total = sum_over_stages(g, &a, &b, |g, x, y| {
        let gx = gram_matrix(g, x)?;
        let gy = gram_matrix(g, y)?;
        g.l1_sum(&gx, &gy)
    })?;
    g.scale(&total, 1.0 / a.len() as f64)
}

fn sum_over_stages<G: Graph>(
    g: &mut G,
    a: &[G::Value],
    b: &[G::Value],
    mut term: impl FnMut(&mut G, &G::Value, &G::Value) -> Result<G::Value>,
) -> Result<G::Value> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "extractor produced {} and {} stages",
            a.len(),
            b.len()
        )));
    }
    let mut total = term(g, &a[0], &b[0])?;
    for (x, y) in a.iter().zip(b).skip(1) {
        let t = term(g, x, y)?;
        total = g.add(&total, &t)?;
    }
    Ok(total)
}

/// `−[mean log σ(D(real)) + mean log σ(−D(fake))]` with `fake` detached.
pub fn discriminator_loss<G: Graph>(
    g: &mut G,
    d: &PatchDiscriminator,
    real: &G::Value,
    fake: &G::Value,
) -> Result<G::Value> {
    let fake = g.detach(fake);
    let sr = d.forward(g, real, true)?;
    let sf = d.forward(g, &fake, true)?;
    let lr = g.log_sigmoid_clamped(&sr, LOG_FLOOR)?;
    let lr = g.mean(&lr)?;
    let neg = g.scale(&sf, -1.0)?;
    let lf = g.log_sigmoid_clamped(&neg, LOG_FLOOR)?;
    let lf = g.mean(&lf)?;
    let sum = g.add(&lr, &lf)?;
    g.scale(&sum, -1.0)
}

/// Non-saturating generator term `−mean log σ(D(fake))`; discriminator
/// weights are held constant.
pub fn generator_adversarial_loss<G: Graph>(g: &mut G, d: &PatchDiscriminator, fake: &G::Value) -> Result<G::Value> {
    let s = d.forward(g, fake, false)?;
    let l = g.log_sigmoid_clamped(&s, LOG_FLOOR)?;
    let l = g.mean(&l)?;
    g.scale(&l, -1.0)
}

/// `(loss_D, loss_G)` on one graph.
pub fn adversarial_losses<G: Graph>(
    g: &mut G,
    d: &PatchDiscriminator,
    real: &G::Value,
    fake: &G::Value,
) -> Result<(G::Value, G::Value)> {
    let loss_d = discriminator_loss(g, d, real, fake)?;
    let loss_g = generator_adversarial_loss(g, d, fake)?;
    Ok((loss_d, loss_g))
}

/// Unweighted components and the weighted total of the generator objective.
#[derive(Clone, Debug)]
pub struct LossTerms<V> {
    pub reconstruction: V,
    pub perceptual: V,
    pub style: V,
    pub adversarial: V,
    pub total: V,
}

/// `λ_r·L_re + λ_p·L_perc + λ_s·L_style + λ_a·L_adv`.
pub fn total_loss<G: Graph, F: FeatureExtractor>(
    g: &mut G,
    out: &G::Value,
    target: &G::Value,
    fx: &F,
    d: &PatchDiscriminator,
    weights: &LossWeights,
) -> Result<LossTerms<G::Value>> {
    weights.validate()?;
    let reconstruction = l1_reconstruction(g, out, target)?;
    let perceptual = perceptual_loss(g, out, target, fx)?;
    let style = style_loss(g, out, target, fx)?;
    let adversarial = generator_adversarial_loss(g, d, out)?;
    let parts = [
        (&reconstruction, weights.reconstruction),
        (&perceptual, weights.perceptual),
        (&style, weights.style),
        (&adversarial, weights.adversarial),
    ];
    let mut total = g.scale(parts[0].0, parts[0].1)?;
    for (term, w) in &parts[1..] {
        let t = g.scale(term, *w)?;
        total = g.add(&total, &t)?;
    }
    Ok(LossTerms {
        reconstruction,
        perceptual,
        style,
        adversarial,
        total,
    })
}
