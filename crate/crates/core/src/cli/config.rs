//! Run configuration file.
//!
//! TOML with one table per command; every table and key is optional and
//! unknown keys are rejected.
//!
//! ```toml
//! seed = 0
//!
//! [model]                 # network shape
//! base_channels = 8
//! block_counts = [1, 2, 3, 4, 3, 2, 1]
//! heads = [1, 2, 4, 8, 4, 2, 1]
//! taylor_mode = "residual"  # sum | residual | none
//! gated = true
//! norm = "layer"            # layer | none
//! ffn_expansion = 2.0
//!
//! [loss]                  # weights of the generator objective
//! reconstruction = 1.0
//! perceptual = 1.0
//! style = 250.0
//! adversarial = 0.1
//!
//! [train]
//! iters = 500
//! lr = 1e-4
//! disc_channels = 64
//! extractor_widths = [64, 128, 256]
//! loss_on_composited = false  # true: losses see the mask-composited output
//! image = "photo.ppm"       # synthetic image when absent
//! mask = "mask.pgm"         # synthetic mask when absent
//! csv = "log.csv"
//! checkpoint = "model.ckpt"
//!
//! [bench]
//! sides = [32, 64, 128, 256]
//! channels = 32
//! modes = ["linear", "quadratic"]
//! repeats = 3
//!
//! [count]
//! height = 256
//! width = 256
//! sweep = [32, 40, 48, 64]
//!
//! [inpaint]
//! checkpoint = "model.ckpt"
//! image = "photo.ppm"
//! mask = "mask.pgm"
//! output = "filled.ppm"
//!
//! [gradcheck]
//! scope = "ops"             # ops | block | model
//! ```
//!
//! The full set of `[model]` keys is that of [`TFormerConfig`]; see also
//! [`LossWeights`], [`TrainConfig`], [`BenchConfig`], [`CountConfig`],
//! [`InpaintConfig`] and [`GradcheckConfig`].

use super::bench::BenchMode;
use super::gradcheck::Scope;
use crate::error::{Error, Result};
use crate::losses::{LossWeights, PatchDiscriminator, RandomConvExtractor};
use crate::model::TFormerConfig;
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: TFormerConfig,
    pub loss: LossWeights,
    pub train: TrainConfig,
    pub bench: BenchConfig,
    pub count: CountConfig,
    pub inpaint: InpaintConfig,
    pub gradcheck: GradcheckConfig,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iters: usize,
    pub lr: f64,
    /// Discriminator learning rate; defaults to `lr`.
    pub disc_lr: Option<f64>,
    pub weight_decay: f64,
    /// Width of the first discriminator conv.
    pub disc_channels: usize,
    pub power_iters: usize,
    pub extractor_seed: u64,
    /// Channel widths of the random feature extractor's stages.
    pub extractor_widths: Vec<usize>,
    /// Feed the mask-composited output to the losses instead of the raw one.
    pub loss_on_composited: bool,
    pub image: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    /// Side of the synthetic image used when `image` is absent.
    pub synthetic_size: usize,
    /// Missing fraction of the synthetic mask used when `mask` is absent.
    pub mask_ratio: f64,
    pub csv: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iters: 500,
            lr: 1e-4,
            disc_lr: None,
            weight_decay: 0.01,
            disc_channels: PatchDiscriminator::DEFAULT_BASE,
            power_iters: 1,
            extractor_seed: 7,
            extractor_widths: RandomConvExtractor::DEFAULT_WIDTHS.to_vec(),
            loss_on_composited: false,
            image: None,
            mask: None,
            synthetic_size: 64,
            mask_ratio: 0.3,
            csv: None,
            checkpoint: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Square side lengths; N = side².
    pub sides: Vec<usize>,
    pub channels: usize,
    pub modes: Vec<BenchMode>,
    pub repeats: usize,
    pub csv: Option<PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            sides: vec![32, 64, 128, 256],
            channels: 32,
            modes: vec![BenchMode::Linear, BenchMode::Quadratic],
            repeats: 3,
            csv: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CountConfig {
    pub height: usize,
    pub width: usize,
    /// Base widths tried by the calibration against the reference size.
    pub sweep: Vec<usize>,
    pub csv: Option<PathBuf>,
}

impl Default for CountConfig {
    fn default() -> Self {
        CountConfig {
            height: 256,
            width: 256,
            sweep: vec![32, 40, 48, 64],
            csv: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InpaintConfig {
    pub checkpoint: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub output: Option<PathBuf>,
    /// Reference image; when given, PSNR/SSIM are reported.
    pub ground_truth: Option<PathBuf>,
    /// Report metrics on the raw network output instead of the composite.
    pub raw_metrics: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub scope: Scope,
    /// Largest tolerated relative error; defaults per scope.
    pub tolerance: Option<f64>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        let t = &self.train;
        let rate_ok = |lr: f64| lr.is_finite() && lr >= 0.0;
        if !rate_ok(t.lr) || !t.disc_lr.is_none_or(rate_ok) || !rate_ok(t.weight_decay) {
            return Err(Error::Config("learning rates and weight decay must be finite and non-negative".into()));
        }
        if t.disc_channels == 0 || t.power_iters == 0 {
            return Err(Error::Config("disc_channels and power_iters must be positive".into()));
        }
        if t.extractor_widths.is_empty() || t.extractor_widths.contains(&0) {
            return Err(Error::Config("extractor_widths must hold positive widths".into()));
        }
        if !(0.0..1.0).contains(&t.mask_ratio) {
            return Err(Error::Config(format!("mask_ratio {} must lie in [0, 1)", t.mask_ratio)));
        }
        TFormerConfig::check_spatial(t.synthetic_size, t.synthetic_size)
            .map_err(|e| Error::Config(format!("synthetic_size: {e}")))?;
        let b = &self.bench;
        if b.sides.is_empty() || b.sides.contains(&0) || b.channels == 0 || b.repeats == 0 || b.modes.is_empty() {
            return Err(Error::Config("bench needs non-empty positive sides, modes, channels and repeats".into()));
        }
        if self.count.sweep.is_empty() || self.count.sweep.contains(&0) {
            return Err(Error::Config("count sweep must hold positive widths".into()));
        }
        if let Some(tol) = self.gradcheck.tolerance {
            if !(tol > 0.0) {
                return Err(Error::Config(format!("gradcheck tolerance {tol} must be positive")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn partial_tables() {
        let c = RunConfig::parse("seed = 9\n[model]\ntaylor_mode = \"sum\"\n[train]\nlr = 0.002\n").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.model.taylor_mode, crate::attention::TaylorMode::Sum);
        assert_eq!(c.model.base_channels, TFormerConfig::default().base_channels);
        assert_eq!(c.train.lr, 0.002);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::parse("sede = 1").is_err());
        assert!(RunConfig::parse("[model]\nchannels = 4").is_err());
        assert!(RunConfig::parse("[model]\ntaylor_mode = \"linear\"").is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut c = RunConfig::default();
        c.train.lr = -1.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.model.heads[3] = 3;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.bench.sides.clear();
        assert!(c.validate().is_err());
    }
}
