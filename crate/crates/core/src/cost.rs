//! Analytic parameter and multiply-accumulate counts.
//!
//! One MAC is one multiply-accumulate inside a convolution or matrix product.
//! Biases, normalization, activations and elementwise products are not
//! counted. Attention is costed per head of width `d` over `N` positions:
//! `2·N·d² + 2·N·d` for the linear form (`KᵀV`, `Q(KᵀV)` and the two
//! normalizer products) and `2·N²·d` for softmax attention.

use crate::error::{Error, Result};
use crate::model::{FFNConfig, NormKind, TFormerConfig, LEVELS};
use std::fmt::Write as _;

/// Parameter count the published model reports.
pub const REFERENCE_PARAMS: u64 = 14_800_000;
/// MAC count the published model reports at 256×256.
pub const REFERENCE_MACS: u64 = 51_300_000_000;
pub const REFERENCE_RESOLUTION: usize = 256;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    pub params: u64,
    pub macs: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CostReport {
    pub layers: Vec<LayerCost>,
}

impl CostReport {
    fn push(&mut self, name: impl Into<String>, params: u64, macs: u64) {
        self.layers.push(LayerCost {
            name: name.into(),
            params,
            macs,
        });
    }

    pub fn total_params(&self) -> u64 {
        self.layers.iter().map(|l| l.params).sum()
    }

    pub fn total_macs(&self) -> u64 {
        self.layers.iter().map(|l| l.macs).sum()
    }

    /// `layer,name,params,macs` with a header row and a trailing `total` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,name,params,macs\n");
        for (i, l) in self.layers.iter().enumerate() {
            writeln!(s, "{i},{},{},{}", l.name, l.params, l.macs).expect("writing to a String");
        }
        writeln!(s, "{},total,{},{}", self.layers.len(), self.total_params(), self.total_macs())
            .expect("writing to a String");
        s
    }

    pub fn to_table(&self) -> String {
        let width = self.layers.iter().map(|l| l.name.len()).max().unwrap_or(0).max(5);
        let mut s = format!("{:<width$}  {:>12}  {:>16}\n", "layer", "params", "macs");
        for l in &self.layers {
            writeln!(s, "{:<width$}  {:>12}  {:>16}", l.name, l.params, l.macs).expect("writing to a String");
        }
        writeln!(s, "{:<width$}  {:>12}  {:>16}", "total", self.total_params(), self.total_macs())
            .expect("writing to a String");
        s
    }
}

pub fn conv_params(cin: usize, cout: usize, k: usize) -> u64 {
    (cin * cout * k * k + cout) as u64
}

/// MACs of a k×k conv producing an `oh × ow` map.
pub fn conv_macs(cin: usize, cout: usize, k: usize, oh: usize, ow: usize) -> u64 {
    (cin * cout * k * k) as u64 * (oh * ow) as u64
}

pub fn depthwise_params(c: usize, k: usize) -> u64 {
    (c * k * k + c) as u64
}

pub fn depthwise_macs(c: usize, k: usize, oh: usize, ow: usize) -> u64 {
    (c * k * k) as u64 * (oh * ow) as u64
}

/// Linear attention MACs, projections excluded.
pub fn taylor_attention_macs(n: usize, head_dim: usize, heads: usize) -> u64 {
    let (n, d) = (n as u64, head_dim as u64);
    heads as u64 * (2 * n * d * d + 2 * n * d)
}

/// Softmax attention MACs (`QKᵀ` and `AV`), projections excluded.
pub fn quadratic_attention_macs(n: usize, head_dim: usize, heads: usize) -> u64 {
    let (n, d) = (n as u64, head_dim as u64);
    heads as u64 * 2 * n * n * d
}

fn block_costs(report: &mut CostReport, config: &TFormerConfig, stage: usize, name: &str, h: usize, w: usize) {
    let c = config.stage_channels(stage);
    let heads = config.heads[stage];
    let n = h * w;
    let norm = match config.norm {
        NormKind::Layer => 2 * c as u64,
        NormKind::None => 0,
    };
    let hid = FFNConfig {
        channels: c,
        expansion: config.ffn_expansion,
    }
    .hidden();
    for j in 0..config.block_counts[stage] {
        let prefix = format!("{name}.block{j}");
        if norm > 0 {
            report.push(format!("{prefix}.norm1"), norm, 0);
        }
        let projections = if config.gated { 5 } else { 4 };
        report.push(
            format!("{prefix}.lag.proj"),
            projections * conv_params(c, c, 1),
            projections * conv_macs(c, c, 1, h, w),
        );
        report.push(format!("{prefix}.lag.attn"), 0, taylor_attention_macs(n, c / heads, heads));
        if norm > 0 {
            report.push(format!("{prefix}.norm2"), norm, 0);
        }
        report.push(
            format!("{prefix}.ffn.expand"),
            2 * conv_params(c, hid, 1),
            2 * conv_macs(c, hid, 1, h, w),
        );
        report.push(
            format!("{prefix}.ffn.dw"),
            2 * depthwise_params(hid, 3),
            2 * depthwise_macs(hid, 3, h, w),
        );
        report.push(format!("{prefix}.ffn.project"), conv_params(hid, c, 1), conv_macs(hid, c, 1, h, w));
    }
}

/// Per-layer costs of the generator at input size `h × w`.
pub fn cost_report(config: &TFormerConfig, h: usize, w: usize) -> Result<CostReport> {
    config.validate()?;
    TFormerConfig::check_spatial(h, w)?;
    let c = config.base_channels;
    let mut r = CostReport::default();
    r.push("head", conv_params(config.in_channels, c, 7), conv_macs(config.in_channels, c, 7, h, w));
    for level in 1..=LEVELS {
        let (lh, lw) = (h >> (level - 1), w >> (level - 1));
        block_costs(&mut r, config, level - 1, &format!("enc{level}"), lh, lw);
        if level < LEVELS {
            let (cin, cout) = (config.level_channels(level), config.level_channels(level + 1));
            r.push(format!("down{level}"), conv_params(cin, cout, 3), conv_macs(cin, cout, 3, lh / 2, lw / 2));
        }
    }
    for (stage, level) in (LEVELS..7).zip((1..LEVELS).rev()) {
        let (lh, lw) = (h >> (level - 1), w >> (level - 1));
        let (wide, narrow) = (config.level_channels(level + 1), config.level_channels(level));
        r.push(format!("dec{level}.up"), conv_params(wide, narrow, 3), conv_macs(wide, narrow, 3, lh, lw));
        r.push(
            format!("dec{level}.fuse"),
            conv_params(2 * narrow, narrow, 1),
            conv_macs(2 * narrow, narrow, 1, lh, lw),
        );
        block_costs(&mut r, config, stage, &format!("dec{level}"), lh, lw);
    }
    r.push("tail", conv_params(c, config.out_channels, 7), conv_macs(c, config.out_channels, 7, h, w));
    Ok(r)
}

/// Analytic trainable-parameter count of the generator.
pub fn count_params(config: &TFormerConfig) -> Result<u64> {
    Ok(cost_report(config, 8, 8)?.total_params())
}

pub fn count_macs(config: &TFormerConfig, h: usize, w: usize) -> Result<u64> {
    Ok(cost_report(config, h, w)?.total_macs())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub channels: usize,
    pub params: u64,
    pub macs: u64,
    /// `(params − target) / target`.
    pub param_gap: f64,
    /// `(macs − REFERENCE_MACS) / REFERENCE_MACS` at 256×256.
    pub mac_gap: f64,
}

/// Picks the base width from `sweep` whose parameter count is closest to
/// `target`, with every other setting taken from `template`.
pub fn calibrate_channels(template: &TFormerConfig, target: u64, sweep: &[usize]) -> Result<(Calibration, Vec<Calibration>)> {
    if sweep.is_empty() {
        return Err(Error::InvalidArgument("calibration sweep is empty".into()));
    }
    let mut rows = Vec::with_capacity(sweep.len());
    for &channels in sweep {
        let config = TFormerConfig {
            base_channels: channels,
            ..template.clone()
        };
        let report = cost_report(&config, REFERENCE_RESOLUTION, REFERENCE_RESOLUTION)?;
        let (params, macs) = (report.total_params(), report.total_macs());
        rows.push(Calibration {
            channels,
            params,
            macs,
            param_gap: (params as f64 - target as f64) / target as f64,
            mac_gap: (macs as f64 - REFERENCE_MACS as f64) / REFERENCE_MACS as f64,
        });
    }
    let best = rows
        .iter()
        .min_by_key(|r| r.params.abs_diff(target))
        .cloned()
        .expect("sweep is non-empty");
    Ok((best, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_examples() {
        assert_eq!(conv_params(2, 3, 1), 9);
        assert_eq!(conv_params(3, 32, 7), 4736);
        assert_eq!(conv_macs(2, 3, 1, 4, 4), 96);
        assert_eq!(taylor_attention_macs(16, 4, 1), 640);
    }

    #[test]
    fn quadratic_dominates_at_scale() {
        assert!(quadratic_attention_macs(4096, 64, 1) > 10 * taylor_attention_macs(4096, 64, 1));
    }

    #[test]
    fn totals_are_sums() {
        let r = cost_report(&TFormerConfig::tiny(4), 16, 16).unwrap();
        assert_eq!(r.total_params(), r.layers.iter().map(|l| l.params).sum::<u64>());
        let csv = r.to_csv();
        assert!(csv.starts_with("layer,name,params,macs\n"));
        assert_eq!(csv.lines().count(), r.layers.len() + 2);
    }

    #[test]
    fn params_grow_with_width() {
        let counts: Vec<u64> = [8, 16, 24, 32]
            .iter()
            .map(|&c| count_params(&TFormerConfig::with_channels(c)).unwrap())
            .collect();
        assert!(counts.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn single_width_sweep() {
        let template = TFormerConfig::default();
        let (best, rows) = calibrate_channels(&template, REFERENCE_PARAMS, &[8]).unwrap();
        assert_eq!(best.channels, 8);
        assert_eq!(best.params, count_params(&TFormerConfig::with_channels(8)).unwrap());
        assert_eq!(rows.len(), 1);
        assert!(calibrate_channels(&template, REFERENCE_PARAMS, &[]).is_err());
    }
}
