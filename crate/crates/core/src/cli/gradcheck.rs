//! Finite-difference suites over the differentiable ops, one transformer
//! block and a small full network.

use crate::attention::{AttentionConfig, TaylorMode, TaylorOptions};
use crate::autograd::{finite_diff_check, GradCheckOptions, Graph, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::losses::{generator_adversarial_loss, perceptual_loss, style_loss, PatchDiscriminator, RandomConvExtractor};
use crate::model::{FFNConfig, FeedForward, NormKind, TFormerConfig, TFormerModel, TransformerBlock};
use crate::rng::Rng;
use crate::tensor::Tensor;
use serde::Deserialize;
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    #[default]
    Ops,
    Block,
    Model,
}

impl Scope {
    pub const ALL: [Scope; 3] = [Scope::Ops, Scope::Block, Scope::Model];
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::Ops => "ops",
            Scope::Block => "block",
            Scope::Model => "model",
        })
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ops" => Ok(Scope::Ops),
            "block" => Ok(Scope::Block),
            "model" => Ok(Scope::Model),
            _ => Err(Error::Config(format!("unknown gradcheck scope {s:?} (expected ops, block or model)"))),
        }
    }
}

pub const OPS_TOLERANCE: f64 = 1e-4;
pub const BLOCK_TOLERANCE: f64 = 1e-3;
pub const MODEL_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct UnitResult {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub coords: usize,
}

impl UnitResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// `Σ y ⊙ R` for a fixed random `R` scaled to keep the loss O(1).
fn probe<G: Graph>(g: &mut G, y: &G::Value) -> Result<G::Value> {
    let dims = g.tensor(y).dims().to_vec();
    let n = g.tensor(y).numel() as f64;
    let r = Rng::new(0x5eed).normal_tensor(&dims, 1.0 / n.sqrt());
    let r = g.constant(r);
    let prod = g.hadamard(y, &r)?;
    g.sum(&prod)
}

/// Random values kept at least 0.2 away from zero, so kinks at 0 are never
/// straddled by a probe.
fn away_from_zero(rng: &mut Rng, dims: &[usize]) -> Tensor {
    rng.normal_tensor(dims, 1.0).map(|v| v + 0.2 * if v < 0.0 { -1.0 } else { 1.0 })
}

type OpFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

struct OpCase {
    name: String,
    inputs: Vec<Tensor>,
    f: OpFn,
}

fn case(name: impl Into<String>, inputs: Vec<Tensor>, f: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static) -> OpCase {
    OpCase {
        name: name.into(),
        inputs,
        f: Box::new(f),
    }
}

fn op_cases(rng: &mut Rng) -> Vec<OpCase> {
    let mut n = |dims: &[usize]| rng.normal_tensor(dims, 1.0);
    let (a, b) = (n(&[3, 4]), n(&[3, 4]));
    let (m1, m2) = (n(&[3, 4]), n(&[4, 5]));
    let (x, w, bias) = (n(&[2, 6, 6]), n(&[3, 2, 3, 3]), n(&[3]));
    let (x4, w4, b4) = (n(&[2, 8, 8]), n(&[3, 2, 4, 4]), n(&[3]));
    let (xd, wd, bd) = (n(&[3, 5, 5]), n(&[3, 3, 3]), n(&[3]));
    let (up, c1, c2) = (n(&[2, 3, 3]), n(&[2, 3, 3]), n(&[1, 3, 3]));
    let smooth = n(&[3, 4]);
    let (ln_x, gamma, beta) = (n(&[4, 3, 3]), n(&[4]), n(&[4]));
    let (sm, l2) = (n(&[3, 5]), n(&[4, 3]));
    let (q, k, v) = (n(&[6, 4]), n(&[6, 4]), n(&[6, 4]));
    let (sw, su, sv) = (n(&[3, 2, 2, 2]), n(&[3]), n(&[8]));
    let mut r2 = Rng::new(17);
    let kinked = away_from_zero(&mut r2, &[3, 4]);

    let mut cases = vec![
        case("add", vec![a.clone(), b.clone()], |t, p| {
            let y = t.add(&p[0], &p[1])?;
            probe(t, &y)
        }),
        case("sub", vec![a.clone(), b.clone()], |t, p| {
            let y = t.sub(&p[0], &p[1])?;
            probe(t, &y)
        }),
        case("hadamard", vec![a.clone(), b.clone()], |t, p| {
            let y = t.hadamard(&p[0], &p[1])?;
            probe(t, &y)
        }),
        case("scale", vec![a.clone()], |t, p| {
            let y = t.scale(&p[0], -0.7)?;
            probe(t, &y)
        }),
        case("add_scalar", vec![a.clone()], |t, p| {
            let y = t.add_scalar(&p[0], 0.3)?;
            let y = t.hadamard(&y, &y)?;
            probe(t, &y)
        }),
        case("matmul", vec![m1, m2], |t, p| {
            let y = t.matmul(&p[0], &p[1])?;
            probe(t, &y)
        }),
        case("transpose", vec![a.clone()], |t, p| {
            let y = t.transpose(&p[0])?;
            probe(t, &y)
        }),
        case("reshape", vec![a.clone()], |t, p| {
            let y = t.reshape(&p[0], &[2, 6])?;
            probe(t, &y)
        }),
        case("conv2d", vec![x, w, bias], |t, p| {
            let y = t.conv2d(&p[0], &p[1], Some(&p[2]), 1, 1)?;
            probe(t, &y)
        }),
        case("conv2d_stride2_k4", vec![x4, w4, b4], |t, p| {
            let y = t.conv2d(&p[0], &p[1], Some(&p[2]), 2, 1)?;
            probe(t, &y)
        }),
        case("depthwise_conv2d", vec![xd, wd, bd], |t, p| {
            let y = t.depthwise_conv2d(&p[0], &p[1], Some(&p[2]), 1, 1)?;
            probe(t, &y)
        }),
        case("upsample2x", vec![up], |t, p| {
            let y = t.upsample2x(&p[0])?;
            probe(t, &y)
        }),
        case("concat_channels", vec![c1, c2], |t, p| {
            let y = t.concat_channels(&p[0], &p[1])?;
            probe(t, &y)
        }),
        case("gelu", vec![smooth.clone()], |t, p| {
            let y = t.gelu(&p[0])?;
            probe(t, &y)
        }),
        case("tanh", vec![smooth.clone()], |t, p| {
            let y = t.tanh(&p[0])?;
            probe(t, &y)
        }),
        case("relu", vec![kinked.clone()], |t, p| {
            let y = t.relu(&p[0])?;
            probe(t, &y)
        }),
        case("leaky_relu", vec![kinked.clone()], |t, p| {
            let y = t.leaky_relu(&p[0], 0.2)?;
            probe(t, &y)
        }),
        case("abs", vec![kinked], |t, p| {
            let y = t.abs(&p[0])?;
            probe(t, &y)
        }),
        case("log_sigmoid", vec![smooth.scale(3.0)], |t, p| {
            let y = t.log_sigmoid_clamped(&p[0], 1e-12)?;
            probe(t, &y)
        }),
        case("layer_norm_channels", vec![ln_x, gamma, beta], |t, p| {
            let y = t.layer_norm_channels(&p[0], &p[1], &p[2], 1e-5)?;
            probe(t, &y)
        }),
        case("softmax_rows", vec![sm], |t, p| {
            let y = t.softmax_rows(&p[0])?;
            probe(t, &y)
        }),
        case("l2_normalize_rows", vec![l2], |t, p| {
            let y = t.l2_normalize_rows(&p[0], 1e-12)?;
            probe(t, &y)
        }),
        case("spectral_scale", vec![sw], move |t, p| {
            let y = t.spectral_scale(&p[0], &su, &sv, 1e-12)?;
            probe(t, &y)
        }),
        case("sum", vec![a.clone()], |t, p| {
            let y = t.hadamard(&p[0], &p[0])?;
            t.sum(&y)
        }),
        case("mean", vec![a], |t, p| {
            let y = t.hadamard(&p[0], &p[0])?;
            t.mean(&y)
        }),
    ];
    for mode in TaylorMode::ALL {
        for (divide, normalize_qk, heads) in [(true, true, 1), (true, true, 2), (false, true, 1), (true, false, 2)] {
            let opts = TaylorOptions {
                mode,
                divide,
                normalize_qk,
                ..TaylorOptions::default()
            };
            let name = format!(
                "taylor_attention[{mode},heads={heads}{}{}]",
                if divide { "" } else { ",undivided" },
                if normalize_qk { "" } else { ",raw_qk" }
            );
            // unnormalized keys keep the normalizer well away from zero
            let scale = if normalize_qk { 1.0 } else { 0.2 };
            cases.push(case(name, vec![q.scale(scale), k.scale(scale), v.clone()], move |t, p| {
                let y = t.taylor_attention(&p[0], &p[1], &p[2], heads, opts)?;
                probe(t, &y)
            }));
        }
    }
    cases
}

fn check_case(case: OpCase, opts: GradCheckOptions) -> Result<UnitResult> {
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = case
        .inputs
        .into_iter()
        .enumerate()
        .map(|(i, t)| store.add(format!("in{i}"), t))
        .collect();
    let f = case.f;
    let report = finite_diff_check(&mut store, &ids, opts, |t| {
        let vars: Vec<Var> = ids.iter().map(|&id| t.param(id)).collect();
        f(t, &vars)
    })?;
    Ok(UnitResult {
        name: case.name,
        max_rel_error: report.max_rel_error,
        tolerance: OPS_TOLERANCE,
        coords: report.coords_checked,
    })
}

/// Loss-level units: generator adversarial term, perceptual and style losses
/// with respect to the image.
fn loss_units(seed: u64, opts: GradCheckOptions) -> Result<Vec<UnitResult>> {
    let mut rng = Rng::new(seed ^ 0x1055);
    let mut store = ParamStore::new();
    let image = store.add("image", rng.normal_tensor(&[3, 16, 16], 0.5));
    let target = rng.normal_tensor(&[3, 16, 16], 0.5);
    let mut d = PatchDiscriminator::new(&mut store, &mut rng, 3, 4, 1)?;
    d.refresh(&store)?;
    let fx = RandomConvExtractor::new(3, &[4, 6], seed);
    let mut out = Vec::new();
    let mut push = |name: &str, report: crate::autograd::GradCheckReport| {
        out.push(UnitResult {
            name: name.into(),
            max_rel_error: report.max_rel_error,
            tolerance: OPS_TOLERANCE,
            coords: report.coords_checked,
        })
    };
    let r = finite_diff_check(&mut store, &[image], opts, |t| {
        let x = t.param(image);
        generator_adversarial_loss(t, &d, &x)
    })?;
    push("adversarial_generator", r);
    let r = finite_diff_check(&mut store, &[image], opts, |t| {
        let x = t.param(image);
        let y = t.constant(target.clone());
        perceptual_loss(t, &x, &y, &fx)
    })?;
    push("perceptual_loss", r);
    let r = finite_diff_check(&mut store, &[image], opts, |t| {
        let x = t.param(image);
        let y = t.constant(target.clone());
        style_loss(t, &x, &y, &fx)
    })?;
    push("style_loss", r);
    Ok(out)
}

fn block_units(seed: u64, opts: GradCheckOptions) -> Result<Vec<UnitResult>> {
    let mut rng = Rng::new(seed);
    let x = rng.normal_tensor(&[4, 8, 8], 1.0);
    let mut out = Vec::new();

    let mut store = ParamStore::new();
    let input = store.add("x", x.clone());
    let ffn = FeedForward::register(&mut store, &mut rng, "ffn", FFNConfig { channels: 4, expansion: 2.0 })?;
    let mut ids = vec![input];
    ids.extend(ffn.param_ids());
    let r = finite_diff_check(&mut store, &ids, opts, |t| {
        let x = t.param(input);
        let y = ffn.forward(t, &x)?;
        probe(t, &y)
    })?;
    out.push(UnitResult {
        name: "ffn 4x8x8".into(),
        max_rel_error: r.max_rel_error,
        tolerance: OPS_TOLERANCE,
        coords: r.coords_checked,
    });

    for (label, mode, gated, norm) in [
        ("block 4x8x8", TaylorMode::Residual, true, NormKind::Layer),
        ("block 4x8x8 sum", TaylorMode::Sum, true, NormKind::Layer),
        ("block 4x8x8 none ungated no-norm", TaylorMode::None, false, NormKind::None),
    ] {
        let mut store = ParamStore::new();
        let input = store.add("x", x.clone());
        let attn = AttentionConfig {
            taylor_mode: mode,
            gated,
            ..AttentionConfig::new(4, 2)
        };
        let block = TransformerBlock::register(&mut store, &mut rng, "block", attn, 2.0, norm)?;
        let mut ids = vec![input];
        ids.extend(block.param_ids());
        let r = finite_diff_check(&mut store, &ids, opts, |t| {
            let x = t.param(input);
            let y = block.forward(t, &x)?;
            probe(t, &y)
        })?;
        out.push(UnitResult {
            name: label.into(),
            max_rel_error: r.max_rel_error,
            tolerance: BLOCK_TOLERANCE,
            coords: r.coords_checked,
        });
    }
    Ok(out)
}

fn model_units(seed: u64, opts: GradCheckOptions) -> Result<Vec<UnitResult>> {
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::new();
    let model = TFormerModel::new(TFormerConfig::tiny(4), &mut store, &mut rng)?;
    let image = rng.uniform_tensor(&[3, 16, 16], -1.0, 1.0);
    let ids = model.param_ids();
    let opts = GradCheckOptions {
        coords_per_param: opts.coords_per_param.or(Some(3)),
        ..opts
    };
    let r = finite_diff_check(&mut store, &ids, opts, |t| {
        let x = t.constant(image.clone());
        let y = model.forward_raw(t, &x)?;
        probe(t, &y)
    })?;
    Ok(vec![UnitResult {
        name: "tformer 3x16x16, one block per stage".into(),
        max_rel_error: r.max_rel_error,
        tolerance: MODEL_TOLERANCE,
        coords: r.coords_checked,
    }])
}

/// Runs every unit of `scope`; `tolerance` overrides the per-unit default.
pub fn run_scope(scope: Scope, seed: u64, tolerance: Option<f64>) -> Result<Vec<UnitResult>> {
    let opts = GradCheckOptions {
        seed,
        ..GradCheckOptions::default()
    };
    let mut results = match scope {
        Scope::Ops => {
            let mut rng = Rng::new(seed);
            let mut out = op_cases(&mut rng)
                .into_iter()
                .map(|c| check_case(c, opts))
                .collect::<Result<Vec<_>>>()?;
            out.extend(loss_units(seed, opts)?);
            out
        }
        Scope::Block => block_units(seed, opts)?,
        Scope::Model => model_units(seed, opts)?,
    };
    if let Some(tol) = tolerance {
        results.iter_mut().for_each(|r| r.tolerance = tol);
    }
    Ok(results)
}
