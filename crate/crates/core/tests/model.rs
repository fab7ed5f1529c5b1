use proptest::prelude::*;
use tformer::attention::TaylorMode;
use tformer::autograd::{Eager, ParamStore};
use tformer::cost::{cost_report, count_params};
use tformer::model::{NormKind, TFormerConfig, TFormerModel};
use tformer::rng::Rng;
use tformer::tensor::Tensor;

fn build(config: TFormerConfig, seed: u64) -> (TFormerModel, ParamStore) {
    let mut store = ParamStore::new();
    let model = TFormerModel::new(config, &mut store, &mut Rng::new(seed)).unwrap();
    (model, store)
}

fn mode_strategy() -> impl Strategy<Value = TaylorMode> {
    prop_oneof![Just(TaylorMode::Residual), Just(TaylorMode::Sum), Just(TaylorMode::None)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn shapes_follow_the_level_law(
        c in 1usize..4,
        hs in 1usize..4,
        ws in 1usize..4,
        mode in mode_strategy(),
        gated in any::<bool>(),
        norm in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let mut config = TFormerConfig::tiny(2 * c);
        config.taylor_mode = mode;
        config.gated = gated;
        config.norm = if norm { NormKind::Layer } else { NormKind::None };
        let (model, store) = build(config, seed);
        let (h, w) = (8 * hs, 8 * ws);
        let x = Rng::new(seed ^ 1).uniform_tensor(&[3, h, w], -1.0, 1.0);
        let mut g = Eager::new(&store);
        let t = model.trace(&mut g, &x).unwrap();
        for (l, e) in t.encoder.iter().enumerate() {
            prop_assert_eq!(e.dims(), &[(2 * c) << l, h >> l, w >> l]);
        }
        for (i, d) in t.decoder.iter().enumerate() {
            let l = 2 - i;
            prop_assert_eq!(d.dims(), &[(2 * c) << l, h >> l, w >> l]);
        }
        prop_assert_eq!(t.raw.dims(), &[3, h, w]);
        prop_assert!(t.raw.all_finite() && t.raw.max_abs() <= 1.0);
    }
}

#[test]
fn deepest_features_at_reference_scale() {
    // C = 32 at 256×256: E4 is 8C × H/8 × W/8
    let config = TFormerConfig::tiny(32);
    let (model, store) = build(config, 0);
    let x = Rng::new(1).uniform_tensor(&[3, 256, 256], -1.0, 1.0);
    let mut g = Eager::new(&store);
    let e = model.encoder_forward(&mut g, &x).unwrap();
    assert_eq!(e[3].dims(), &[256, 32, 32]);
}

#[test]
fn zero_weights_give_zero_output() {
    let (model, mut store) = build(TFormerConfig::tiny(4), 5);
    for id in model.param_ids() {
        let p = store.get_mut(id);
        if !p.name.ends_with(".gamma") {
            p.value = p.value.zeros_like();
        }
    }
    let x = Rng::new(6).uniform_tensor(&[3, 16, 16], -1.0, 1.0);
    let mut g = Eager::new(&store);
    let out = model.forward_raw(&mut g, &x).unwrap();
    assert_eq!(out.max_abs(), 0.0);
}

#[test]
fn census_matches_cost_model() {
    let mut configs = vec![
        TFormerConfig::tiny(4),
        TFormerConfig::with_channels(8),
        TFormerConfig::with_channels(16),
    ];
    let mut c = TFormerConfig::tiny(6);
    c.gated = false;
    configs.push(c);
    let mut c = TFormerConfig::with_channels(4);
    c.norm = NormKind::None;
    c.ffn_expansion = 2.66;
    configs.push(c);
    let mut c = TFormerConfig::tiny(8);
    c.block_counts = [2, 0, 1, 0, 3, 0, 1];
    c.heads = [2, 4, 8, 8, 4, 2, 1];
    configs.push(c);
    for config in configs {
        let (model, store) = build(config.clone(), 0);
        let live = model.num_params(&store) as u64;
        assert_eq!(count_params(&config).unwrap(), live, "{config:?}");
        assert_eq!(cost_report(&config, 32, 32).unwrap().total_params(), live);
    }
}

#[test]
fn hand_computed_toy_cost() {
    let mut config = TFormerConfig::tiny(2);
    config.block_counts = [1, 0, 0, 0, 0, 0, 0];
    config.heads = [1; 7];
    config.ffn_expansion = 1.0;
    let report = cost_report(&config, 8, 8).unwrap();
    // head 7×7 conv 3→2 over 64 pixels: 3·2·49 + 2 params, 3·2·49·64 MACs
    let head = &report.layers[0];
    assert_eq!((head.params, head.macs), (296, 18_816));
    // tail mirrors it, 2→3
    let tail = report.layers.last().unwrap();
    assert_eq!((tail.params, tail.macs), (297, 18_816));
    assert_eq!(report.total_params(), 3_937);
    assert_eq!(report.total_macs(), 61_568);
    let (model, store) = build(config, 0);
    assert_eq!(model.num_params(&store), 3_937);
}

#[test]
fn same_seed_same_output() {
    let x = Rng::new(9).uniform_tensor(&[3, 16, 16], -1.0, 1.0);
    let run = |seed| {
        let (model, store) = build(TFormerConfig::tiny(4), seed);
        let mut g = Eager::new(&store);
        model.forward_raw(&mut g, &x).unwrap()
    };
    assert_eq!(run(3), run(3));
    assert_ne!(run(3), run(4));
}

#[test]
fn ablation_toggles_are_live() {
    let x = Rng::new(11).uniform_tensor(&[3, 16, 16], -1.0, 1.0);
    let run = |mode: TaylorMode, gated: bool, norm: NormKind| -> Tensor {
        let mut config = TFormerConfig::tiny(4);
        config.taylor_mode = mode;
        config.gated = gated;
        config.norm = norm;
        let (model, store) = build(config, 2);
        let mut g = Eager::new(&store);
        model.forward_raw(&mut g, &x).unwrap()
    };
    let base = run(TaylorMode::Residual, true, NormKind::Layer);
    for other in [
        run(TaylorMode::None, true, NormKind::Layer),
        run(TaylorMode::Sum, true, NormKind::Layer),
        run(TaylorMode::Residual, false, NormKind::Layer),
        run(TaylorMode::Residual, true, NormKind::None),
    ] {
        assert!(base.max_abs_diff(&other).unwrap() > 1e-6);
    }
}
