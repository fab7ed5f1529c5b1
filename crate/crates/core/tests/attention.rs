mod common;

use common::{softmax_oracle, taylor_oracle, taylor_oracle_heads};
use proptest::prelude::*;
use tformer::attention::{
    lag_forward, softmax_attention, softmax_attention_streaming, taylor_attention_heads, taylor_linear_attention,
    vanilla_attention, AttentionConfig, ProjectionSet, TaylorMode, TaylorOptions,
};
use tformer::autograd::{Eager, ParamStore};
use tformer::rng::Rng;
use tformer::tensor::Tensor;

fn qkv(seed: u64, n: usize, c: usize) -> (Tensor, Tensor, Tensor) {
    let mut rng = Rng::new(seed);
    (
        rng.normal_tensor(&[n, c], 1.0),
        rng.normal_tensor(&[n, c], 1.0),
        rng.normal_tensor(&[n, c], 1.0),
    )
}

#[test]
fn linear_form_matches_materialized_weights() {
    for mode in TaylorMode::ALL {
        for divide in [true, false] {
            for normalize_qk in [true, false] {
                let opts = TaylorOptions {
                    mode,
                    divide,
                    normalize_qk,
                    ..TaylorOptions::default()
                };
                let (q, k, v) = qkv(7, 40, 6);
                // raw keys are shrunk so the normalizer stays clear of the guard
                let (q, k) = if normalize_qk { (q, k) } else { (q.scale(0.1), k.scale(0.1)) };
                let fast = taylor_linear_attention(&q, &k, &v, &opts).unwrap();
                let slow = taylor_oracle(&q, &k, &v, &opts);
                let err = fast.max_abs_diff(&slow).unwrap();
                assert!(err < 1e-10, "{mode} divide={divide} norm={normalize_qk}: {err}");
            }
        }
    }
}

#[test]
fn heads_match_per_head_oracle() {
    let (q, k, v) = qkv(8, 24, 8);
    for heads in [1, 2, 4, 8] {
        let opts = TaylorOptions::default();
        let fast = taylor_attention_heads(&q, &k, &v, heads, &opts).unwrap();
        let slow = taylor_oracle_heads(&q, &k, &v, heads, &opts);
        assert!(fast.max_abs_diff(&slow).unwrap() < 1e-10, "heads={heads}");
    }
    assert!(taylor_attention_heads(&q, &k, &v, 3, &TaylorOptions::default()).is_err());
}

#[test]
fn softmax_paths_match_scalar_oracle() {
    for &(n, c) in &[(1, 3), (5, 4), (70, 8), (600, 4)] {
        let (q, k, v) = qkv(n as u64, n, c);
        let oracle = softmax_oracle(&q, &k, &v, 1.0 / (c as f64).sqrt());
        assert!(vanilla_attention(&q, &k, &v).unwrap().max_abs_diff(&oracle).unwrap() < 1e-12);
        let streamed = softmax_attention_streaming(&q, &k, &v, 1.0 / (c as f64).sqrt()).unwrap();
        assert!(streamed.max_abs_diff(&oracle).unwrap() < 1e-12);
    }
}

#[test]
fn mismatched_shapes_rejected() {
    let (q, k, _) = qkv(1, 5, 4);
    let v = Tensor::zeros(&[6, 4]).unwrap();
    assert!(taylor_linear_attention(&q, &k, &v, &TaylorOptions::default()).is_err());
    assert!(softmax_attention(&q, &k, &v, 1.0).is_err());
}

#[test]
fn gate_and_mode_toggles_change_output() {
    let mut store = ParamStore::new();
    let mut rng = Rng::new(3);
    let proj = ProjectionSet::register(&mut store, &mut rng, "lag", 8, true);
    let x = rng.normal_tensor(&[8, 4, 4], 1.0);
    let mut g = Eager::new(&store);
    let gated = AttentionConfig::new(8, 2);
    let ungated = AttentionConfig { gated: false, ..gated.clone() };
    let none = AttentionConfig { taylor_mode: TaylorMode::None, ..gated.clone() };
    let a = lag_forward(&mut g, &x, &proj, &gated).unwrap();
    let b = lag_forward(&mut g, &x, &proj, &ungated).unwrap();
    let c = lag_forward(&mut g, &x, &proj, &none).unwrap();
    assert!(a.max_abs_diff(&b).unwrap() > 1e-6);
    assert!(a.max_abs_diff(&c).unwrap() > 1e-6);
}

fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    let c = t.dims()[1];
    let data = perm.iter().flat_map(|&i| t.data()[i * c..(i + 1) * c].to_vec()).collect();
    Tensor::from_vec(t.dims(), data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn oracle_agreement_random_sizes(n in 1usize..40, c in 1usize..9, seed in any::<u64>(), mode_idx in 0usize..3) {
        let (q, k, v) = qkv(seed, n, c);
        let opts = TaylorOptions { mode: TaylorMode::ALL[mode_idx], ..TaylorOptions::default() };
        let fast = taylor_linear_attention(&q, &k, &v, &opts).unwrap();
        let slow = taylor_oracle(&q, &k, &v, &opts);
        prop_assert!(fast.max_abs_diff(&slow).unwrap() < 1e-9);
    }

    #[test]
    fn permuting_positions_permutes_output(n in 2usize..24, seed in any::<u64>(), mode_idx in 0usize..3) {
        let (q, k, v) = qkv(seed, n, 4);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = Rng::new(seed ^ 1);
        for i in (1..n).rev() {
            perm.swap(i, rng.below(i + 1));
        }
        let opts = TaylorOptions { mode: TaylorMode::ALL[mode_idx], ..TaylorOptions::default() };
        let out = taylor_linear_attention(&q, &k, &v, &opts).unwrap();
        let permuted = taylor_linear_attention(
            &permute_rows(&q, &perm), &permute_rows(&k, &perm), &permute_rows(&v, &perm), &opts,
        ).unwrap();
        prop_assert!(permuted.max_abs_diff(&permute_rows(&out, &perm)).unwrap() < 1e-12);
    }

    #[test]
    fn sum_mode_rows_are_convex_weights(n in 1usize..30, seed in any::<u64>()) {
        // with unit q̄, k̄ every weight 1 + q̄·k̄ lies in [0, 2], so each output
        // is a convex combination of value rows
        let (q, k, _) = qkv(seed, n, 3);
        let v = Tensor::ones(&[n, 3]).unwrap();
        let opts = TaylorOptions { mode: TaylorMode::Sum, ..TaylorOptions::default() };
        let out = taylor_linear_attention(&q, &k, &v, &opts).unwrap();
        for &x in out.data() {
            prop_assert!((x - 1.0).abs() < 1e-9);
        }
    }
}
