//! Linear attention against explicit softmax attention on the same inputs.
//!
//! Shrinking the query scale `s` moves softmax into the regime where its
//! first-order expansion is accurate; the printed gap falls roughly as s².

use tformer::attention::{softmax_attention, taylor_attention_heads, taylor_linear_attention, TaylorMode, TaylorOptions};
use tformer::rng::Rng;
use tformer::Result;

fn main() -> Result<()> {
    let mut rng = Rng::new(42);
    let (n, c) = (256, 16);
    let q = rng.normal_tensor(&[n, c], 1.0);
    let k = rng.normal_tensor(&[n, c], 1.0);
    let v = rng.normal_tensor(&[n, c], 1.0);

    for mode in TaylorMode::ALL {
        let opts = TaylorOptions { mode, ..TaylorOptions::default() };
        let single = taylor_linear_attention(&q, &k, &v, &opts)?;
        let multi = taylor_attention_heads(&q, &k, &v, 4, &opts)?;
        println!("{mode:>8}: output mean {:+.4}, 4-head mean {:+.4}", single.mean(), multi.mean());
    }

    // pre-normalized rows so the logits are exactly s·cos(q, k)
    let unit = |t: &tformer::tensor::Tensor| {
        let mut t = t.clone();
        for row in t.data_mut().chunks_mut(c) {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            row.iter_mut().for_each(|x| *x /= norm);
        }
        t
    };
    let (qu, ku) = (unit(&q), unit(&k));
    let opts = TaylorOptions { mode: TaylorMode::Sum, normalize_qk: false, ..TaylorOptions::default() };
    println!("\n{:>6} {:>12}", "s", "max |Δ|");
    for s in [0.4, 0.2, 0.1, 0.05] {
        let qs = qu.scale(s);
        let linear = taylor_linear_attention(&qs, &ku, &v, &opts)?;
        let exact = softmax_attention(&qs, &ku, &v, 1.0)?;
        println!("{s:>6} {:>12.3e}", linear.max_abs_diff(&exact)?);
    }
    Ok(())
}
