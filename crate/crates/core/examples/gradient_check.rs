//! Finite-difference checks, first on a hand-built graph and then on the
//! packaged op/block/model suites.

use tformer::autograd::{finite_diff_check, GradCheckOptions, Graph, ParamStore};
use tformer::cli::{run_scope, Scope};
use tformer::rng::Rng;

fn main() -> tformer::Result<()> {
    let mut store = ParamStore::new();
    let mut rng = Rng::new(1);
    let w = store.add("w", rng.normal_tensor(&[4, 3], 0.5));
    let x = rng.normal_tensor(&[5, 4], 1.0);
    // mean(gelu(x·w)²)
    let report = finite_diff_check(&mut store, &[w], GradCheckOptions::default(), |t| {
        let xv = t.constant(x.clone());
        let wv = t.param(w);
        let y = t.matmul(&xv, &wv)?;
        let y = t.gelu(&y)?;
        let sq = t.hadamard(&y, &y)?;
        t.mean(&sq)
    })?;
    println!("custom graph: {} coords, max rel error {:.2e}", report.coords_checked, report.max_rel_error);

    for scope in [Scope::Ops, Scope::Block] {
        for unit in run_scope(scope, 0, None)? {
            println!("{:<4} {:<44} {:.2e}", if unit.passed() { "ok" } else { "FAIL" }, unit.name, unit.max_rel_error);
        }
    }
    Ok(())
}
