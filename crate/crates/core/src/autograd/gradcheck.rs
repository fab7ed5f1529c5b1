use super::{Graph, ParamId, ParamStore, Tape, Var};
use crate::error::Result;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub h: f64,
    /// Check at most this many randomly chosen coordinates per parameter;
    /// `None` checks every coordinate.
    pub coords_per_param: Option<usize>,
    /// Seed for the coordinate sample.
    pub seed: u64,
    /// Lower bound on the relative-error denominator, so coordinates whose
    /// true derivative is ~0 are judged by absolute error instead.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-5,
            coords_per_param: None,
            seed: 0,
            floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// Parameter name and flat index where the worst error occurred.
    pub worst: Option<(String, usize)>,
}

fn evaluate(store: &ParamStore, f: &impl Fn(&mut Tape) -> Result<Var>) -> Result<f64> {
    let mut tape = Tape::new(store);
    let out = f(&mut tape)?;
    tape.tensor(&out).item()
}

/// Compares tape gradients of the scalar `f` against central differences
/// `(f(w+h) − f(w−h)) / 2h`, coordinate by coordinate.
///
/// `f` builds its computation on the tape it is given and returns the scalar
/// output. Parameter values are restored exactly after each probe.
pub fn finite_diff_check(
    store: &mut ParamStore,
    params: &[ParamId],
    opts: GradCheckOptions,
    f: impl Fn(&mut Tape) -> Result<Var>,
) -> Result<GradCheckReport> {
    let grads = {
        let mut tape = Tape::new(store);
        let out = f(&mut tape)?;
        tape.backward(out)?
    };
    let mut rng = Rng::new(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coords_checked: 0,
        worst: None,
    };
    for &id in params {
        let numel = store.value(id).numel();
        let analytic = grads.param(id).map(|g| g.data().to_vec()).unwrap_or_else(|| vec![0.0; numel]);
        let coords: Vec<usize> = match opts.coords_per_param {
            Some(limit) if limit < numel => (0..limit).map(|_| rng.below(numel)).collect(),
            _ => (0..numel).collect(),
        };
        for idx in coords {
            let original = store.value(id).data()[idx];
            store.get_mut(id).value.data_mut()[idx] = original + opts.h;
            let plus = evaluate(store, &f);
            store.get_mut(id).value.data_mut()[idx] = original - opts.h;
            let minus = evaluate(store, &f);
            store.get_mut(id).value.data_mut()[idx] = original;
            let numeric = (plus? - minus?) / (2.0 * opts.h);
            let a = analytic[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            report.coords_checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((store.get(id).name.clone(), idx));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn sum_of_squares_is_exact() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::from_vec(&[4], vec![0.3, -1.2, 2.0, 0.7]).unwrap());
        let report = finite_diff_check(&mut store, &[w], GradCheckOptions::default(), |t| {
            let x = t.param(w);
            let sq = t.hadamard(&x, &x)?;
            t.sum(&sq)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-9, "{report:?}");
        assert_eq!(report.coords_checked, 4);
        assert_eq!(store.value(w).data(), &[0.3, -1.2, 2.0, 0.7]);
    }
}
