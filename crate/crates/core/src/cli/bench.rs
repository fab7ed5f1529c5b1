use crate::attention::{softmax_attention_streaming, taylor_linear_attention, TaylorMode, TaylorOptions};
use crate::cost::{quadratic_attention_macs, taylor_attention_macs};
use crate::error::{Error, Result};
use crate::rng::Rng;
use serde::Deserialize;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchMode {
    /// Taylor linear attention.
    Linear,
    /// Softmax attention, streamed so memory stays O(N·C).
    Quadratic,
}

impl fmt::Display for BenchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenchMode::Linear => "linear",
            BenchMode::Quadratic => "quadratic",
        })
    }
}

impl FromStr for BenchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(BenchMode::Linear),
            "quadratic" => Ok(BenchMode::Quadratic),
            _ => Err(Error::Config(format!("unknown bench mode {s:?} (expected linear or quadratic)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub mode: BenchMode,
    pub n: usize,
    pub channels: usize,
    pub median_seconds: f64,
    pub macs: u64,
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("mode,N,C,median_seconds,macs\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{},{}\n", r.mode, r.n, r.channels, r.median_seconds, r.macs));
        }
        s
    }

    /// Fitted time-vs-N slope for one mode, if it has at least two sizes.
    pub fn slope(&self, mode: BenchMode) -> Option<f64> {
        let points: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter(|r| r.mode == mode)
            .map(|r| (r.n as f64, r.median_seconds.max(1e-9)))
            .collect();
        (points.len() >= 2).then(|| loglog_slope(&points))
    }
}

/// Times single-head attention on random N×C inputs for every (mode, side),
/// N = side², reporting the median of `repeats` runs.
pub fn run_bench(
    sides: &[usize],
    channels: usize,
    modes: &[BenchMode],
    repeats: usize,
    taylor_mode: TaylorMode,
    seed: u64,
) -> Result<BenchReport> {
    if repeats == 0 || channels == 0 {
        return Err(Error::InvalidArgument("repeats and channels must be positive".into()));
    }
    let mut rng = Rng::new(seed);
    let opts = TaylorOptions {
        mode: taylor_mode,
        ..TaylorOptions::default()
    };
    let mut rows = Vec::new();
    for &mode in modes {
        for &side in sides {
            let n = side * side;
            let q = rng.normal_tensor(&[n, channels], 1.0);
            let k = rng.normal_tensor(&[n, channels], 1.0);
            let v = rng.normal_tensor(&[n, channels], 1.0);
            let mut times = Vec::with_capacity(repeats);
            for _ in 0..repeats {
                let start = Instant::now();
                let out = match mode {
                    BenchMode::Linear => taylor_linear_attention(&q, &k, &v, &opts)?,
                    BenchMode::Quadratic => softmax_attention_streaming(&q, &k, &v, 1.0 / (channels as f64).sqrt())?,
                };
                times.push(start.elapsed().as_secs_f64());
                std::hint::black_box(out);
            }
            let macs = match mode {
                BenchMode::Linear => taylor_attention_macs(n, channels, 1),
                BenchMode::Quadratic => quadratic_attention_macs(n, channels, 1),
            };
            rows.push(BenchRow {
                mode,
                n,
                channels,
                median_seconds: median(times),
                macs,
            });
        }
    }
    Ok(BenchReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = [1.0, 2.0, 4.0, 8.0].iter().map(|&x: &f64| (x, 3.0 * x.powf(1.5))).collect();
        assert!((loglog_slope(&pts) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn csv_has_one_row_per_pair() {
        let r = run_bench(&[4, 8], 4, &[BenchMode::Linear, BenchMode::Quadratic], 1, TaylorMode::Residual, 0).unwrap();
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 1 + 4);
        assert!(csv.starts_with("mode,N,C,median_seconds,macs\n"));
        assert!(r.slope(BenchMode::Linear).is_some());
    }
}
