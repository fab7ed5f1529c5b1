//! Times linear and quadratic attention over growing sequence lengths and
//! fits the log-log slope. Pass side lengths as arguments, e.g.
//! `cargo run --release --example complexity_bench -- 16 32 64 128`.

use tformer::attention::TaylorMode;
use tformer::cli::{run_bench, BenchMode};

fn main() -> tformer::Result<()> {
    let mut sides: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    if sides.is_empty() {
        sides = vec![16, 32, 64, 96];
    }
    let report = run_bench(&sides, 32, &[BenchMode::Linear, BenchMode::Quadratic], 3, TaylorMode::Residual, 0)?;
    print!("{}", report.to_csv());
    for mode in [BenchMode::Linear, BenchMode::Quadratic] {
        if let Some(slope) = report.slope(mode) {
            println!("{mode} slope: {slope:.2}");
        }
    }
    Ok(())
}
