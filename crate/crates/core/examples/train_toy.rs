//! Overfits the generator to one synthetic image with a 30% hole and prints
//! how the loss terms and the hole error evolve.
//!
//! `cargo run --release --example train_toy -- 200`

use tformer::cli::{synthetic_image, synthetic_mask, train_toy, RunConfig};

fn main() -> tformer::Result<()> {
    let iters = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(100);
    let mut config = RunConfig::default();
    config.train.iters = iters;
    config.train.lr = 2e-3;
    config.train.disc_channels = 16;
    config.train.loss_on_composited = true;
    let image = synthetic_image(32, 32, 0);
    let mask = synthetic_mask(32, 32, 0.3, 1);
    let every = (iters / 10).max(1);
    let outcome = train_toy(&config, &image, &mask, |row| {
        if row.iter % every == 0 {
            println!(
                "iter {:>4}  L1 {:.4}  perc {:.4}  style {:.5}  adv {:.3}  D {:.3}  hole L1 {:.4}",
                row.iter, row.l_re, row.l_perc, row.l_style, row.l_adv, row.loss_d, row.masked_l1
            );
        }
    })?;
    println!(
        "hole L1 {:.4} -> {:.4}; PSNR {:.2} dB (zero-filled {:.2} dB)",
        outcome.initial_masked_l1(),
        outcome.final_masked_l1(),
        outcome.psnr_output,
        outcome.psnr_baseline
    );
    Ok(())
}
