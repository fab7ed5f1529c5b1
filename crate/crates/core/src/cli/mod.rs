//! Batch command surface behind the `tformer` binary.
//!
//! Every command is deterministic given its configuration and seed. Exit
//! codes: 0 success, 1 validation error (bad flags, config, files or
//! checkpoint), 2 runtime failure, 3 a gradient-check unit failed.

pub mod bench;
pub mod config;
pub mod gradcheck;
pub mod netpbm;
pub mod synth;
pub mod train;

pub use bench::{run_bench, BenchMode, BenchReport, BenchRow};
pub use config::{BenchConfig, CountConfig, GradcheckConfig, InpaintConfig, RunConfig, TrainConfig};
pub use gradcheck::{run_scope, Scope, UnitResult};
pub use netpbm::{read_image, read_image8, read_mask, write_image, write_image8, write_mask, Image8};
pub use synth::{synthetic_image, synthetic_mask};
pub use train::{from_network, masked_input, to_network, train_toy, TrainOutcome, TrainRow, TRAIN_CSV_HEADER};

use crate::attention::TaylorMode;
use crate::autograd::Eager;
use crate::cost::{calibrate_channels, cost_report, REFERENCE_MACS, REFERENCE_PARAMS, REFERENCE_RESOLUTION};
use crate::error::{Error, Result};
use crate::metrics::{psnr, ssim, ImagePair};
use crate::model::{load_checkpoint, save_checkpoint, NormKind};
use clap::{Parser, Subcommand};
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_TEST_FAILURE: i32 = 3;

const AFTER_HELP: &str = "\
Images are binary PPM (P6) or PGM (P5) with maxval 255.
Masks are PGM: 255 (white) marks a valid pixel, 0 (black) a missing one;
any other value is rejected.

Exit codes: 0 success, 1 validation error, 2 runtime failure,
3 gradient-check failure.";

#[derive(Debug, Parser)]
#[command(name = "tformer", version, about = "Linear-attention inpainting transformer toolkit", after_help = AFTER_HELP)]
pub struct Cli {
    /// TOML run configuration
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Write the command's table as CSV
    #[arg(long, global = true, value_name = "PATH")]
    pub csv: Option<PathBuf>,
    /// Training iterations
    #[arg(long, global = true)]
    pub iters: Option<usize>,
    /// Generator learning rate
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    /// Constant term of the linear attention: sum, residual or none
    #[arg(long, global = true)]
    pub mode: Option<TaylorMode>,
    /// Disable the attention gate
    #[arg(long, global = true)]
    pub no_gate: bool,
    /// Disable the pre-sub-layer layer normalization
    #[arg(long, global = true)]
    pub no_norm: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Time linear vs quadratic attention over a range of sequence lengths
    Bench {
        /// Square side lengths; N = side²
        #[arg(long, value_delimiter = ',')]
        sides: Option<Vec<usize>>,
        #[arg(long)]
        channels: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        modes: Option<Vec<BenchMode>>,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Parameter and MAC accounting with a width calibration sweep
    Count {
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
    },
    /// Overfit one image and mask, logging losses and writing a checkpoint
    TrainToy {
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Write the final composited output image
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Fill the missing pixels of an image with a trained checkpoint
    Inpaint {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Reference image for PSNR/SSIM
        #[arg(long)]
        ground_truth: Option<PathBuf>,
    },
    /// Finite-difference gradient checks
    Gradcheck {
        #[arg(long)]
        scope: Option<Scope>,
    },
}

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Shape { .. }
        | Error::InvalidArgument(_)
        | Error::Config(_)
        | Error::Parse { .. }
        | Error::Checksum => EXIT_VALIDATION,
        Error::NotScalar(_) | Error::NoDerivative(_) | Error::Io { .. } => EXIT_RUNTIME,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn out_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn required(value: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    value.ok_or_else(|| Error::Config(format!("missing {what} (flag or config)")))
}

/// Builds the effective configuration: file, then flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(iters) = cli.iters {
        config.train.iters = iters;
    }
    if let Some(lr) = cli.lr {
        config.train.lr = lr;
    }
    if let Some(mode) = cli.mode {
        config.model.taylor_mode = mode;
    }
    if cli.no_gate {
        config.model.gated = false;
    }
    if cli.no_norm {
        config.model.norm = NormKind::None;
    }
    Ok(config)
}

pub fn cmd_bench(config: &RunConfig, out: &mut dyn Write) -> Result<BenchReport> {
    let b = &config.bench;
    let report = run_bench(&b.sides, b.channels, &b.modes, b.repeats, config.model.taylor_mode, config.seed)?;
    (|| -> std::io::Result<()> {
        writeln!(out, "{:<10} {:>8} {:>4} {:>14} {:>16}", "mode", "N", "C", "median_s", "macs")?;
        for r in &report.rows {
            writeln!(out, "{:<10} {:>8} {:>4} {:>14.6} {:>16}", r.mode, r.n, r.channels, r.median_seconds, r.macs)?;
        }
        for &mode in &b.modes {
            if let Some(s) = report.slope(mode) {
                writeln!(out, "slope {mode}: {s:.3}")?;
            }
        }
        Ok(())
    })()
    .map_err(out_err)?;
    if let Some(path) = &b.csv {
        write_text(path, &report.to_csv())?;
    }
    Ok(report)
}

pub fn cmd_count(config: &RunConfig, out: &mut dyn Write) -> Result<crate::cost::CostReport> {
    let c = &config.count;
    let report = cost_report(&config.model, c.height, c.width)?;
    let (best, rows) = calibrate_channels(&config.model, REFERENCE_PARAMS, &c.sweep)?;
    (|| -> std::io::Result<()> {
        writeln!(out, "generator cost at {}x{} (discriminator excluded)", c.height, c.width)?;
        out.write_all(report.to_table().as_bytes())?;
        writeln!(out)?;
        writeln!(
            out,
            "calibration at {REFERENCE_RESOLUTION}x{REFERENCE_RESOLUTION} (other settings from this config)"
        )?;
        writeln!(out, "{:<10} {:>12} {:>16} {:>10} {:>10}", "C", "params", "macs", "param_gap", "mac_gap")?;
        for r in &rows {
            writeln!(
                out,
                "{:<10} {:>12} {:>16} {:>9.1}% {:>9.1}%",
                r.channels,
                r.params,
                r.macs,
                100.0 * r.param_gap,
                100.0 * r.mac_gap
            )?;
        }
        writeln!(out, "{:<10} {:>12} {:>16}", "reference", REFERENCE_PARAMS, REFERENCE_MACS)?;
        writeln!(
            out,
            "best C = {} ({} params, gap {:+.1}%; {} MACs, gap {:+.1}%)",
            best.channels,
            best.params,
            100.0 * best.param_gap,
            best.macs,
            100.0 * best.mac_gap
        )
    })()
    .map_err(out_err)?;
    if let Some(path) = &c.csv {
        write_text(path, &report.to_csv())?;
    }
    Ok(report)
}

/// Loads the configured image and mask, or generates them from the seed.
pub fn training_pair(config: &RunConfig) -> Result<(crate::tensor::Tensor, crate::tensor::Tensor)> {
    let t = &config.train;
    let image = match &t.image {
        Some(path) => read_image(path)?,
        None => synthetic_image(t.synthetic_size, t.synthetic_size, config.seed),
    };
    let (_, h, w) = image.chw("train-toy")?;
    let mask = match &t.mask {
        Some(path) => read_mask(path)?,
        None => synthetic_mask(h, w, t.mask_ratio, config.seed.wrapping_add(1)),
    };
    Ok((image, mask))
}

pub fn cmd_train_toy(config: &RunConfig, output: Option<&Path>, out: &mut dyn Write) -> Result<TrainOutcome> {
    let (image, mask) = training_pair(config)?;
    let every = (config.train.iters / 10).max(1);
    let mut io_result = writeln!(out, "{TRAIN_CSV_HEADER}");
    let outcome = train_toy(config, &image, &mask, |row| {
        if io_result.is_ok() && (row.iter % every == 0 || row.iter == config.train.iters) {
            io_result = writeln!(out, "{}", row.csv_line());
        }
    })?;
    io_result.map_err(out_err)?;
    if let Some(path) = &config.train.csv {
        write_text(path, &outcome.csv())?;
    }
    if let Some(path) = &config.train.checkpoint {
        save_checkpoint(path, &outcome.model, &outcome.store)?;
    }
    if let Some(path) = output {
        write_image(path, &outcome.output)?;
    }
    let ratio = outcome.final_masked_l1() / outcome.initial_masked_l1();
    writeln!(
        out,
        "masked L1 {:.5} -> {:.5} ({:.1}% of initial); PSNR {:.2} dB vs zero-filled {:.2} dB",
        outcome.initial_masked_l1(),
        outcome.final_masked_l1(),
        100.0 * ratio,
        outcome.psnr_output,
        outcome.psnr_baseline
    )
    .map_err(out_err)?;
    Ok(outcome)
}

#[derive(Clone, Debug, PartialEq)]
pub struct InpaintResult {
    pub output: Image8,
    /// `(psnr, ssim)` of the output and of the zero-filled input, when a
    /// reference was given.
    pub metrics: Option<((f64, f64), (f64, f64))>,
}

pub fn cmd_inpaint(config: &RunConfig, out: &mut dyn Write) -> Result<InpaintResult> {
    let p = &config.inpaint;
    let ckpt = required(p.checkpoint.clone(), "checkpoint")?;
    let image_path = required(p.image.clone(), "image")?;
    let mask_path = required(p.mask.clone(), "mask")?;
    let (model, store) = load_checkpoint(&ckpt)?;
    let original = read_image8(&image_path)?;
    let image = original.to_tensor();
    let mask = read_mask(&mask_path)?;
    train::check_pair(&image, &mask)?;
    let input = masked_input(&image, &mask)?;
    let raw = model.forward_raw(&mut Eager::new(&store), &input)?;
    let composite = from_network(&crate::model::compose(&input, &raw, &mask)?);
    let mut output = Image8::from_tensor(&composite)?;
    // valid pixels are copied byte for byte
    for (i, &m) in mask.data().iter().enumerate() {
        if m == 1.0 {
            output.data[3 * i..3 * i + 3].copy_from_slice(&original.data[3 * i..3 * i + 3]);
        }
    }
    if let Some(path) = &p.output {
        write_image8(path, &output)?;
    }
    let metrics = match &p.ground_truth {
        Some(path) => {
            let truth = read_image(path)?;
            let candidate = if p.raw_metrics { from_network(&raw) } else { output.to_tensor() };
            let score = |t: &crate::tensor::Tensor| -> Result<(f64, f64)> {
                let pair = ImagePair::new(&truth, t)?;
                Ok((psnr(&pair), ssim(&pair)?))
            };
            let ours = score(&candidate)?;
            let baseline = score(&from_network(&input))?;
            writeln!(
                out,
                "PSNR {:.3} dB, SSIM {:.4} (zero-filled: {:.3} dB, {:.4})",
                ours.0, ours.1, baseline.0, baseline.1
            )
            .map_err(out_err)?;
            Some((ours, baseline))
        }
        None => None,
    };
    writeln!(
        out,
        "inpainted {}x{}, {:.1}% missing",
        original.width,
        original.height,
        100.0 * crate::metrics::mask_ratio(&mask)?
    )
    .map_err(out_err)?;
    Ok(InpaintResult { output, metrics })
}

pub fn cmd_gradcheck(config: &RunConfig, csv: Option<&Path>, out: &mut dyn Write) -> Result<Vec<UnitResult>> {
    let results = run_scope(config.gradcheck.scope, config.seed, config.gradcheck.tolerance)?;
    let mut table = String::from("unit,max_rel_error,tolerance,coords,passed\n");
    for r in &results {
        let status = if r.passed() { "ok" } else { "FAIL" };
        writeln!(out, "{status:<4} {:<48} {:.3e} (< {:.0e}, {} coords)", r.name, r.max_rel_error, r.tolerance, r.coords)
            .map_err(out_err)?;
        table.push_str(&format!("{},{},{},{},{}\n", r.name, r.max_rel_error, r.tolerance, r.coords, r.passed()));
    }
    if let Some(path) = csv {
        write_text(path, &table)?;
    }
    Ok(results)
}

/// Runs a parsed command; returns the process exit code.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<i32> {
    let mut config = resolve_config(&cli)?;
    let csv = cli.csv.clone();
    match cli.command {
        Command::Bench { sides, channels, modes, repeats } => {
            let b = &mut config.bench;
            b.sides = sides.unwrap_or(std::mem::take(&mut b.sides));
            b.channels = channels.unwrap_or(b.channels);
            b.modes = modes.unwrap_or(std::mem::take(&mut b.modes));
            b.repeats = repeats.unwrap_or(b.repeats);
            b.csv = csv.or(b.csv.take());
            config.validate()?;
            cmd_bench(&config, out)?;
        }
        Command::Count { height, width } => {
            let c = &mut config.count;
            c.height = height.unwrap_or(c.height);
            c.width = width.unwrap_or(c.width);
            c.csv = csv.or(c.csv.take());
            config.validate()?;
            cmd_count(&config, out)?;
        }
        Command::TrainToy { image, mask, checkpoint, output } => {
            let t = &mut config.train;
            t.image = image.or(t.image.take());
            t.mask = mask.or(t.mask.take());
            t.checkpoint = checkpoint.or(t.checkpoint.take());
            t.csv = csv.or(t.csv.take());
            config.validate()?;
            cmd_train_toy(&config, output.as_deref(), out)?;
        }
        Command::Inpaint { checkpoint, image, mask, output, ground_truth } => {
            let p = &mut config.inpaint;
            p.checkpoint = checkpoint.or(p.checkpoint.take());
            p.image = image.or(p.image.take());
            p.mask = mask.or(p.mask.take());
            p.output = output.or(p.output.take());
            p.ground_truth = ground_truth.or(p.ground_truth.take());
            config.validate()?;
            cmd_inpaint(&config, out)?;
        }
        Command::Gradcheck { scope } => {
            if let Some(scope) = scope {
                config.gradcheck.scope = scope;
            }
            config.validate()?;
            let results = cmd_gradcheck(&config, csv.as_deref(), out)?;
            if !results.iter().all(UnitResult::passed) {
                return Ok(EXIT_TEST_FAILURE);
            }
        }
    }
    Ok(EXIT_OK)
}

/// Parses `args` (including the program name), runs the command against
/// stdout and maps the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(cli, &mut lock) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
