//! Trains briefly, saves a checkpoint, reloads it and fills a new hole in
//! the image, writing `inpaint_input.ppm`, `inpaint_mask.pgm` and
//! `inpaint_output.ppm` to the system temp directory.

use tformer::autograd::Eager;
use tformer::cli::{from_network, masked_input, synthetic_image, synthetic_mask, train_toy, write_image, write_mask, RunConfig};
use tformer::metrics::{psnr, ImagePair};
use tformer::model::{compose, load_checkpoint, save_checkpoint};

fn main() -> tformer::Result<()> {
    let dir = std::env::temp_dir();
    let image = synthetic_image(32, 32, 2);
    let train_mask = synthetic_mask(32, 32, 0.3, 3);
    let mut config = RunConfig::default();
    config.train.iters = 60;
    config.train.lr = 2e-3;
    config.train.disc_channels = 8;
    let outcome = train_toy(&config, &image, &train_mask, |_| {})?;
    let ckpt = dir.join("inpaint_model.ckpt");
    save_checkpoint(&ckpt, &outcome.model, &outcome.store)?;

    let (model, store) = load_checkpoint(&ckpt)?;
    let mask = synthetic_mask(32, 32, 0.2, 4);
    let input = masked_input(&image, &mask)?;
    let raw = model.forward_raw(&mut Eager::new(&store), &input)?;
    let filled = from_network(&compose(&input, &raw, &mask)?);
    write_image(&dir.join("inpaint_input.ppm"), &from_network(&input))?;
    write_mask(&dir.join("inpaint_mask.pgm"), &mask)?;
    write_image(&dir.join("inpaint_output.ppm"), &filled)?;
    println!(
        "PSNR zero-filled {:.2} dB, inpainted {:.2} dB; files in {}",
        psnr(&ImagePair::new(&image, &from_network(&input))?),
        psnr(&ImagePair::new(&image, &filled)?),
        dir.display()
    );
    Ok(())
}
