//! PSNR and SSIM of progressively degraded copies of a synthetic image.

use tformer::cli::{synthetic_image, synthetic_mask};
use tformer::metrics::{mask_bucket, mask_ratio, psnr, ssim, ImagePair};
use tformer::rng::Rng;

fn main() -> tformer::Result<()> {
    let image = synthetic_image(64, 64, 3);
    let noise = Rng::new(4).normal_tensor(image.dims(), 1.0);
    println!("{:>8} {:>10} {:>8}", "sigma", "PSNR dB", "SSIM");
    for sigma in [0.0, 1.0 / 255.0, 0.02, 0.05, 0.1] {
        let noisy = image.add(&noise.scale(sigma))?;
        let pair = ImagePair::new(&image, &noisy)?;
        println!("{sigma:>8.4} {:>10.3} {:>8.4}", psnr(&pair), ssim(&pair)?);
    }
    let mask = synthetic_mask(64, 64, 0.25, 5);
    let ratio = mask_ratio(&mask)?;
    println!("mask: {:.1}% missing, bucket {}", 100.0 * ratio, mask_bucket(ratio));
    Ok(())
}
