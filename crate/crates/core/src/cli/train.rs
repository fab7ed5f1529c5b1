use super::config::RunConfig;
use crate::autograd::{AdamW, Graph, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::losses::{discriminator_loss, total_loss, PatchDiscriminator, RandomConvExtractor};
use crate::metrics::{mask_ratio, psnr, ImagePair};
use crate::model::{compose, expand_mask, TFormerConfig, TFormerModel};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// `[0, 1]` → `[−1, 1]`.
pub fn to_network(image: &Tensor) -> Tensor {
    image.map(|v| 2.0 * v - 1.0)
}

/// `[−1, 1]` → `[0, 1]`.
pub fn from_network(image: &Tensor) -> Tensor {
    image.map(|v| 0.5 * (v + 1.0))
}

/// Checks a 3×H×W image and binary 1×H×W mask the network can consume.
pub fn check_pair(image: &Tensor, mask: &Tensor) -> Result<()> {
    let (c, h, w) = image.chw("image")?;
    if c != 3 {
        return Err(Error::InvalidArgument(format!("expected an RGB image, got {c} channels")));
    }
    if mask.dims() != [1, h, w] {
        return Err(Error::InvalidArgument(format!(
            "mask {:?} does not match image {h}×{w}",
            mask.dims()
        )));
    }
    mask_ratio(mask)?;
    TFormerConfig::check_spatial(h, w)
}

/// Network-space input with missing pixels set to 0.
pub fn masked_input(image: &Tensor, mask: &Tensor) -> Result<Tensor> {
    to_network(image).hadamard(&expand_mask(mask, image.dims()[0])?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRow {
    pub iter: usize,
    pub l_re: f64,
    pub l_perc: f64,
    pub l_style: f64,
    pub l_adv: f64,
    pub total: f64,
    pub loss_d: f64,
    /// Mean absolute error over missing pixels, on the `[0, 1]` scale.
    pub masked_l1: f64,
}

pub const TRAIN_CSV_HEADER: &str = "iter,l_re,l_perc,l_style,l_adv,total,loss_d,masked_l1";

impl TrainRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.iter, self.l_re, self.l_perc, self.l_style, self.l_adv, self.total, self.loss_d, self.masked_l1
        )
    }
}

pub struct TrainOutcome {
    /// Rows for iterations `0..=iters`; the last is evaluated after the final
    /// update.
    pub rows: Vec<TrainRow>,
    pub model: TFormerModel,
    pub store: ParamStore,
    /// Final composited output in `[0, 1]`.
    pub output: Tensor,
    pub psnr_output: f64,
    /// PSNR of the zero-filled input (missing pixels at network 0, i.e. mid
    /// grey) against the image.
    pub psnr_baseline: f64,
}

impl TrainOutcome {
    pub fn csv(&self) -> String {
        let mut s = format!("{TRAIN_CSV_HEADER}\n");
        for r in &self.rows {
            s.push_str(&r.csv_line());
            s.push('\n');
        }
        s
    }

    pub fn initial_masked_l1(&self) -> f64 {
        self.rows[0].masked_l1
    }

    pub fn final_masked_l1(&self) -> f64 {
        self.rows.last().expect("at least one row").masked_l1
    }
}

fn masked_l1(raw: &Tensor, target: &Tensor, mask: &Tensor) -> f64 {
    let plane = mask.numel();
    let m = mask.data();
    let (mut sum, mut count) = (0.0, 0usize);
    for (i, (a, b)) in raw.data().iter().zip(target.data()).enumerate() {
        if m[i % plane] == 0.0 {
            sum += (a - b).abs();
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        0.5 * sum / count as f64
    }
}

/// Alternating generator / discriminator AdamW updates on one image.
///
/// Each iteration refreshes the spectral-norm estimates, takes a generator
/// step on the weighted total loss and then a discriminator step on the
/// generator output of that iteration (detached). `image` is in `[0, 1]`.
pub fn train_toy(config: &RunConfig, image: &Tensor, mask: &Tensor, mut progress: impl FnMut(&TrainRow)) -> Result<TrainOutcome> {
    config.validate()?;
    check_pair(image, mask)?;
    let t = &config.train;
    let target = to_network(image);
    let input = masked_input(image, mask)?;

    let mut store = ParamStore::new();
    let mut rng = Rng::new(config.seed);
    let model = TFormerModel::new(config.model.clone(), &mut store, &mut rng)?;
    let mut disc = PatchDiscriminator::new(&mut store, &mut rng, 3, t.disc_channels, t.power_iters)?;
    let fx = RandomConvExtractor::new(3, &t.extractor_widths, t.extractor_seed);
    let gen_ids = model.param_ids();
    let disc_ids = disc.param_ids();
    let opt_g = AdamW::new(t.lr, t.weight_decay);
    let opt_d = AdamW::new(t.disc_lr.unwrap_or(t.lr), t.weight_decay);
    let fill = expand_mask(mask, 3)?.map(|m| 1.0 - m);

    let mut rows = Vec::with_capacity(t.iters + 1);
    let mut raw = Tensor::zeros(&[1]).expect("positive dims");
    for iter in 0..=t.iters {
        let update = iter < t.iters;
        disc.refresh(&store)?;

        let (terms, grads_g) = {
            let mut tape = Tape::new(&store);
            let x = tape.constant(input.clone());
            let y = tape.constant(target.clone());
            let out = model.forward_raw(&mut tape, &x)?;
            raw = tape.tensor(&out).clone();
            let pred = if t.loss_on_composited {
                let keep = tape.constant(input.clone());
                let f = tape.constant(fill.clone());
                let filled = tape.hadamard(&f, &out)?;
                tape.add(&keep, &filled)?
            } else {
                out
            };
            let terms = total_loss(&mut tape, &pred, &y, &fx, &disc, &config.loss)?;
            let values = [
                &terms.reconstruction,
                &terms.perceptual,
                &terms.style,
                &terms.adversarial,
                &terms.total,
            ]
            .map(|v| tape.tensor(v).data()[0]);
            let grads = if update { Some(tape.backward(terms.total)?) } else { None };
            (values, grads)
        };
        if let Some(grads) = grads_g {
            store.accumulate(&grads);
            opt_g.step(&mut store, &gen_ids);
        }

        let (loss_d, grads_d) = {
            let mut tape = Tape::new(&store);
            let real = tape.constant(target.clone());
            let fake = tape.constant(raw.clone());
            let loss = discriminator_loss(&mut tape, &disc, &real, &fake)?;
            let value = tape.tensor(&loss).data()[0];
            let grads = if update { Some(tape.backward(loss)?) } else { None };
            (value, grads)
        };
        if let Some(grads) = grads_d {
            store.accumulate(&grads);
            opt_d.step(&mut store, &disc_ids);
        }

        let [l_re, l_perc, l_style, l_adv, total] = terms;
        let row = TrainRow {
            iter,
            l_re,
            l_perc,
            l_style,
            l_adv,
            total,
            loss_d,
            masked_l1: masked_l1(&raw, &target, mask),
        };
        progress(&row);
        rows.push(row);
    }

    let composite = compose(&input, &raw, mask)?;
    let output = from_network(&composite);
    let baseline = from_network(&input);
    let psnr_output = psnr(&ImagePair::new(image, &output)?);
    let psnr_baseline = psnr(&ImagePair::new(image, &baseline)?);
    Ok(TrainOutcome {
        rows,
        model,
        store,
        output,
        psnr_output,
        psnr_baseline,
    })
}
