use std::time::Instant;

use candle_core::{DType, Device, Tensor, Var, D};
use candle_nn::optim::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::Network;
use super::snapshot::{collect_values, EmbeddingStats, ModelSnapshot};
use super::{encode_batch, grey_batch, rgb_batch, synthesize_batch, ModelConfig, TrainingHyperparams};
use crate::decolour::DecolourMode;
use crate::error::{Error, Result};
use crate::image::{ColourlessImage, RgbImage};
use crate::manifest::{load_all, DatasetManifest, ImageSource};

/// Mean loss components over one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub reconstruction_loss: f64,
    pub rate_bits_per_pixel: f64,
    pub diversity_loss: f64,
    pub colour_loss: f64,
    pub total_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub epochs: Vec<EpochRecord>,
}

pub(crate) struct LossTerms {
    pub reconstruction: Tensor,
    pub rate_bpp: Tensor,
    pub diversity: Tensor,
    pub colour: Tensor,
    pub total: Tensor,
}

/// Diversity margin: the batch-mean pairwise embedding distance below which collapse is penalized.
const DIVERSITY_MARGIN: f64 = 1.0;
const COLOUR_POOL: usize = 8;

pub(crate) fn losses(
    net: &Network,
    y: &Tensor,
    x: &Tensor,
    noise: &Tensor,
    hp: &TrainingHyperparams,
) -> Result<LossTerms> {
    let (b, _, h, w) = y.dims4()?;
    let e = net.encode(y)?;
    let y_hat = net.synthesize(x, &e)?;

    let reconstruction = (&y_hat - y)?.abs()?.mean_all()?;

    let bits = net.rate_bits(&(&e + noise)?)?;
    let rate_bpp = (bits.sum(D::Minus1)?.mean_all()? / (h * w) as f64)?;

    let diversity = if b > 1 {
        let diff = e.unsqueeze(1)?.broadcast_sub(&e.unsqueeze(0)?)?;
        let dist = (diff.sqr()?.sum(D::Minus1)? + 1e-12)?.sqrt()?;
        // The diagonal contributes ~1e-6 per element; negligible against the margin.
        let mean = (dist.sum_all()? / (b * (b - 1)) as f64)?;
        (mean.neg()? + DIVERSITY_MARGIN)?.relu()?
    } else {
        Tensor::zeros((), y.dtype(), &Device::Cpu)?
    };

    let pool = COLOUR_POOL.min(h).min(w);
    let colour = (y_hat.avg_pool2d(pool)? - y.avg_pool2d(pool)?)?.sqr()?.mean_all()?;

    let total = (&reconstruction
        + (&rate_bpp * hp.lambda_bpp_g)?
        + (&diversity * hp.lambda_diver)?
        + (&colour * hp.lambda_color)?)?;
    Ok(LossTerms { reconstruction, rate_bpp, diversity, colour, total })
}

fn uniform_noise(rng: &mut ChaCha8Rng, shape: (usize, usize), dtype: DType) -> Result<Tensor> {
    let data: Vec<f32> = (0..shape.0 * shape.1).map(|_| rng.gen_range(-0.5f32..0.5)).collect();
    Ok(Tensor::from_vec(data, shape, &Device::Cpu)?.to_dtype(dtype)?)
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Loads the manifest through `source` and trains on its images; labels are ignored.
pub fn train(
    manifest: &DatasetManifest,
    source: &dyn ImageSource,
    hp: &TrainingHyperparams,
) -> Result<(ModelSnapshot, TrainingReport)> {
    if manifest.is_empty() {
        return Err(Error::argument("cannot train on an empty manifest"));
    }
    hp.validate()?;
    let images = load_all(source, manifest, hp.resolution)?;
    train_on_images(&images, hp)
}

pub fn train_on_images(images: &[RgbImage], hp: &TrainingHyperparams) -> Result<(ModelSnapshot, TrainingReport)> {
    if images.is_empty() {
        return Err(Error::argument("cannot train on an empty image set"));
    }
    hp.validate()?;
    let images: Vec<RgbImage> = images.iter().map(|i| i.resized(hp.resolution, hp.resolution)).collect();
    let (net, vars) = Network::init(hp.architecture, hp.seed, DType::F32)?;
    let mut opt = AdamW::new(
        vars.into_iter().map(|(_, v)| v).collect(),
        ParamsAdamW { lr: hp.learning_rate, weight_decay: 0.0, ..Default::default() },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed.wrapping_add(0x5eed_c0de));
    let mut report = TrainingReport::default();
    let mut order: Vec<usize> = (0..images.len()).collect();

    for epoch in 1..=hp.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 5];
        let mut batches = 0usize;
        for batch in order.chunks(hp.batch_size) {
            let ys: Vec<&RgbImage> = batch.iter().map(|&i| &images[i]).collect();
            let xs = ys.iter().map(|y| hp.decolour.apply(y, &mut rng)).collect::<Result<Vec<_>>>()?;
            let x_refs: Vec<&ColourlessImage> = xs.iter().collect();
            let y = rgb_batch(&ys, DType::F32)?;
            let x = grey_batch(&x_refs, DType::F32)?;
            let noise = uniform_noise(&mut rng, (ys.len(), hp.architecture.embedding_dim), DType::F32)?;
            let terms = losses(&net, &y, &x, &noise, hp)?;
            let values = [
                scalar(&terms.reconstruction)?,
                scalar(&terms.rate_bpp)?,
                scalar(&terms.diversity)?,
                scalar(&terms.colour)?,
                scalar(&terms.total)?,
            ];
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { epoch, message: format!("non-finite loss components {values:?}") });
            }
            opt.backward_step(&terms.total)?;
            for (s, v) in sums.iter_mut().zip(values) {
                *s += v;
            }
            batches += 1;
        }
        let n = batches as f64;
        let record = EpochRecord {
            reconstruction_loss: sums[0] / n,
            rate_bits_per_pixel: sums[1] / n,
            diversity_loss: sums[2] / n,
            colour_loss: sums[3] / n,
            total_loss: sums[4] / n,
        };
        log::info!(
            "epoch {epoch}/{}: total {:.5} rec {:.5} bpp {:.5} div {:.5} col {:.6} ({:.1}s)",
            hp.epochs,
            record.total_loss,
            record.reconstruction_loss,
            record.rate_bits_per_pixel,
            record.diversity_loss,
            record.colour_loss,
            started.elapsed().as_secs_f64()
        );
        report.epochs.push(record);
    }

    let provisional = ModelSnapshot::from_parts(hp.clone(), collect_values(&net)?, EmbeddingStats::empty(hp))?;
    let stats = EmbeddingStats::from_embeddings(
        &encode_batch(&provisional, &images)?.iter().map(|e| e.values().to_vec()).collect::<Vec<_>>(),
    );
    let snapshot = ModelSnapshot::from_parts(hp.clone(), collect_values(&net)?, stats)?;
    Ok((snapshot, report))
}

impl EmbeddingStats {
    fn empty(hp: &TrainingHyperparams) -> Self {
        let d = hp.architecture.embedding_dim;
        Self { mean: vec![0.0; d], variance: vec![0.0; d] }
    }

    pub(crate) fn from_embeddings(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, Vec::len);
        let n = rows.len().max(1) as f64;
        let mean: Vec<f64> = (0..d).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n).collect();
        let variance = (0..d).map(|k| rows.iter().map(|r| (r[k] - mean[k]).powi(2)).sum::<f64>() / n).collect();
        Self { mean, variance }
    }
}

/// Mean absolute error of self-reconstruction with freshly drawn colourless inputs.
pub fn reconstruction_l1(model: &ModelSnapshot, images: &[RgbImage], seed: u64) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::argument("no images to evaluate"));
    }
    let res = model.resolution();
    let images: Vec<RgbImage> = images.iter().map(|i| i.resized(res, res)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mode: DecolourMode = model.decolour_mode();
    let xs = images.iter().map(|y| mode.apply(y, &mut rng)).collect::<Result<Vec<_>>>()?;
    let es = encode_batch(model, &images)?;
    let pairs: Vec<_> = xs.iter().zip(&es).collect();
    let outs = synthesize_batch(model, &pairs)?;
    let total: f64 = outs.iter().zip(&images).map(|(o, y)| o.mean_abs_diff(y)).sum::<Result<f64>>()?;
    Ok(total / images.len() as f64)
}

/// One analytic-vs-numeric gradient comparison.
#[derive(Debug, Clone)]
pub struct GradientSample {
    pub parameter: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradientSample {
    pub fn relative_error(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs()).max(1e-8);
        (self.analytic - self.numeric).abs() / scale
    }
}

/// Compares autodiff gradients of the total training loss against central
/// finite differences on `coords` randomly chosen parameter coordinates,
/// in double precision on a tiny network.
pub fn gradient_check(config: ModelConfig, coords: usize, seed: u64) -> Result<Vec<GradientSample>> {
    const STEP: f64 = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (net, vars) = Network::init(config, seed, DType::F64)?;
    let hp = TrainingHyperparams { architecture: config, ..TrainingHyperparams::default() };
    let (b, side) = (3usize, 8usize);

    let images: Vec<RgbImage> =
        (0..b).map(|_| RgbImage::from_fn(side, side, |_, _| std::array::from_fn(|_| rng.gen::<f64>()))).collect();
    let y_refs: Vec<&RgbImage> = images.iter().collect();
    let xs = images.iter().map(|y| hp.decolour.apply(y, &mut rng)).collect::<Result<Vec<_>>>()?;
    let x_refs: Vec<&ColourlessImage> = xs.iter().collect();
    let y = rgb_batch(&y_refs, DType::F64)?;
    let x = grey_batch(&x_refs, DType::F64)?;
    let noise = uniform_noise(&mut rng, (b, config.embedding_dim), DType::F64)?;

    let loss = |net: &Network| -> Result<f64> { scalar(&losses(net, &y, &x, &noise, &hp)?.total) };
    let grads = losses(&net, &y, &x, &noise, &hp)?.total.backward()?;

    let mut out = Vec::with_capacity(coords);
    for _ in 0..coords {
        let (name, var): &(String, Var) = &vars[rng.gen_range(0..vars.len())];
        let n = var.elem_count();
        let index = rng.gen_range(0..n);
        let analytic = grads
            .get(var.as_tensor())
            .map(|g| g.flatten_all()?.to_vec1::<f64>())
            .transpose()?
            .map_or(0.0, |g| g[index]);
        let original: Vec<f64> = var.flatten_all()?.to_vec1()?;
        let eval_at = |delta: f64| -> Result<f64> {
            let mut v = original.clone();
            v[index] += delta;
            var.set(&Tensor::from_vec(v, var.shape(), &Device::Cpu)?)?;
            loss(&net)
        };
        let numeric = (eval_at(STEP)? - eval_at(-STEP)?) / (2.0 * STEP);
        var.set(&Tensor::from_vec(original, var.shape(), &Device::Cpu)?)?;
        out.push(GradientSample { parameter: name.clone(), index, analytic, numeric });
    }
    Ok(out)
}
