//! Small convolutional classifier used as the downstream benchmark.

use std::collections::BTreeSet;

use candle_core::{DType, Device, Tensor, Var, D};
use candle_nn::optim::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{conv2d, rgb_batch};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::manifest::{DatasetManifest, ImageSource};

/// Desk-scale training protocol. Only the optimizer and learning rate follow
/// the reference protocol; epochs and input size are local choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub resolution: usize,
    /// Output channels of the three conv blocks.
    pub channels: [usize; 3],
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { epochs: 60, batch_size: 16, learning_rate: 1e-3, resolution: 32, channels: [8, 16, 32] }
    }
}

impl ClassifierConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.resolution < 8 {
            return Err(Error::argument("classifier epochs, batch_size must be >= 1 and resolution >= 8"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::argument("classifier learning_rate must be positive"));
        }
        Ok(())
    }
}

/// Three conv(3×3) → batch norm → ReLU → 2×2 average-pool blocks, global
/// average pooling, linear head. Batch norm uses batch statistics while
/// training and the running averages from training at prediction time.
pub struct Classifier {
    cfg: ClassifierConfig,
    params: Vec<Var>,
    /// Per block: running mean and variance, shape `(1, C, 1, 1)`.
    running: Vec<(Tensor, Tensor)>,
    classes: usize,
}

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Result<Var> {
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| rng.gen_range(-bound..bound) as f32).collect();
    Ok(Var::from_tensor(&Tensor::from_vec(data, shape, &Device::Cpu)?)?)
}

fn channel_stats(h: &Tensor) -> Result<(Tensor, Tensor)> {
    let mean = h.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;
    let var = h.broadcast_sub(&mean)?.sqr()?.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;
    Ok((mean, var))
}

impl Classifier {
    fn init(cfg: &ClassifierConfig, classes: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut running = Vec::new();
        let mut cin = 3;
        for &c in &cfg.channels {
            params.push(uniform(&mut rng, &[c, cin, 3, 3], (6.0 / (cin * 9) as f64).sqrt())?);
            params.push(Var::zeros(c, DType::F32, &Device::Cpu)?);
            params.push(Var::ones((1, c, 1, 1), DType::F32, &Device::Cpu)?);
            params.push(Var::zeros((1, c, 1, 1), DType::F32, &Device::Cpu)?);
            running.push((Tensor::zeros((1, c, 1, 1), DType::F32, &Device::Cpu)?, Tensor::ones((1, c, 1, 1), DType::F32, &Device::Cpu)?));
            cin = c;
        }
        params.push(uniform(&mut rng, &[classes, cin], 1.0 / (cin as f64).sqrt())?);
        params.push(Var::zeros(classes, DType::F32, &Device::Cpu)?);
        Ok(Self { cfg: cfg.clone(), params, running, classes })
    }

    /// Logits; with `batch_stats` the block statistics of this batch are used
    /// and pushed there (detached) for the running averages.
    fn forward(&self, x: &Tensor, mut batch_stats: Option<&mut Vec<(Tensor, Tensor)>>) -> Result<Tensor> {
        let mut h = (x - 0.5)?;
        for i in 0..3 {
            let p = &self.params[4 * i..4 * i + 4];
            h = conv2d(&h, p[0].as_tensor(), p[1].as_tensor(), 1)?;
            let (mean, var) = match batch_stats.as_deref_mut() {
                Some(stats) => {
                    let (m, v) = channel_stats(&h)?;
                    stats.push((m.detach(), v.detach()));
                    (m, v)
                }
                None => self.running[i].clone(),
            };
            h = h.broadcast_sub(&mean)?.broadcast_div(&(var + BN_EPS)?.sqrt()?)?;
            h = h.broadcast_mul(p[2].as_tensor())?.broadcast_add(p[3].as_tensor())?.relu()?;
            h = h.avg_pool2d(2)?;
        }
        let pooled = h.mean(D::Minus1)?.mean(D::Minus1)?;
        let (w, b) = (self.params[12].as_tensor(), self.params[13].as_tensor());
        Ok(pooled.matmul(&w.t()?)?.broadcast_add(b)?)
    }

    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(x, None)
    }

    fn batch(&self, images: &[&RgbImage]) -> Result<Tensor> {
        let r = self.cfg.resolution;
        let resized: Vec<RgbImage> = images.iter().map(|i| i.resized(r, r)).collect();
        rgb_batch(&resized.iter().collect::<Vec<_>>(), DType::F32)
    }

    /// Trains from scratch on `(image, class)` pairs.
    pub fn train(images: &[RgbImage], labels: &[usize], classes: usize, cfg: &ClassifierConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if images.is_empty() || images.len() != labels.len() {
            return Err(Error::argument("classifier needs one label per image and at least one image"));
        }
        if classes < 2 || labels.iter().any(|&l| l >= classes) {
            return Err(Error::argument("labels must index at least two classes"));
        }
        let mut model = Self::init(cfg, classes, seed)?;
        let mut opt = AdamW::new(
            model.params.clone(),
            ParamsAdamW { lr: cfg.learning_rate, weight_decay: 0.0, ..Default::default() },
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc1a5_51f1);
        let mut order: Vec<usize> = (0..images.len()).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size) {
                let x = model.batch(&chunk.iter().map(|&i| &images[i]).collect::<Vec<_>>())?;
                let y = Tensor::from_vec(chunk.iter().map(|&i| labels[i] as u32).collect::<Vec<_>>(), chunk.len(), &Device::Cpu)?;
                let mut stats = Vec::with_capacity(3);
                let loss = candle_nn::loss::cross_entropy(&model.forward(&x, Some(&mut stats))?, &y)?;
                opt.backward_step(&loss)?;
                for ((rm, rv), (m, v)) in model.running.iter_mut().zip(stats) {
                    *rm = ((&*rm * (1.0 - BN_MOMENTUM))? + (m * BN_MOMENTUM)?)?;
                    *rv = ((&*rv * (1.0 - BN_MOMENTUM))? + (v * BN_MOMENTUM)?)?;
                }
            }
        }
        Ok(model)
    }

    pub fn predict(&self, images: &[RgbImage]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            let logits = self.logits(&self.batch(&chunk.iter().collect::<Vec<_>>())?)?;
            out.extend(logits.argmax(D::Minus1)?.to_vec1::<u32>()?.into_iter().map(|c| c as usize));
        }
        Ok(out)
    }

    pub fn accuracy(&self, images: &[RgbImage], labels: &[usize]) -> Result<f64> {
        if images.is_empty() || images.len() != labels.len() {
            return Err(Error::argument("accuracy needs one label per image"));
        }
        let pred = self.predict(images)?;
        Ok(pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub mean_accuracy: f64,
    /// Sample standard deviation over seeds (0 for a single seed).
    pub std: f64,
    pub accuracies: Vec<f64>,
    pub seeds: Vec<u64>,
}

/// Trains one classifier per seed on `train` and reports test accuracy statistics.
pub fn benchmark_on_images(
    train: &[RgbImage],
    train_labels: &[usize],
    test: &[RgbImage],
    test_labels: &[usize],
    classes: usize,
    seeds: &[u64],
    cfg: &ClassifierConfig,
) -> Result<BenchmarkReport> {
    if seeds.is_empty() {
        return Err(Error::argument("benchmark needs at least one seed"));
    }
    let accuracies = seeds
        .iter()
        .map(|&s| Classifier::train(train, train_labels, classes, cfg, s)?.accuracy(test, test_labels))
        .collect::<Result<Vec<_>>>()?;
    let n = accuracies.len() as f64;
    let mean = accuracies.iter().sum::<f64>() / n;
    let std = if accuracies.len() > 1 {
        (accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(BenchmarkReport { mean_accuracy: mean, std, accuracies, seeds: seeds.to_vec() })
}

/// Class indices for the labels of two manifests, over their sorted label union.
pub fn class_indices(train: &DatasetManifest, test: &DatasetManifest) -> Result<(Vec<usize>, Vec<usize>, Vec<String>)> {
    let label_of = |m: &DatasetManifest| -> Result<Vec<String>> {
        m.entries()
            .iter()
            .map(|e| e.label.clone().ok_or_else(|| Error::argument(format!("entry {} has no label", e.id))))
            .collect()
    };
    let (a, b) = (label_of(train)?, label_of(test)?);
    let names: Vec<String> = a.iter().chain(&b).cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let index = |v: &[String]| v.iter().map(|l| names.iter().position(|n| n == l).expect("label present")).collect();
    Ok((index(&a), index(&b), names))
}

pub fn run_downstream_benchmark(
    train: &DatasetManifest,
    train_images: &dyn ImageSource,
    test: &DatasetManifest,
    test_images: &dyn ImageSource,
    seeds: &[u64],
    cfg: &ClassifierConfig,
) -> Result<BenchmarkReport> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::argument("benchmark needs non-empty train and test manifests"));
    }
    let (ytr, yte, names) = class_indices(train, test)?;
    let load = |m: &DatasetManifest, s: &dyn ImageSource| m.entries().iter().map(|e| s.load(e)).collect::<Result<Vec<_>>>();
    let classes = names.len().max(2);
    benchmark_on_images(&load(train, train_images)?, &ytr, &load(test, test_images)?, &yte, classes, seeds, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::{ManifestEntry, Split};

    /// Class 0: dark left half; class 1: dark right half.
    fn toy(n: usize, seed: u64) -> (Vec<RgbImage>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let c = i % 2;
                let base: f64 = rng.gen_range(0.5..0.9);
                let img = RgbImage::from_fn(16, 16, |_, x| if (x < 8) == (c == 0) { [0.1; 3] } else { [base; 3] });
                (img, c)
            })
            .unzip()
    }

    fn quick() -> ClassifierConfig {
        ClassifierConfig { epochs: 30, batch_size: 8, resolution: 16, ..Default::default() }
    }

    #[test]
    fn memorizes_separable_data() {
        let (x, y) = toy(40, 1);
        let r = benchmark_on_images(&x, &y, &x, &y, 2, &[0, 1], &quick()).unwrap();
        assert!(r.mean_accuracy >= 0.95, "{r:?}");
    }

    #[test]
    fn shuffled_labels_give_chance() {
        // labels independent of the pixels on both sides: expected accuracy is exactly one half
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (x, _) = toy(160, 2);
        let (xt, _) = toy(200, 4);
        let y: Vec<usize> = (0..x.len()).map(|_| rng.gen_range(0..2)).collect();
        let yt: Vec<usize> = (0..xt.len()).map(|_| rng.gen_range(0..2)).collect();
        let r = benchmark_on_images(&x, &y, &xt, &yt, 2, &[0, 1, 2], &quick()).unwrap();
        assert!((r.mean_accuracy - 0.5).abs() <= 0.1, "{r:?}");
    }

    #[test]
    fn deterministic_per_seed() {
        let (x, y) = toy(20, 5);
        let cfg = ClassifierConfig { epochs: 2, ..quick() };
        let a = benchmark_on_images(&x, &y, &x, &y, 2, &[7], &cfg).unwrap();
        let b = benchmark_on_images(&x, &y, &x, &y, 2, &[7], &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_labels_rejected() {
        let m = DatasetManifest::new(vec![ManifestEntry::new("a", "a.png", None, Split::Train)]).unwrap();
        assert!(matches!(class_indices(&m, &m), Err(Error::Argument(_))));
    }
}
