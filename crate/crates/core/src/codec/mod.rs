//! Colour encoder, colour synthesizer and their rate-penalized training.

mod network;
mod snapshot;
mod train;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::decolour::DecolourMode;
use crate::embedding::{ColourEmbedding, EMBEDDING_DIM};
use crate::error::{Error, Result};
use crate::image::{ColourlessImage, RgbImage};

pub use network::ModelConfig;
pub use snapshot::{EmbeddingStats, ModelSnapshot, MODEL_VERSION};
pub use train::{reconstruction_l1, train, train_on_images, EpochRecord, TrainingReport};

pub use train::{gradient_check, GradientSample};

pub(crate) use network::conv2d;

const INFERENCE_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHyperparams {
    pub lambda_bpp_g: f64,
    pub lambda_diver: f64,
    pub lambda_color: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub resolution: usize,
    pub seed: u64,
    #[serde(default)]
    pub decolour: DecolourMode,
    #[serde(default)]
    pub architecture: ModelConfig,
}

impl Default for TrainingHyperparams {
    fn default() -> Self {
        Self {
            lambda_bpp_g: 0.003,
            lambda_diver: 0.05,
            lambda_color: 0.1,
            epochs: 10,
            learning_rate: 1e-3,
            batch_size: 16,
            resolution: 64,
            seed: 0,
            decolour: DecolourMode::default(),
            architecture: ModelConfig::default(),
        }
    }
}

impl TrainingHyperparams {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [self.lambda_bpp_g, self.lambda_diver, self.lambda_color];
        if lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::argument("loss weights must be finite and nonnegative"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::argument("epochs and batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::argument("learning_rate must be positive"));
        }
        if self.resolution < 4 {
            return Err(Error::argument("resolution must be at least 4"));
        }
        if let DecolourMode::Randomized { epsilon } = self.decolour {
            if !(epsilon >= 0.0) {
                return Err(Error::argument("decolourization epsilon must be nonnegative"));
            }
        }
        Ok(())
    }
}

pub(crate) fn rgb_batch(images: &[&RgbImage], dtype: DType) -> Result<Tensor> {
    let (h, w) = images[0].shape();
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if img.shape() != (h, w) {
            return Err(Error::shape("images in a batch must share dimensions"));
        }
        let px = img.data();
        for c in 0..3 {
            data.extend((0..h * w).map(|i| px[i * 3 + c] as f32));
        }
    }
    Ok(Tensor::from_vec(data, (images.len(), 3, h, w), &Device::Cpu)?.to_dtype(dtype)?)
}

pub(crate) fn grey_batch(images: &[&ColourlessImage], dtype: DType) -> Result<Tensor> {
    let (h, w) = images[0].shape();
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if img.shape() != (h, w) {
            return Err(Error::shape("colourless images in a batch must share dimensions"));
        }
        data.extend(img.data().iter().map(|&v| v as f32));
    }
    Ok(Tensor::from_vec(data, (images.len(), 1, h, w), &Device::Cpu)?.to_dtype(dtype)?)
}

pub(crate) fn embedding_batch(embeddings: &[&ColourEmbedding], dtype: DType) -> Result<Tensor> {
    let data: Vec<f32> = embeddings.iter().flat_map(|e| e.values().iter().map(|&v| v as f32)).collect();
    Ok(Tensor::from_vec(data, (embeddings.len(), EMBEDDING_DIM), &Device::Cpu)?.to_dtype(dtype)?)
}

fn tensor_to_images(t: &Tensor) -> Result<Vec<RgbImage>> {
    let (b, c, h, w) = t.dims4()?;
    debug_assert_eq!(c, 3);
    let flat: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    let plane = h * w;
    (0..b)
        .map(|n| {
            let base = n * 3 * plane;
            let mut data = Vec::with_capacity(3 * plane);
            for i in 0..plane {
                for ch in 0..3 {
                    data.push(f64::from(flat[base + ch * plane + i]));
                }
            }
            RgbImage::from_clamped(h, w, data)
        })
        .collect()
}

/// Encodes one image; the image is resized to the model resolution first.
pub fn encode(model: &ModelSnapshot, image: &RgbImage) -> Result<ColourEmbedding> {
    Ok(encode_batch(model, std::slice::from_ref(image))?.pop().expect("one embedding per image"))
}

pub fn encode_batch(model: &ModelSnapshot, images: &[RgbImage]) -> Result<Vec<ColourEmbedding>> {
    let res = model.resolution();
    let resized: Vec<RgbImage> = images.iter().map(|i| i.resized(res, res)).collect();
    let mut out = Vec::with_capacity(images.len());
    for chunk in resized.chunks(INFERENCE_CHUNK) {
        let refs: Vec<&RgbImage> = chunk.iter().collect();
        let e = model.network().encode(&rgb_batch(&refs, DType::F32)?)?;
        for row in e.to_vec2::<f32>()? {
            out.push(ColourEmbedding::new(row.into_iter().map(f64::from).collect())?);
        }
    }
    Ok(out)
}

/// Reconstructs a colour image from a colourless image and an embedding.
pub fn synthesize(model: &ModelSnapshot, colourless: &ColourlessImage, embedding: &ColourEmbedding) -> Result<RgbImage> {
    Ok(synthesize_batch(model, &[(colourless, embedding)])?.pop().expect("one output per input"))
}

pub fn synthesize_batch(model: &ModelSnapshot, inputs: &[(&ColourlessImage, &ColourEmbedding)]) -> Result<Vec<RgbImage>> {
    let mut out = Vec::with_capacity(inputs.len());
    let mut start = 0;
    while start < inputs.len() {
        // Group consecutive inputs of equal size.
        let shape = inputs[start].0.shape();
        let end = (start..inputs.len())
            .take(INFERENCE_CHUNK)
            .take_while(|&i| inputs[i].0.shape() == shape)
            .last()
            .map_or(start + 1, |i| i + 1);
        let xs: Vec<&ColourlessImage> = inputs[start..end].iter().map(|p| p.0).collect();
        let es: Vec<&ColourEmbedding> = inputs[start..end].iter().map(|p| p.1).collect();
        let y = model
            .network()
            .synthesize(&grey_batch(&xs, DType::F32)?, &embedding_batch(&es, DType::F32)?)?;
        out.extend(tensor_to_images(&y)?);
        start = end;
    }
    Ok(out)
}

/// Bits needed to code each embedding entry under the learned factorized density.
pub fn entry_rates(model: &ModelSnapshot, embedding: &ColourEmbedding) -> Vec<f64> {
    let (loc, log_scale) = model.rate_parameters();
    embedding
        .values()
        .iter()
        .zip(loc.iter().zip(log_scale))
        .map(|(&v, (&m, &s))| network::entry_bits(v, m, s))
        .collect()
}

/// Total bits of an embedding: the sum of its per-entry bits.
pub fn estimate_rate(model: &ModelSnapshot, embedding: &ColourEmbedding) -> f64 {
    entry_rates(model, embedding).iter().sum()
}
