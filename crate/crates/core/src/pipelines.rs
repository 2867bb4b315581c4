//! Colour transfer, entry editing, dataset augmentation and normalization.
//!
//! Every output is `P ∘ f`: the synthesizer's proposal blended with the
//! original through the rejection weights (unless post-processing is disabled).
//! Each output image draws its decolourization coefficients from its own
//! ChaCha stream, so results do not depend on processing order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{encode, ModelSnapshot};
use crate::decolour::{DecolourCoefficients, DecolourMode};
use crate::embedding::{ColourEmbedding, EMBEDDING_DIM};
use crate::error::{Error, Result};
use crate::image::{save_image, RgbImage};
use crate::latent::{EmbeddingSet, SamplerKind};
use crate::manifest::{DatasetManifest, ImageSource, ManifestEntry};
use crate::postprocess::{corrected_manipulation, PostConfig, PostSettings};

/// Provenance marker for embeddings that were not copied from a single image.
pub const SAMPLED: &str = "sampled";

/// The RNG for output `stream` of a run seeded with `seed`.
pub fn output_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Decolourization coefficients matching how `model` was trained; `epsilon`
/// overrides the training slack for randomized models.
pub fn coefficients_for(model: &ModelSnapshot, epsilon: Option<f64>, rng: &mut dyn RngCore) -> Result<DecolourCoefficients> {
    match (model.decolour_mode(), epsilon) {
        (DecolourMode::Randomized { .. }, Some(eps)) => DecolourCoefficients::sample_with(rng, eps),
        (mode, _) => mode.coefficients(rng),
    }
}

/// Mean of the embeddings the model saw during training.
pub fn training_mean(model: &ModelSnapshot) -> Result<ColourEmbedding> {
    ColourEmbedding::new(model.embedding_stats().mean.clone())
}

/// Re-colours `structure` with the colour of `colour`.
pub fn transfer_colour(
    model: &ModelSnapshot,
    structure: &RgbImage,
    colour: &RgbImage,
    settings: &PostSettings,
    seed: u64,
) -> Result<RgbImage> {
    let e_prime = encode(model, colour)?;
    let coeffs = coefficients_for(model, None, &mut output_rng(seed, 0))?;
    corrected_manipulation(model, structure, &coeffs, &e_prime, settings)
}

/// Overwrites the listed embedding entries of `image` and re-synthesizes.
pub fn edit_entries(
    model: &ModelSnapshot,
    image: &RgbImage,
    edits: &BTreeMap<usize, f64>,
    settings: &PostSettings,
    seed: u64,
) -> Result<RgbImage> {
    if let Some(&bad) = edits.keys().find(|&&k| k >= EMBEDDING_DIM) {
        return Err(Error::argument(format!("entry index {bad} out of range [0,{EMBEDDING_DIM})")));
    }
    let mut e = encode(model, image)?;
    for (&k, &v) in edits {
        e = e.with_entry(k, v)?;
    }
    let coeffs = coefficients_for(model, None, &mut output_rng(seed, 0))?;
    corrected_manipulation(model, image, &coeffs, &e, settings)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    pub samples_per_image: usize,
    pub sampler: SamplerKind,
    pub seed: u64,
    pub post: PostConfig,
    /// Decolourization slack; `None` uses the model's training value.
    pub epsilon: Option<f64>,
    /// Keep the source entries alongside the augmented ones.
    pub union_with_source: bool,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            samples_per_image: 1,
            sampler: SamplerKind::Reuse,
            seed: 0,
            post: PostConfig::default(),
            epsilon: None,
            union_with_source: false,
        }
    }
}

/// A generated image with its manifest entry.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedImage {
    pub entry: ManifestEntry,
    pub image: RgbImage,
}

/// Augmentation in memory: each source image is re-coloured
/// `k` times with embeddings drawn from `target`. Source labels are carried
/// over; target labels are never consulted.
pub fn augment_images(
    model: &ModelSnapshot,
    sources: &[(ManifestEntry, RgbImage)],
    target: &EmbeddingSet,
    cfg: &AugmentationConfig,
) -> Result<Vec<GeneratedImage>> {
    if sources.is_empty() {
        return Err(Error::argument("augmentation needs at least one source image"));
    }
    if target.is_empty() {
        return Err(Error::argument("augmentation needs at least one target embedding"));
    }
    if cfg.samples_per_image < 1 {
        return Err(Error::argument("samples_per_image must be at least 1"));
    }
    let settings = PostSettings::from_config(&cfg.post)?;
    let sampler = cfg.sampler.sampler();
    let k = cfg.samples_per_image;
    let mut out = Vec::with_capacity(sources.len() * k);
    for (i, (entry, image)) in sources.iter().enumerate() {
        for j in 0..k {
            let mut rng = output_rng(cfg.seed, (i * k + j) as u64);
            let draw = sampler.sample(target, &mut rng)?;
            let coeffs = coefficients_for(model, cfg.epsilon, &mut rng)?;
            let image = corrected_manipulation(model, image, &coeffs, &draw.embedding, &settings)?;
            let id = format!("{}-aug{j}", entry.id);
            let mut e = ManifestEntry::new(id.clone(), format!("{id}.png"), entry.label.clone(), entry.split);
            e.source_id = Some(entry.id.clone());
            e.sample_index = Some(j);
            e.embedding_source_id = Some(match draw.member {
                Some(m) => target.source_ids()[m].clone(),
                None => SAMPLED.to_string(),
            });
            out.push(GeneratedImage { entry: e, image });
        }
    }
    Ok(out)
}

fn load_pairs(manifest: &DatasetManifest, source: &dyn ImageSource) -> Result<Vec<(ManifestEntry, RgbImage)>> {
    manifest.entries().iter().map(|e| Ok((e.clone(), source.load(e)?))).collect()
}

fn write_generated(out_dir: &Path, generated: &[GeneratedImage], extra: Vec<ManifestEntry>) -> Result<DatasetManifest> {
    fs::create_dir_all(out_dir)?;
    for g in generated {
        save_image(&g.image, out_dir.join(&g.entry.image_path))?;
    }
    let mut entries = extra;
    entries.extend(generated.iter().map(|g| g.entry.clone()));
    let manifest = DatasetManifest::new(entries)?;
    manifest.save(out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

/// Augments a manifest on disk. Images and `manifest.jsonl` go to `out_dir`;
/// with `union_with_source` the originals are copied there too.
pub fn augment_dataset(
    model: &ModelSnapshot,
    source: &DatasetManifest,
    images: &dyn ImageSource,
    target: &EmbeddingSet,
    cfg: &AugmentationConfig,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    let pairs = load_pairs(source, images)?;
    let generated = augment_images(model, &pairs, target, cfg)?;
    let mut originals = Vec::new();
    if cfg.union_with_source {
        fs::create_dir_all(out_dir)?;
        for (entry, image) in &pairs {
            let mut e = entry.clone();
            e.image_path = format!("{}.png", e.id);
            save_image(image, out_dir.join(&e.image_path))?;
            originals.push(e);
        }
    }
    write_generated(out_dir, &generated, originals)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizationConfig {
    pub seed: u64,
    pub post: PostConfig,
    pub epsilon: Option<f64>,
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        Self { seed: 0, post: PostConfig::default(), epsilon: None }
    }
}

/// Normalization in memory: every image is re-coloured with `e_bar`.
pub fn normalize_images(
    model: &ModelSnapshot,
    data: &[(ManifestEntry, RgbImage)],
    e_bar: &ColourEmbedding,
    cfg: &NormalizationConfig,
) -> Result<Vec<GeneratedImage>> {
    if data.is_empty() {
        return Err(Error::argument("nothing to normalize"));
    }
    let settings = PostSettings::from_config(&cfg.post)?;
    data.iter()
        .enumerate()
        .map(|(i, (entry, image))| {
            let coeffs = coefficients_for(model, cfg.epsilon, &mut output_rng(cfg.seed, i as u64))?;
            let image = corrected_manipulation(model, image, &coeffs, e_bar, &settings)?;
            let mut e = ManifestEntry::new(entry.id.clone(), format!("{}.png", entry.id), entry.label.clone(), entry.split);
            e.source_id = Some(entry.id.clone());
            e.embedding_source_id = Some(SAMPLED.to_string());
            Ok(GeneratedImage { entry: e, image })
        })
        .collect()
}

pub fn normalize_dataset(
    model: &ModelSnapshot,
    data: &DatasetManifest,
    images: &dyn ImageSource,
    e_bar: &ColourEmbedding,
    cfg: &NormalizationConfig,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    if data.is_empty() {
        return Err(Error::argument("nothing to normalize"));
    }
    let generated = normalize_images(model, &load_pairs(data, images)?, e_bar, cfg)?;
    write_generated(out_dir.as_ref(), &generated, Vec::new())
}
