use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::{generate_scene, Label, Lesion, Marker, MarkerShape, SceneRender, SceneSpec};
use crate::error::{Error, Result};
use crate::image::save_image;
use crate::manifest::{DatasetManifest, ManifestEntry, Split};

/// A distribution over scene specifications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDomain {
    pub name: String,
    pub base_tone: (f64, f64),
    pub tint_low: [f64; 3],
    pub tint_high: [f64; 3],
    /// Inclusive range of markers per scene.
    pub markers: (usize, usize),
    pub marker_palette: Vec<[f64; 3]>,
}

/// Saturated cyan inks: a hue no skin tone or tint in either domain produces.
pub const INK_PALETTE: [[f64; 3]; 3] = [[0.0, 1.0, 1.0], [0.0, 0.9, 0.9], [0.05, 0.95, 1.0]];

impl SceneDomain {
    /// Light skin under warm illumination.
    pub fn light() -> Self {
        Self {
            name: "light".into(),
            base_tone: (0.55, 0.9),
            tint_low: [1.05, 0.95, 0.7],
            tint_high: [1.3, 1.05, 0.9],
            markers: (0, 2),
            marker_palette: INK_PALETTE.to_vec(),
        }
    }

    /// Dark skin under cool illumination.
    pub fn dark() -> Self {
        Self {
            name: "dark".into(),
            base_tone: (0.1, 0.45),
            tint_low: [0.75, 0.95, 1.05],
            tint_high: [0.95, 1.05, 1.3],
            markers: (0, 2),
            marker_palette: INK_PALETTE.to_vec(),
        }
    }

    pub fn with_markers(mut self, min: usize, max: usize) -> Self {
        self.markers = (min, max);
        self
    }

    pub fn sample_lesion<R: Rng + ?Sized>(rng: &mut R, label: Label) -> Lesion {
        let irregularity = match label {
            Label::Benign => rng.gen_range(0.0..0.04),
            Label::Malignant => rng.gen_range(0.2..0.3),
        };
        Lesion {
            center: [rng.gen_range(0.38..0.62), rng.gen_range(0.38..0.62)],
            radius: rng.gen_range(0.16..0.24),
            colour_offset: [rng.gen_range(-0.35..-0.2), rng.gen_range(-0.55..-0.4), rng.gen_range(-0.55..-0.4)],
            irregularity,
            lobes: rng.gen_range(4..=7),
            phase: rng.gen_range(0.0..std::f64::consts::TAU),
        }
    }

    pub fn sample_marker<R: Rng + ?Sized>(&self, rng: &mut R) -> Marker {
        let shape = if rng.gen_bool(0.5) { MarkerShape::Disc } else { MarkerShape::Stroke };
        let size = match shape {
            MarkerShape::Disc => rng.gen_range(0.05..0.08),
            MarkerShape::Stroke => rng.gen_range(0.1..0.2),
        };
        // Keep markers in the outer band so they rarely cover the lesion.
        let edge = |rng: &mut R| if rng.gen_bool(0.5) { rng.gen_range(0.1..0.25) } else { rng.gen_range(0.75..0.9) };
        let position = if rng.gen_bool(0.5) { [edge(rng), rng.gen_range(0.1..0.9)] } else { [rng.gen_range(0.1..0.9), edge(rng)] };
        Marker {
            shape,
            position,
            size,
            angle: rng.gen_range(0.0..std::f64::consts::PI),
            colour: self.marker_palette[rng.gen_range(0..self.marker_palette.len())],
        }
    }

    /// Draws a scene with the requested label.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, label: Label) -> SceneSpec {
        let base_tone = rng.gen_range(self.base_tone.0..=self.base_tone.1);
        let tint = std::array::from_fn(|c| rng.gen_range(self.tint_low[c]..=self.tint_high[c]));
        let lesion = Some(Self::sample_lesion(rng, label));
        let count = rng.gen_range(self.markers.0..=self.markers.1);
        let markers = (0..count).map(|_| self.sample_marker(rng)).collect();
        SceneSpec { base_tone, tint, lesion, markers, texture_seed: rng.gen() }
    }
}

/// Generates `n` scenes with alternating labels. Entries are named
/// `{prefix}-{index}` with image paths `{prefix}-{index}.png`.
pub fn generate_corpus(
    n: usize,
    domain: &SceneDomain,
    seed: u64,
    resolution: usize,
    prefix: &str,
    split: Split,
) -> Result<(DatasetManifest, Vec<SceneRender>)> {
    if n < 1 {
        return Err(Error::argument("corpus size must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(n);
    let mut renders = Vec::with_capacity(n);
    for i in 0..n {
        let label = if i % 2 == 0 { Label::Benign } else { Label::Malignant };
        let spec = domain.sample(&mut rng, label);
        debug_assert_eq!(spec.label(), label);
        let id = format!("{prefix}-{i:05}");
        entries.push(ManifestEntry::new(id.clone(), format!("{id}.png"), Some(label.as_str().to_string()), split));
        renders.push(generate_scene(&spec, resolution)?);
    }
    Ok((DatasetManifest::new(entries)?, renders))
}

/// Writes PNGs, `manifest.jsonl` and `scenes.jsonl` into `dir`.
pub fn write_corpus(dir: impl AsRef<Path>, manifest: &DatasetManifest, renders: &[SceneRender]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut scenes = fs::File::create(dir.join("scenes.jsonl"))?;
    for (entry, render) in manifest.entries().iter().zip(renders) {
        save_image(&render.image, dir.join(&entry.image_path))?;
        serde_json::to_writer(&mut scenes, &serde_json::json!({ "id": entry.id, "spec": render.spec }))?;
        scenes.write_all(b"\n")?;
    }
    manifest.save(dir.join("manifest.jsonl"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_labels_and_deterministic() {
        let (m, r) = generate_corpus(100, &SceneDomain::light(), 4, 16, "l", Split::Train).unwrap();
        assert_eq!(m.len(), 100);
        let malignant = m.entries().iter().filter(|e| e.label.as_deref() == Some("malignant")).count();
        assert_eq!(malignant, 50);
        let (m2, r2) = generate_corpus(100, &SceneDomain::light(), 4, 16, "l", Split::Train).unwrap();
        assert_eq!(m, m2);
        assert_eq!(r, r2);
    }

    #[test]
    fn domains_differ_in_luminance() {
        let mean_lum = |d: &SceneDomain| {
            let (_, r) = generate_corpus(40, d, 1, 32, "x", Split::Train).unwrap();
            r.iter().map(|s| s.image.mean_luminance()).sum::<f64>() / r.len() as f64
        };
        let (light, dark) = (mean_lum(&SceneDomain::light()), mean_lum(&SceneDomain::dark()));
        assert!(light - dark >= 0.2, "light {light} dark {dark}");
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(generate_corpus(0, &SceneDomain::dark(), 0, 8, "d", Split::Test).is_err());
    }
}
