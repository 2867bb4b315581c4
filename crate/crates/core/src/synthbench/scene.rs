//! Procedural skin scenes with exactly known colour factors and masks.
//!
//! Rendering order: a grey base field (`base_tone` modulated by zero-mean
//! low-frequency texture), then the lesion, then markers, then a global
//! per-channel tint multiplication, then clamping.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RgbImage;

/// Lesion boundary jitter above which a lesion is labelled malignant.
pub const MALIGNANT_IRREGULARITY: f64 = 0.12;

/// Relative amplitude of the base texture.
const TEXTURE_AMPLITUDE: f64 = 0.06;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Benign,
    Malignant,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Benign => "benign",
            Label::Malignant => "malignant",
        }
    }

    pub fn parse(s: &str) -> Option<Label> {
        match s {
            "benign" => Some(Label::Benign),
            "malignant" => Some(Label::Malignant),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lesion {
    /// Centre as fractions of (height, width).
    pub center: [f64; 2],
    /// Mean radius as a fraction of the image side.
    pub radius: f64,
    /// Relative per-channel change of the base field inside the lesion
    /// (`v·(1 + offset)`), so lesion contrast scales with skin tone.
    pub colour_offset: [f64; 3],
    /// Relative amplitude of the boundary's radial jitter.
    pub irregularity: f64,
    pub lobes: u32,
    pub phase: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarkerShape {
    Disc,
    Stroke,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marker {
    pub shape: MarkerShape,
    /// Centre as fractions of (height, width).
    pub position: [f64; 2],
    /// Disc radius, or stroke half-length, as a fraction of the image side.
    pub size: f64,
    /// Stroke direction in radians (ignored for discs).
    #[serde(default)]
    pub angle: f64,
    pub colour: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub base_tone: f64,
    pub tint: [f64; 3],
    pub lesion: Option<Lesion>,
    pub markers: Vec<Marker>,
    pub texture_seed: u64,
}

impl SceneSpec {
    /// A plain patch of skin: no lesion, no markers.
    pub fn plain(base_tone: f64, tint: [f64; 3], texture_seed: u64) -> Self {
        Self { base_tone, tint, lesion: None, markers: Vec::new(), texture_seed }
    }

    /// Malignant iff the lesion boundary is irregular; independent of tone and tint.
    pub fn label(&self) -> Label {
        match &self.lesion {
            Some(l) if l.irregularity > MALIGNANT_IRREGULARITY => Label::Malignant,
            _ => Label::Benign,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.base_tone) {
            return Err(Error::argument(format!("base_tone {} outside [0,1]", self.base_tone)));
        }
        if self.tint.iter().any(|t| !(0.5..=1.5).contains(t)) {
            return Err(Error::argument(format!("tint {:?} outside [0.5,1.5]", self.tint)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneRender {
    pub image: RgbImage,
    pub marker_mask: Vec<bool>,
    pub lesion_mask: Vec<bool>,
    pub spec: SceneSpec,
}

impl SceneRender {
    pub fn marker_pixel_count(&self) -> usize {
        self.marker_mask.iter().filter(|&&m| m).count()
    }
}

struct Wave {
    fy: f64,
    fx: f64,
    phase: f64,
    weight: f64,
}

/// Integer spatial frequencies over the image period, so every component
/// averages to exactly zero over the full grid.
fn texture_waves(seed: u64) -> Vec<Wave> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..4)
        .map(|_| {
            let (fy, fx) = loop {
                let fy = rng.gen_range(-3i32..=3);
                let fx = rng.gen_range(0i32..=3);
                if fy != 0 || fx != 0 {
                    break (f64::from(fy), f64::from(fx));
                }
            };
            Wave { fy, fx, phase: rng.gen_range(0.0..TAU), weight: rng.gen_range(0.5..1.0) }
        })
        .collect()
}

fn in_lesion(l: &Lesion, py: f64, px: f64) -> bool {
    let dy = py - l.center[0];
    let dx = px - l.center[1];
    let r = (dy * dy + dx * dx).sqrt();
    let theta = dy.atan2(dx);
    let boundary = l.radius * (1.0 + l.irregularity * (f64::from(l.lobes) * theta + l.phase).sin());
    r <= boundary
}

fn in_marker(m: &Marker, py: f64, px: f64, side: f64) -> bool {
    let dy = py - m.position[0];
    let dx = px - m.position[1];
    match m.shape {
        MarkerShape::Disc => dy * dy + dx * dx <= m.size * m.size,
        MarkerShape::Stroke => {
            let (s, c) = m.angle.sin_cos();
            let along = dy * s + dx * c;
            let across = -dy * c + dx * s;
            // Strokes are about two pixels wide at any resolution.
            along.abs() <= m.size && across.abs() <= 1.0 / side
        }
    }
}

/// Renders a scene at `resolution × resolution`.
pub fn generate_scene(spec: &SceneSpec, resolution: usize) -> Result<SceneRender> {
    spec.validate()?;
    if resolution == 0 {
        return Err(Error::argument("resolution must be positive"));
    }
    let n = resolution;
    let side = n as f64;
    let waves = texture_waves(spec.texture_seed);
    let wsum: f64 = waves.iter().map(|w| w.weight).sum();
    let mut data = Vec::with_capacity(n * n * 3);
    let mut marker_mask = vec![false; n * n];
    let mut lesion_mask = vec![false; n * n];
    for y in 0..n {
        for x in 0..n {
            let noise: f64 = waves
                .iter()
                .map(|w| w.weight * (TAU * (w.fy * y as f64 + w.fx * x as f64) / side + w.phase).cos())
                .sum::<f64>()
                / wsum;
            let v = spec.base_tone * (1.0 + TEXTURE_AMPLITUDE * noise);
            let mut rgb = [v; 3];
            // Sample geometry at pixel centres in unit coordinates.
            let (py, px) = ((y as f64 + 0.5) / side, (x as f64 + 0.5) / side);
            let i = y * n + x;
            if let Some(l) = &spec.lesion {
                if in_lesion(l, py, px) {
                    rgb = std::array::from_fn(|c| v * (1.0 + l.colour_offset[c]));
                    lesion_mask[i] = true;
                }
            }
            for m in &spec.markers {
                if in_marker(m, py, px, side) {
                    rgb = m.colour;
                    marker_mask[i] = true;
                    lesion_mask[i] = false;
                }
            }
            data.extend((0..3).map(|c| rgb[c] * spec.tint[c]));
        }
    }
    let image = RgbImage::from_clamped(n, n, data)?;
    Ok(SceneRender { image, marker_mask, lesion_mask, spec: spec.clone() })
}
