//! Randomized, mostly monotonic decolourization and the naive greyscale baseline.
//!
//! The randomized map is a convex-ish combination of monotone quadratic terms
//! in the RGB channels,
//!
//! ```text
//! g(c) = Σ_{i≤j} α_ij c_i c_j + Σ_{i≤j} β_ij (1 − (1 − c_i)(1 − c_j))
//! ```
//!
//! whose coefficients sum to one. Both term families vanish at black and equal
//! one at white, so `g(0) = 0` and `g(1) = 1` for every draw.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{clamp_unit, ColourlessImage, RgbImage};

/// Channel pairs `(i, j)` with `i ≤ j`, in coefficient order.
pub const PAIRS: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

/// Default monotonicity slack.
pub const DEFAULT_EPSILON: f64 = 0.05;

/// ITU-R BT.601 luma weights.
pub const BT601: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecolourCoefficients {
    alpha: [f64; 6],
    beta: [f64; 6],
    epsilon: f64,
}

#[derive(Deserialize)]
struct RawCoefficients {
    alpha: [f64; 6],
    beta: [f64; 6],
    epsilon: f64,
}

impl<'de> Deserialize<'de> for DecolourCoefficients {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawCoefficients::deserialize(d)?;
        DecolourCoefficients::new(raw.alpha, raw.beta, raw.epsilon).map_err(serde::de::Error::custom)
    }
}

impl DecolourCoefficients {
    pub fn new(alpha: [f64; 6], beta: [f64; 6], epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return Err(Error::argument(format!("epsilon must be nonnegative, got {epsilon}")));
        }
        let all = alpha.iter().chain(&beta);
        if let Some(c) = all.clone().find(|c| !c.is_finite() || **c < -epsilon - 1e-12) {
            return Err(Error::Validation(format!("coefficient {c} below -epsilon ({epsilon})")));
        }
        let sum: f64 = all.sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!("coefficients sum to {sum}, expected 1")));
        }
        Ok(Self { alpha, beta, epsilon })
    }

    /// All twelve coefficients equal to 1/12.
    pub fn uniform() -> Self {
        Self { alpha: [1.0 / 12.0; 6], beta: [1.0 / 12.0; 6], epsilon: 0.0 }
    }

    /// BT.601 luma written in this family: with `α_ii = β_ii = w_i / 2` the
    /// quadratic parts cancel and `g(c) = Σ w_i c_i`.
    pub fn bt601() -> Self {
        let half = BT601.map(|w| w / 2.0);
        let diag = [half[0], 0.0, 0.0, half[1], 0.0, half[2]];
        Self { alpha: diag, beta: diag, epsilon: 0.0 }
    }

    pub fn alpha(&self) -> &[f64; 6] {
        &self.alpha
    }

    pub fn beta(&self) -> &[f64; 6] {
        &self.beta
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// The twelve coefficients, alphas first.
    pub fn as_array(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        out[..6].copy_from_slice(&self.alpha);
        out[6..].copy_from_slice(&self.beta);
        out
    }

    /// Draws coefficients from the symmetric scheme: twelve unit exponentials
    /// normalized onto the simplex, then mapped `u ↦ (1 + 12ε)u − ε`.
    pub fn sample_with<R: Rng + ?Sized>(rng: &mut R, epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::argument(format!("epsilon must be a finite nonnegative real, got {epsilon}")));
        }
        let draws: [f64; 12] = std::array::from_fn(|_| rng.sample::<f64, _>(Exp1));
        let total: f64 = draws.iter().sum();
        let scale = 1.0 + 12.0 * epsilon;
        let mapped = draws.map(|d| scale * (d / total) - epsilon);
        let mut alpha = [0.0; 6];
        let mut beta = [0.0; 6];
        alpha.copy_from_slice(&mapped[..6]);
        beta.copy_from_slice(&mapped[6..]);
        Ok(Self { alpha, beta, epsilon })
    }

    /// Unclamped evaluation of the mapping at one RGB triple.
    #[inline]
    pub fn evaluate(&self, c: [f64; 3]) -> f64 {
        let mut v = 0.0;
        for (k, &(i, j)) in PAIRS.iter().enumerate() {
            v += self.alpha[k] * c[i] * c[j];
            v += self.beta[k] * (1.0 - (1.0 - c[i]) * (1.0 - c[j]));
        }
        v
    }
}

/// Deterministic coefficient draw from a seed.
pub fn sample_coefficients(seed: u64, epsilon: f64) -> Result<DecolourCoefficients> {
    DecolourCoefficients::sample_with(&mut ChaCha8Rng::seed_from_u64(seed), epsilon)
}

/// Applies the randomized mapping pixel-wise, clamping the result into `[0, 1]`.
pub fn apply_decolourization(image: &RgbImage, coeffs: &DecolourCoefficients) -> ColourlessImage {
    let data = image.pixels().map(|c| clamp_unit(coeffs.evaluate(c))).collect();
    ColourlessImage::new(image.height(), image.width(), data).expect("clamped values are in range")
}

/// BT.601 luma, the fixed greyscale conversion used as an ablation baseline.
pub fn naive_decolourize(image: &RgbImage) -> ColourlessImage {
    let data = image
        .pixels()
        .map(|c| clamp_unit(BT601[0] * c[0] + BT601[1] * c[1] + BT601[2] * c[2]))
        .collect();
    ColourlessImage::new(image.height(), image.width(), data).expect("clamped values are in range")
}

/// How colourless inputs are produced for the synthesizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecolourMode {
    Randomized { epsilon: f64 },
    NaiveGreyscale,
}

impl Default for DecolourMode {
    fn default() -> Self {
        DecolourMode::Randomized { epsilon: DEFAULT_EPSILON }
    }
}

impl DecolourMode {
    /// Coefficients for one decolourization: a fresh draw when randomized,
    /// the fixed BT.601 weights otherwise.
    pub fn coefficients<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DecolourCoefficients> {
        match *self {
            DecolourMode::Randomized { epsilon } => DecolourCoefficients::sample_with(rng, epsilon),
            DecolourMode::NaiveGreyscale => Ok(DecolourCoefficients::bt601()),
        }
    }

    /// Decolourizes `image`, drawing fresh coefficients from `rng` when randomized.
    pub fn apply<R: Rng + ?Sized>(&self, image: &RgbImage, rng: &mut R) -> Result<ColourlessImage> {
        match *self {
            DecolourMode::Randomized { epsilon } => {
                let coeffs = DecolourCoefficients::sample_with(rng, epsilon)?;
                Ok(apply_decolourization(image, &coeffs))
            }
            DecolourMode::NaiveGreyscale => Ok(naive_decolourize(image)),
        }
    }
}

/// Fraction of random ordered pairs `c ≤ c'` for which `g(c') < g(c) − 1e-9`,
/// measured over `draws` coefficient samples with `pairs` pairs each.
pub fn monotonicity_violation_rate(epsilon: f64, draws: usize, pairs: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0usize;
    for _ in 0..draws {
        let coeffs = DecolourCoefficients::sample_with(&mut rng, epsilon)?;
        for _ in 0..pairs {
            let lo: [f64; 3] = std::array::from_fn(|_| rng.gen::<f64>());
            let hi: [f64; 3] = std::array::from_fn(|i| lo[i] + rng.gen::<f64>() * (1.0 - lo[i]));
            if coeffs.evaluate(hi) < coeffs.evaluate(lo) - 1e-9 {
                violations += 1;
            }
        }
    }
    Ok(violations as f64 / (draws * pairs).max(1) as f64)
}
