//! Geometry-aligned colour correction.
//!
//! Pixels the codec cannot reconstruct from their own embedding (markers,
//! rulers, specular highlights) get a high rejection weight, and the blend
//! keeps the original there instead of the manipulated proposal.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::codec::{encode, synthesize, ModelSnapshot};
use crate::decolour::{apply_decolourization, DecolourCoefficients};
use crate::embedding::ColourEmbedding;
use crate::error::{Error, Result};
use crate::image::{clamp_unit, save_grey, RgbImage};

pub const DEFAULT_TAU: f64 = 0.1;
pub const DEFAULT_EXPONENT: f64 = 2.0;

const CURVE_GRID: usize = 101;

/// A monotone map `h: [0,1] → [0,1]` with `h(0) = 0`.
#[derive(Clone)]
pub struct RejectionCurve {
    name: String,
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for RejectionCurve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("RejectionCurve").field(&self.name).finish()
    }
}

impl RejectionCurve {
    /// Wraps `f` after checking `h(0) = 0` (within 1e-9), range `[0,1]` and
    /// monotonicity on a 101-point grid.
    pub fn new(name: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Result<Self> {
        let name = name.into();
        let at0 = f(0.0);
        if !(at0.abs() <= 1e-9) {
            return Err(Error::argument(format!("rejection curve {name}: h(0) = {at0}, expected 0")));
        }
        let mut prev = at0;
        for i in 1..CURVE_GRID {
            let v = f(i as f64 / (CURVE_GRID - 1) as f64);
            if !v.is_finite() || v > 1.0 + 1e-12 || v < -1e-9 {
                return Err(Error::argument(format!("rejection curve {name}: value {v} outside [0,1]")));
            }
            if v < prev {
                return Err(Error::argument(format!("rejection curve {name} is not monotone near d = {}", i as f64 / 100.0)));
            }
            prev = v;
        }
        Ok(Self { name, f: Arc::new(f) })
    }

    /// `h(d) = d^p` for `p > 0`.
    pub fn power(p: f64) -> Result<Self> {
        if !(p > 0.0 && p.is_finite()) {
            return Err(Error::argument(format!("curve exponent must be positive, got {p}")));
        }
        Self::new(format!("d^{p}"), move |d: f64| d.powf(p))
    }

    pub fn squared() -> Self {
        Self { name: "d^2".into(), f: Arc::new(|d: f64| d * d) }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    #[inline]
    pub fn eval(&self, d: f64) -> f64 {
        (self.f)(d)
    }
}

impl Default for RejectionCurve {
    fn default() -> Self {
        Self::squared()
    }
}

/// Per-pixel rejection weights in `[0,1]`, one value per pixel (broadcast across channels).
#[derive(Debug, Clone, PartialEq)]
pub struct RejectionWeightMap {
    weights: Vec<f64>,
    tau: f64,
    height: usize,
    width: usize,
}

impl RejectionWeightMap {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.weights[y * self.width + x]
    }

    /// Greyscale PNG of the weights (×255, rounded), for debugging.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        save_grey(self.height, self.width, &self.weights, path)
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::argument(format!("tau must lie in [0,1), got {tau}")));
    }
    Ok(())
}

/// Rejection weights from the self-reconstruction error. The per-pixel error
/// is the largest absolute channel difference, so it already lies in `[0,1]`.
pub fn rejection_weights(y: &RgbImage, y_hat: &RgbImage, tau: f64, h: &RejectionCurve) -> Result<RejectionWeightMap> {
    y.ensure_same_shape(y_hat)?;
    check_tau(tau)?;
    let span = 1.0 - tau;
    let weights = y
        .data()
        .chunks_exact(3)
        .zip(y_hat.data().chunks_exact(3))
        .map(|(a, b)| {
            let m = (a[0] - b[0]).abs().max((a[1] - b[1]).abs()).max((a[2] - b[2]).abs());
            let d = ((m - tau).max(0.0) / span).min(1.0);
            h.eval(d).clamp(0.0, 1.0)
        })
        .collect();
    let (height, width) = y.shape();
    Ok(RejectionWeightMap { weights, tau, height, width })
}

/// `y + (1 − w)(ŷ′ − y)`, clamped. Evaluated as `w·y + (1 − w)·ŷ′` so that
/// `w = 0` and `w = 1` reproduce the proposal and the original exactly.
pub fn apply_correction(y: &RgbImage, y_prime: &RgbImage, w: &RejectionWeightMap) -> Result<RgbImage> {
    y.ensure_same_shape(y_prime)?;
    if w.shape() != y.shape() {
        return Err(Error::shape(format!("weight map {:?} does not match image {:?}", w.shape(), y.shape())));
    }
    let mut out = Vec::with_capacity(y.data().len());
    for ((a, b), &wt) in y.data().chunks_exact(3).zip(y_prime.data().chunks_exact(3)).zip(&w.weights) {
        let keep = 1.0 - wt;
        out.extend((0..3).map(|c| clamp_unit(wt * a[c] + keep * b[c])));
    }
    let (h, wd) = y.shape();
    RgbImage::new(h, wd, out)
}

/// Post-processing settings shared by the manipulation pipelines.
#[derive(Debug, Clone)]
pub struct PostSettings {
    pub tau: f64,
    pub curve: RejectionCurve,
    /// When false the raw proposal `f(x, e′)` is returned (ablation).
    pub enabled: bool,
}

impl Default for PostSettings {
    fn default() -> Self {
        Self { tau: DEFAULT_TAU, curve: RejectionCurve::squared(), enabled: true }
    }
}

impl PostSettings {
    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::default() }
    }

    pub fn from_config(cfg: &PostConfig) -> Result<Self> {
        check_tau(cfg.tau)?;
        let curve = if cfg.h_exponent == DEFAULT_EXPONENT { RejectionCurve::squared() } else { RejectionCurve::power(cfg.h_exponent)? };
        Ok(Self { tau: cfg.tau, curve, enabled: cfg.enabled })
    }
}

/// Serializable form of [`PostSettings`] restricted to power curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostConfig {
    pub tau: f64,
    pub h_exponent: f64,
    pub enabled: bool,
}

impl Default for PostConfig {
    fn default() -> Self {
        Self { tau: DEFAULT_TAU, h_exponent: DEFAULT_EXPONENT, enabled: true }
    }
}

/// Re-colours `y` with embedding `e_prime`, keeping the original wherever
/// the codec cannot reproduce `y` from its own embedding.
pub fn corrected_manipulation(
    model: &ModelSnapshot,
    y: &RgbImage,
    coeffs: &DecolourCoefficients,
    e_prime: &ColourEmbedding,
    settings: &PostSettings,
) -> Result<RgbImage> {
    let x = apply_decolourization(y, coeffs);
    let proposal = synthesize(model, &x, e_prime)?;
    if !settings.enabled {
        return Ok(proposal);
    }
    let y_hat = synthesize(model, &x, &encode(model, y)?)?;
    let w = rejection_weights(y, &y_hat, settings.tau, &settings.curve)?;
    apply_correction(y, &proposal, &w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_pixel(rgb: [f64; 3]) -> RgbImage {
        RgbImage::filled(1, 1, rgb)
    }

    fn weight_for_error(m: f64) -> f64 {
        let y = one_pixel([0.0, 0.0, 0.0]);
        let y_hat = one_pixel([m, m / 2.0, 0.0]);
        rejection_weights(&y, &y_hat, 0.1, &RejectionCurve::squared()).unwrap().weights()[0]
    }

    #[test]
    fn hand_evaluated_weights() {
        assert_eq!(weight_for_error(0.0), 0.0);
        assert_eq!(weight_for_error(0.1), 0.0);
        assert!((weight_for_error(0.55) - 0.25).abs() < 1e-12);
        assert_eq!(weight_for_error(1.0), 1.0);
    }

    #[test]
    fn error_uses_largest_channel_difference() {
        let y = one_pixel([0.5, 0.5, 0.5]);
        let y_hat = one_pixel([0.6, 0.5, 0.0]);
        let w = rejection_weights(&y, &y_hat, 0.1, &RejectionCurve::squared()).unwrap();
        let d: f64 = (0.5 - 0.1) / 0.9;
        assert!((w.weights()[0] - d * d).abs() < 1e-12);
    }

    #[test]
    fn hand_evaluated_blend() {
        let y = one_pixel([0.2; 3]);
        let y_prime = one_pixel([0.6; 3]);
        let w = RejectionWeightMap { weights: vec![0.25], tau: 0.1, height: 1, width: 1 };
        let out = apply_correction(&y, &y_prime, &w).unwrap();
        for v in out.data() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn argument_and_shape_errors() {
        let a = RgbImage::filled(2, 2, [0.1; 3]);
        let b = RgbImage::filled(2, 3, [0.1; 3]);
        assert!(matches!(rejection_weights(&a, &b, 0.1, &RejectionCurve::squared()), Err(Error::Shape(_))));
        assert!(matches!(rejection_weights(&a, &a, 1.0, &RejectionCurve::squared()), Err(Error::Argument(_))));
        let w = rejection_weights(&a, &a, 0.1, &RejectionCurve::squared()).unwrap();
        assert!(matches!(apply_correction(&b, &b, &w), Err(Error::Shape(_))));
    }

    #[test]
    fn curve_validation() {
        assert!(RejectionCurve::new("shifted", |d| d + 0.1).is_err());
        assert!(RejectionCurve::new("decreasing", |d| d * (1.0 - d)).is_err());
        assert!(RejectionCurve::new("too big", |d| 2.0 * d).is_err());
        assert!(RejectionCurve::new("sqrt", f64::sqrt).is_ok());
        assert!(RejectionCurve::power(-1.0).is_err());
        let c = RejectionCurve::power(3.0).unwrap();
        assert!((c.eval(0.5) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn config_round_trip() {
        let cfg = PostConfig { tau: 0.2, h_exponent: 1.0, enabled: false };
        let s = PostSettings::from_config(&cfg).unwrap();
        assert_eq!(s.tau, 0.2);
        assert!(!s.enabled);
        assert!((s.curve.eval(0.3) - 0.3).abs() < 1e-15);
        assert!(PostSettings::from_config(&PostConfig { tau: 1.5, ..cfg }).is_err());
    }

    /// Straightforward per-pixel, per-channel loop.
    fn scalar_oracle(y: &RgbImage, y_hat: &RgbImage, y_prime: &RgbImage, tau: f64) -> Vec<f64> {
        let (h, w) = y.shape();
        let mut out = vec![0.0; h * w * 3];
        for r in 0..h {
            for c in 0..w {
                let (a, b, p) = (y.pixel(r, c), y_hat.pixel(r, c), y_prime.pixel(r, c));
                let mut m: f64 = 0.0;
                for k in 0..3 {
                    m = m.max((a[k] - b[k]).abs());
                }
                let mut d = (m - tau) / (1.0 - tau);
                if d < 0.0 {
                    d = 0.0;
                }
                if d > 1.0 {
                    d = 1.0;
                }
                let wt = d * d;
                for k in 0..3 {
                    let v = a[k] + (1.0 - wt) * (p[k] - a[k]);
                    out[(r * w + c) * 3 + k] = v.clamp(0.0, 1.0);
                }
            }
        }
        out
    }

    #[test]
    fn matches_scalar_oracle_on_random_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let random = |rng: &mut ChaCha8Rng| RgbImage::from_fn(4, 4, |_, _| [rng.gen(), rng.gen(), rng.gen()]);
        for _ in 0..100 {
            let (y, y_hat, y_prime) = (random(&mut rng), random(&mut rng), random(&mut rng));
            let w = rejection_weights(&y, &y_hat, 0.1, &RejectionCurve::squared()).unwrap();
            let out = apply_correction(&y, &y_prime, &w).unwrap();
            for (a, b) in out.data().iter().zip(scalar_oracle(&y, &y_hat, &y_prime, 0.1)) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    fn image_strategy() -> impl Strategy<Value = RgbImage> {
        proptest::collection::vec(0.0f64..=1.0, 4 * 4 * 3).prop_map(|v| RgbImage::new(4, 4, v).unwrap())
    }

    proptest! {
        #[test]
        fn weights_in_unit_interval(y in image_strategy(), y_hat in image_strategy(), tau in 0.0f64..0.99) {
            let w = rejection_weights(&y, &y_hat, tau, &RejectionCurve::squared()).unwrap();
            prop_assert!(w.weights().iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert_eq!(w.shape(), y.shape());
        }

        #[test]
        fn blend_never_overshoots(y in image_strategy(), y_hat in image_strategy(), y_prime in image_strategy()) {
            let w = rejection_weights(&y, &y_hat, 0.1, &RejectionCurve::squared()).unwrap();
            let out = apply_correction(&y, &y_prime, &w).unwrap();
            for ((o, a), p) in out.data().iter().zip(y.data()).zip(y_prime.data()) {
                prop_assert!((o - a).abs() <= (p - a).abs() + 1e-15);
            }
        }

        #[test]
        fn selectivity(y in image_strategy(), y_hat in image_strategy(), y_prime in image_strategy()) {
            let tau = 0.1;
            let w = rejection_weights(&y, &y_hat, tau, &RejectionCurve::squared()).unwrap();
            let out = apply_correction(&y, &y_prime, &w).unwrap();
            for i in 0..16 {
                let m = (0..3).map(|c| (y.data()[3 * i + c] - y_hat.data()[3 * i + c]).abs()).fold(0.0, f64::max);
                for c in 0..3 {
                    let (o, a, p) = (out.data()[3 * i + c], y.data()[3 * i + c], y_prime.data()[3 * i + c]);
                    if m >= 1.0 {
                        prop_assert_eq!(o, a);
                    }
                    if m <= tau {
                        prop_assert_eq!(o, p);
                    }
                }
            }
        }
    }
}
