//! Ground-truth oracle metrics over synthetic renders.

use super::scene::SceneRender;
use crate::error::{Error, Result};
use crate::image::RgbImage;

/// Euclidean distance between per-channel means over pixels not excluded by `exclude`.
pub fn global_colour_distance(a: &RgbImage, b: &RgbImage, exclude: Option<&[bool]>) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let include: Option<Vec<bool>> = match exclude {
        Some(m) if m.len() != a.pixel_count() => return Err(Error::shape("mask does not match image")),
        Some(m) => Some(m.iter().map(|&x| !x).collect()),
        None => None,
    };
    let (ma, mb) = match (a.channel_means(include.as_deref()), b.channel_means(include.as_deref())) {
        (Some(ma), Some(mb)) => (ma, mb),
        _ => return Err(Error::argument("no pixels left after exclusion")),
    };
    Ok(ma.iter().zip(mb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

/// Mean absolute difference over the marker pixels of `original`.
pub fn marker_fidelity(original: &SceneRender, output: &RgbImage) -> Result<f64> {
    original.image.ensure_same_shape(output)?;
    let mut total = 0.0;
    let mut n = 0usize;
    for (i, &m) in original.marker_mask.iter().enumerate() {
        if m {
            for c in 0..3 {
                total += (original.image.data()[3 * i + c] - output.data()[3 * i + c]).abs();
            }
            n += 3;
        }
    }
    if n == 0 {
        return Err(Error::argument("scene has no marker pixels"));
    }
    Ok(total / n as f64)
}

/// A perceptual distance between two images over a region.
pub trait PerceptualMetric {
    fn distance(&self, a: &RgbImage, b: &RgbImage, exclude: Option<&[bool]>) -> Result<f64>;
}

/// Mean squared error between 4×4 average-pooled images, over pooled cells
/// containing at least one included pixel (pooling uses included pixels only).
#[derive(Debug, Clone, Copy, Default)]
pub struct PooledMse;

const POOL: usize = 4;

impl PerceptualMetric for PooledMse {
    fn distance(&self, a: &RgbImage, b: &RgbImage, exclude: Option<&[bool]>) -> Result<f64> {
        a.ensure_same_shape(b)?;
        if let Some(m) = exclude {
            if m.len() != a.pixel_count() {
                return Err(Error::shape("mask does not match image"));
            }
        }
        let (h, w) = a.shape();
        let mut total = 0.0;
        let mut cells = 0usize;
        for cy in (0..h).step_by(POOL) {
            for cx in (0..w).step_by(POOL) {
                let mut sa = [0.0; 3];
                let mut sb = [0.0; 3];
                let mut count = 0usize;
                for y in cy..(cy + POOL).min(h) {
                    for x in cx..(cx + POOL).min(w) {
                        if exclude.is_some_and(|m| m[y * w + x]) {
                            continue;
                        }
                        let (pa, pb) = (a.pixel(y, x), b.pixel(y, x));
                        for c in 0..3 {
                            sa[c] += pa[c];
                            sb[c] += pb[c];
                        }
                        count += 1;
                    }
                }
                if count > 0 {
                    for c in 0..3 {
                        let d = (sa[c] - sb[c]) / count as f64;
                        total += d * d;
                    }
                    cells += 3;
                }
            }
        }
        if cells == 0 {
            return Err(Error::argument("no pixels left after exclusion"));
        }
        Ok(total / cells as f64)
    }
}

/// Pooled-MSE proxy restricted to pixels not in `exclude`.
pub fn masked_perceptual_proxy(a: &RgbImage, b: &RgbImage, exclude: Option<&[bool]>) -> Result<f64> {
    PooledMse.distance(a, b, exclude)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthbench::scene::{generate_scene, Marker, MarkerShape, SceneSpec};

    #[test]
    fn colour_distance_examples() {
        let a = RgbImage::filled(4, 4, [0.2; 3]);
        let b = RgbImage::filled(4, 4, [0.5; 3]);
        assert_eq!(global_colour_distance(&a, &a, None).unwrap(), 0.0);
        let d = global_colour_distance(&a, &b, None).unwrap();
        assert!((d - 3f64.sqrt() * 0.3).abs() < 1e-12);
        assert_eq!(d, global_colour_distance(&b, &a, None).unwrap());
        assert!(global_colour_distance(&a, &b, Some(&[true; 16])).is_err());
    }

    fn marked_scene() -> SceneRender {
        let spec = SceneSpec {
            markers: vec![Marker {
                shape: MarkerShape::Disc,
                position: [0.5, 0.5],
                size: 0.2,
                angle: 0.0,
                colour: [0.2, 0.2, 0.2],
            }],
            ..SceneSpec::plain(0.6, [1.0; 3], 2)
        };
        generate_scene(&spec, 16).unwrap()
    }

    #[test]
    fn marker_fidelity_examples() {
        let r = marked_scene();
        assert_eq!(marker_fidelity(&r, &r.image).unwrap(), 0.0);
        let mut shifted = r.image.data().to_vec();
        for (i, &m) in r.marker_mask.iter().enumerate() {
            if m {
                for c in 0..3 {
                    shifted[3 * i + c] += 0.1;
                }
            }
        }
        let out = RgbImage::new(16, 16, shifted).unwrap();
        assert!((marker_fidelity(&r, &out).unwrap() - 0.1).abs() < 1e-12);

        let plain = generate_scene(&SceneSpec::plain(0.5, [1.0; 3], 0), 8).unwrap();
        assert!(marker_fidelity(&plain, &plain.image).is_err());
    }

    #[test]
    fn perceptual_proxy_examples() {
        let a = RgbImage::filled(8, 8, [0.3; 3]);
        let b = RgbImage::filled(8, 8, [0.5; 3]);
        assert_eq!(masked_perceptual_proxy(&a, &a, None).unwrap(), 0.0);
        assert!((masked_perceptual_proxy(&a, &b, None).unwrap() - 0.04).abs() < 1e-12);
        assert_eq!(masked_perceptual_proxy(&a, &b, None).unwrap(), masked_perceptual_proxy(&b, &a, None).unwrap());
        assert!(masked_perceptual_proxy(&a, &b, Some(&[true; 64])).is_err());
    }
}
