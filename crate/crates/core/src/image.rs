//! Unit-interval image types and 8-bit PNG IO.
//!
//! Pixel data is stored row-major, channel-interleaved (`H×W×3` for colour,
//! `H×W` for colourless images). Every constructor either validates or clamps
//! into `[0, 1]`, so an existing value always satisfies the range invariant.

use std::path::Path;

use image::{ColorType, ImageBuffer, ImageReader, Luma, Rgb};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColourlessImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

fn check_dims(height: usize, width: usize, len: usize, channels: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::shape(format!("image dimensions must be positive, got {height}x{width}")));
    }
    if len != height * width * channels {
        return Err(Error::shape(format!(
            "expected {height}x{width}x{channels} = {} values, got {len}",
            height * width * channels
        )));
    }
    Ok(())
}

fn check_range(data: &[f64]) -> Result<()> {
    if let Some((i, v)) = data.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Validation(format!("pixel value {v} at index {i} outside [0,1]")));
    }
    Ok(())
}

#[inline]
pub(crate) fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(height, width, data.len(), 3)?;
        check_range(&data)?;
        Ok(Self { height, width, data })
    }

    /// Builds an image from arbitrary reals, clamping each value into `[0, 1]`.
    pub fn from_clamped(height: usize, width: usize, mut data: Vec<f64>) -> Result<Self> {
        check_dims(height, width, data.len(), 3)?;
        data.iter_mut().for_each(|v| *v = clamp_unit(*v));
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(y, x).map(clamp_unit));
            }
        }
        Self { height, width, data }
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        Self::from_fn(height, width, |_, _| rgb)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    /// Per-channel mean over pixels where `include` is true (all pixels when `None`).
    pub fn channel_means(&self, include: Option<&[bool]>) -> Option<[f64; 3]> {
        let mut sum = [0.0; 3];
        let mut n = 0usize;
        for (i, p) in self.pixels().enumerate() {
            if include.map_or(true, |m| m[i]) {
                for c in 0..3 {
                    sum[c] += p[c];
                }
                n += 1;
            }
        }
        (n > 0).then(|| sum.map(|s| s / n as f64))
    }

    /// Mean of BT.601 luma over all pixels.
    pub fn mean_luminance(&self) -> f64 {
        self.pixels().map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).sum::<f64>() / self.pixel_count() as f64
    }

    pub fn mean_abs_diff(&self, other: &RgbImage) -> Result<f64> {
        self.ensure_same_shape(other)?;
        let total: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum();
        Ok(total / self.data.len() as f64)
    }

    pub fn ensure_same_shape(&self, other: &RgbImage) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "{}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    /// Bilinear resize to `height × width`; returns a clone when already that size.
    pub fn resized(&self, height: usize, width: usize) -> RgbImage {
        if self.shape() == (height, width) {
            return self.clone();
        }
        let buf: ImageBuffer<Rgb<f32>, Vec<f32>> = ImageBuffer::from_raw(
            self.width as u32,
            self.height as u32,
            self.data.iter().map(|&v| v as f32).collect(),
        )
        .expect("buffer length matches dimensions");
        let out = image::imageops::resize(&buf, width as u32, height as u32, image::imageops::FilterType::Triangle);
        RgbImage::from_clamped(height, width, out.into_raw().into_iter().map(f64::from).collect())
            .expect("resize preserves shape")
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        check_dims(height, width, bytes.len(), 3)?;
        Ok(Self { height, width, data: bytes.iter().map(|&b| f64::from(b) / 255.0).collect() })
    }
}

impl ColourlessImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(height, width, data.len(), 1)?;
        check_range(&data)?;
        Ok(Self { height, width, data })
    }

    pub fn from_clamped(height: usize, width: usize, mut data: Vec<f64>) -> Result<Self> {
        check_dims(height, width, data.len(), 1)?;
        data.iter_mut().for_each(|v| *v = clamp_unit(*v));
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn value(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

#[inline]
pub(crate) fn quantize(v: f64) -> u8 {
    (clamp_unit(v) * 255.0).round() as u8
}

/// Reads an 8-bit RGB PNG, mapping each code `v` to `v / 255`.
pub fn load_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|source| Error::Load { path: path.to_path_buf(), source })?
        .with_guessed_format()
        .map_err(|source| Error::Load { path: path.to_path_buf(), source })?;
    let format_err = |reason: String| Error::Format { path: path.to_path_buf(), reason };
    if reader.format() != Some(image::ImageFormat::Png) {
        return Err(format_err("not a PNG file".into()));
    }
    let decoded = reader.decode().map_err(|e| format_err(e.to_string()))?;
    if decoded.color() != ColorType::Rgb8 {
        return Err(format_err(format!("expected 8-bit RGB, found {:?}", decoded.color())));
    }
    let rgb = decoded.into_rgb8();
    let (w, h) = rgb.dimensions();
    RgbImage::from_rgb8(h as usize, w as usize, rgb.as_raw())
}

/// Writes an 8-bit RGB PNG (round-to-nearest quantization, error ≤ 1/510).
pub fn save_image(image: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(image.width as u32, image.height as u32, image.to_rgb8())
            .expect("buffer length matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(other.to_string())),
    })
}

/// Writes a single-channel map as an 8-bit greyscale PNG (`value × 255`, rounded).
pub fn save_grey(height: usize, width: usize, values: &[f64], path: impl AsRef<Path>) -> Result<()> {
    check_dims(height, width, values.len(), 1)?;
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(width as u32, height as u32, values.iter().map(|&v| quantize(v)).collect())
            .expect("buffer length matches dimensions");
    buf.save_with_format(path.as_ref(), image::ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(other.to_string())),
    })
}

/// Encodes an image as PNG bytes (used by the HTTP API).
pub fn encode_png(image: &RgbImage) -> Result<Vec<u8>> {
    let mut out = std::io::Cursor::new(Vec::new());
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(image.width as u32, image.height as u32, image.to_rgb8())
            .expect("buffer length matches dimensions");
    buf.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(out.into_inner())
}

pub fn decode_png(bytes: &[u8]) -> Result<RgbImage> {
    let format_err = |reason: String| Error::Format { path: "<memory>".into(), reason };
    let decoded = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| format_err(e.to_string()))?;
    if decoded.color() != ColorType::Rgb8 {
        return Err(format_err(format!("expected 8-bit RGB, found {:?}", decoded.color())));
    }
    let rgb = decoded.into_rgb8();
    let (w, h) = rgb.dimensions();
    RgbImage::from_rgb8(h as usize, w as usize, rgb.as_raw())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_png(dir: &Path, name: &str, w: u32, h: u32, px: [u8; 3]) -> std::path::PathBuf {
        let path = dir.join(name);
        ImageBuffer::from_pixel(w, h, Rgb(px)).save(&path).unwrap();
        path
    }

    #[test]
    fn load_maps_codes_to_unit_interval() {
        let dir = tempfile::tempdir().unwrap();
        let black = load_image(write_png(dir.path(), "k.png", 2, 2, [0, 0, 0])).unwrap();
        assert!(black.data().iter().all(|&v| v == 0.0));
        let white = load_image(write_png(dir.path(), "w.png", 2, 2, [255, 255, 255])).unwrap();
        assert!(white.data().iter().all(|&v| v == 1.0));
        let mixed = load_image(write_png(dir.path(), "m.png", 1, 1, [51, 102, 204])).unwrap();
        let want = [51.0 / 255.0, 102.0 / 255.0, 204.0 / 255.0];
        for (got, want) in mixed.pixel(0, 0).iter().zip(want) {
            assert!((got - want).abs() < 1e-15);
        }
        assert!((mixed.pixel(0, 0)[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn load_rejects_missing_and_non_rgb() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_image(dir.path().join("nope.png")), Err(Error::Load { .. })));

        let grey = dir.path().join("g.png");
        ImageBuffer::from_pixel(2, 2, Luma([9u8])).save(&grey).unwrap();
        assert!(matches!(load_image(&grey), Err(Error::Format { .. })));

        let rgba = dir.path().join("a.png");
        ImageBuffer::from_pixel(2, 2, image::Rgba([1u8, 2, 3, 4])).save(&rgba).unwrap();
        assert!(matches!(load_image(&rgba), Err(Error::Format { .. })));

        let wide = dir.path().join("w16.png");
        ImageBuffer::from_pixel(2, 2, Rgb([1u16, 2, 3])).save(&wide).unwrap();
        assert!(matches!(load_image(&wide), Err(Error::Format { .. })));
    }

    #[test]
    fn save_round_trip_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");

        save_image(&RgbImage::filled(3, 4, [0.5; 3]), &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.shape(), (3, 4));
        assert!(back.data().iter().all(|v| (v - 0.5).abs() <= 1.0 / 510.0));

        save_image(&RgbImage::filled(2, 2, [0.0; 3]), &path).unwrap();
        assert!(load_image(&path).unwrap().data().iter().all(|&v| v == 0.0));

        save_image(&RgbImage::filled(1, 1, [1.0 / 3.0; 3]), &path).unwrap();
        assert!(load_image(&path).unwrap().data().iter().all(|&v| v == 85.0 / 255.0));
    }

    #[test]
    fn save_to_unwritable_path_is_io_error() {
        let err = save_image(&RgbImage::filled(1, 1, [0.0; 3]), "/nonexistent-dir/x.png").unwrap_err();
        assert!(matches!(err, Error::Io(_)));
    }

    #[test]
    fn constructors_enforce_invariants() {
        assert!(RgbImage::new(1, 1, vec![0.0, 0.5, 1.1]).is_err());
        assert!(RgbImage::new(1, 2, vec![0.0; 3]).is_err());
        assert!(RgbImage::new(0, 2, vec![]).is_err());
        let c = RgbImage::from_clamped(1, 1, vec![-0.5, 0.5, 7.0]).unwrap();
        assert_eq!(c.pixel(0, 0), [0.0, 0.5, 1.0]);
        assert!(ColourlessImage::new(1, 1, vec![-0.1]).is_err());
    }

    #[test]
    fn png_bytes_round_trip() {
        let img = RgbImage::from_fn(5, 7, |y, x| [y as f64 / 4.0, x as f64 / 6.0, 0.25]);
        let back = decode_png(&encode_png(&img).unwrap()).unwrap();
        assert_eq!(back.shape(), (5, 7));
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1.0 / 510.0 + 1e-12);
        }
    }

    proptest::proptest! {
        #[test]
        fn io_round_trip_error_bounded(vals in proptest::collection::vec(0.0f64..=1.0, 12)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.png");
            let img = RgbImage::new(2, 2, vals).unwrap();
            save_image(&img, &path).unwrap();
            let back = load_image(&path).unwrap();
            for (a, b) in img.data().iter().zip(back.data()) {
                proptest::prop_assert!((a - b).abs() <= 1.0 / 510.0 + 1e-12);
            }
        }
    }
}
