//! C ABI over the codec and the manipulation pipelines.
//!
//! Objects are opaque handles created by `scci_*_load`/`scci_*_new` functions
//! and released with the matching `scci_*_free`. Every fallible call returns
//! an [`ScciStatus`]; on failure the message is available from
//! [`scci_last_error`] on the same thread until the next failing call.
//! Panics never cross the boundary.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use scci::codec::{encode, estimate_rate, ModelSnapshot};
use scci::image::{load_image, save_image};
use scci::pipelines::{edit_entries, transfer_colour};
use scci::postprocess::PostSettings;
use scci::{ColourEmbedding, Error, RgbImage, EMBEDDING_DIM};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScciStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Model = 4,
    Shape = 5,
    Internal = 6,
    Panic = 7,
}

/// A loaded model snapshot.
pub struct ScciModel(ModelSnapshot);

/// An RGB image with channels in [0, 1].
pub struct ScciImage(RgbImage);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> ScciStatus {
    match e {
        Error::Load { .. } | Error::Io(_) | Error::Format { .. } => ScciStatus::Io,
        Error::Argument(_) | Error::Validation(_) | Error::Parse { .. } => ScciStatus::InvalidArgument,
        Error::Shape(_) => ScciStatus::Shape,
        Error::Model(_) | Error::Divergence { .. } => ScciStatus::Model,
        _ => ScciStatus::Internal,
    }
}

/// Runs `f`, converting errors and panics into a status plus last-error message.
fn guard(f: impl FnOnce() -> Result<(), (ScciStatus, String)>) -> ScciStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ScciStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            ScciStatus::Panic
        }
    }
}

fn lib(e: Error) -> (ScciStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (ScciStatus, String) {
    (ScciStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, (ScciStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (ScciStatus::InvalidArgument, format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (ScciStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (ScciStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

fn settings(post_enabled: bool) -> PostSettings {
    if post_enabled {
        PostSettings::default()
    } else {
        PostSettings::disabled()
    }
}

/// Message of the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn scci_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn scci_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Number of entries in every embedding (256).
#[no_mangle]
pub extern "C" fn scci_embedding_dim() -> usize {
    EMBEDDING_DIM
}

/// Loads a model snapshot from `path` into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn scci_model_load(path: *const c_char, out: *mut *mut ScciModel) -> ScciStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let model = ModelSnapshot::load(path_arg(path, "path")?).map_err(lib)?;
        *out = Box::into_raw(Box::new(ScciModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`scci_model_load`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn scci_model_free(model: *mut ScciModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Loads a PNG into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn scci_image_load(path: *const c_char, out: *mut *mut ScciImage) -> ScciStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let img = load_image(path_arg(path, "path")?).map_err(lib)?;
        *out = Box::into_raw(Box::new(ScciImage(img)));
        Ok(())
    })
}

/// Builds an image from `height * width * 3` interleaved 8-bit RGB values.
///
/// # Safety
/// `rgb` must point to `height * width * 3` readable bytes and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn scci_image_from_rgb8(
    height: usize,
    width: usize,
    rgb: *const u8,
    out: *mut *mut ScciImage,
) -> ScciStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if rgb.is_null() {
            return Err(null("rgb"));
        }
        let n = height
            .checked_mul(width)
            .and_then(|p| p.checked_mul(3))
            .ok_or_else(|| (ScciStatus::InvalidArgument, "image size overflows".to_string()))?;
        let bytes = std::slice::from_raw_parts(rgb, n);
        let img = RgbImage::from_rgb8(height, width, bytes).map_err(lib)?;
        *out = Box::into_raw(Box::new(ScciImage(img)));
        Ok(())
    })
}

/// Writes the image as PNG.
///
/// # Safety
/// `image` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn scci_image_save(image: *const ScciImage, path: *const c_char) -> ScciStatus {
    guard(|| {
        let img = deref(image, "image")?;
        save_image(&img.0, path_arg(path, "path")?).map_err(lib)
    })
}

/// # Safety
/// `image` must be a live handle; `height` and `width` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn scci_image_dims(image: *const ScciImage, height: *mut usize, width: *mut usize) -> ScciStatus {
    guard(|| {
        let img = deref(image, "image")?;
        let (h, w) = img.0.shape();
        *out_ptr(height, "height")? = h;
        *out_ptr(width, "width")? = w;
        Ok(())
    })
}

/// Copies the image as interleaved 8-bit RGB into `buf` of `len` bytes;
/// `len` must be exactly `height * width * 3`.
///
/// # Safety
/// `image` must be a live handle and `buf` point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn scci_image_to_rgb8(image: *const ScciImage, buf: *mut u8, len: usize) -> ScciStatus {
    guard(|| {
        let img = deref(image, "image")?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let bytes = img.0.to_rgb8();
        if bytes.len() != len {
            return Err((ScciStatus::Shape, format!("buffer holds {len} bytes, image needs {}", bytes.len())));
        }
        ptr::copy_nonoverlapping(bytes.as_ptr(), buf, len);
        Ok(())
    })
}

/// # Safety
/// `image` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn scci_image_free(image: *mut ScciImage) {
    if !image.is_null() {
        drop(Box::from_raw(image));
    }
}

/// Encodes `image` into `out` (`len` must equal [`scci_embedding_dim`]).
///
/// # Safety
/// Handles must be live and `out` point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn scci_encode(
    model: *const ScciModel,
    image: *const ScciImage,
    out: *mut f64,
    len: usize,
) -> ScciStatus {
    guard(|| {
        let (m, img) = (deref(model, "model")?, deref(image, "image")?);
        if out.is_null() {
            return Err(null("out"));
        }
        if len != EMBEDDING_DIM {
            return Err((ScciStatus::Shape, format!("embedding buffer must hold {EMBEDDING_DIM} values, got {len}")));
        }
        let e = encode(&m.0, &img.0).map_err(lib)?;
        ptr::copy_nonoverlapping(e.values().as_ptr(), out, len);
        Ok(())
    })
}

/// Bits needed for an embedding under the model's rate model.
///
/// # Safety
/// `model` must be live, `values` point to `len` doubles, `bits` be valid.
#[no_mangle]
pub unsafe extern "C" fn scci_estimate_rate(
    model: *const ScciModel,
    values: *const f64,
    len: usize,
    bits: *mut f64,
) -> ScciStatus {
    guard(|| {
        let m = deref(model, "model")?;
        if values.is_null() {
            return Err(null("values"));
        }
        let e = ColourEmbedding::new(std::slice::from_raw_parts(values, len).to_vec()).map_err(lib)?;
        *out_ptr(bits, "bits")? = estimate_rate(&m.0, &e);
        Ok(())
    })
}

/// Re-colours `structure` with the colour of `colour`.
///
/// # Safety
/// Handles must be live and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn scci_transfer(
    model: *const ScciModel,
    structure: *const ScciImage,
    colour: *const ScciImage,
    seed: u64,
    post_enabled: bool,
    out: *mut *mut ScciImage,
) -> ScciStatus {
    guard(|| {
        let (m, s, c) = (deref(model, "model")?, deref(structure, "structure")?, deref(colour, "colour")?);
        let out = out_ptr(out, "out")?;
        let img = transfer_colour(&m.0, &s.0, &c.0, &settings(post_enabled), seed).map_err(lib)?;
        *out = Box::into_raw(Box::new(ScciImage(img)));
        Ok(())
    })
}

/// Sets `values[i]` at entry `indices[i]` for `n` edits and re-synthesizes.
///
/// # Safety
/// Handles must be live, `indices` and `values` point to `n` elements (may be
/// null when `n` is 0) and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn scci_edit(
    model: *const ScciModel,
    image: *const ScciImage,
    indices: *const usize,
    values: *const f64,
    n: usize,
    seed: u64,
    post_enabled: bool,
    out: *mut *mut ScciImage,
) -> ScciStatus {
    guard(|| {
        let (m, img) = (deref(model, "model")?, deref(image, "image")?);
        let out = out_ptr(out, "out")?;
        let mut edits = BTreeMap::new();
        if n > 0 {
            if indices.is_null() || values.is_null() {
                return Err(null("edit arrays"));
            }
            let (ks, vs) = (std::slice::from_raw_parts(indices, n), std::slice::from_raw_parts(values, n));
            edits.extend(ks.iter().copied().zip(vs.iter().copied()));
        }
        let result = edit_entries(&m.0, &img.0, &edits, &settings(post_enabled), seed).map_err(lib)?;
        *out = Box::into_raw(Box::new(ScciImage(result)));
        Ok(())
    })
}
