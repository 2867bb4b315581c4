use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;
use std::sync::OnceLock;

use scci::codec::{encode, estimate_rate, train_on_images, ModelConfig, TrainingHyperparams};
use scci::pipelines::{edit_entries, transfer_colour};
use scci::postprocess::PostSettings;
use scci::synthbench::{generate_corpus, SceneDomain};
use scci::{RgbImage, EMBEDDING_DIM};
use scci_ffi::*;

struct Fixture {
    _dir: tempfile::TempDir,
    model: PathBuf,
    images: Vec<RgbImage>,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let (_, light) = generate_corpus(4, &SceneDomain::light(), 1, 16, "l", scci::manifest::Split::Train).unwrap();
        let (_, dark) = generate_corpus(4, &SceneDomain::dark(), 2, 16, "d", scci::manifest::Split::Train).unwrap();
        let images: Vec<RgbImage> = light.into_iter().chain(dark).map(|r| r.image).collect();
        let hp = TrainingHyperparams {
            epochs: 1,
            batch_size: 4,
            resolution: 16,
            architecture: ModelConfig::tiny(EMBEDDING_DIM),
            ..TrainingHyperparams::default()
        };
        let (model, _) = train_on_images(&images, &hp).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        model.save(&path).unwrap();
        Fixture { _dir: dir, model: path, images }
    })
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = scci_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn load_model() -> *mut ScciModel {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { scci_model_load(cstr(&fixture().model).as_ptr(), &mut m) }, ScciStatus::Ok);
    assert!(!m.is_null());
    m
}

fn handle(img: &RgbImage) -> *mut ScciImage {
    let (h, w) = img.shape();
    let bytes = img.to_rgb8();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { scci_image_from_rgb8(h, w, bytes.as_ptr(), &mut out) }, ScciStatus::Ok);
    out
}

fn pixels(img: *const ScciImage) -> RgbImage {
    let (mut h, mut w) = (0, 0);
    assert_eq!(unsafe { scci_image_dims(img, &mut h, &mut w) }, ScciStatus::Ok);
    let mut buf = vec![0u8; h * w * 3];
    assert_eq!(unsafe { scci_image_to_rgb8(img, buf.as_mut_ptr(), buf.len()) }, ScciStatus::Ok);
    RgbImage::from_rgb8(h, w, &buf).unwrap()
}

// What the handle holds is the 8-bit quantization of the caller's image.
fn quantized(img: &RgbImage) -> RgbImage {
    let (h, w) = img.shape();
    RgbImage::from_rgb8(h, w, &img.to_rgb8()).unwrap()
}

#[test]
fn static_queries() {
    assert_eq!(scci_embedding_dim(), 256);
    let v = unsafe { CStr::from_ptr(scci_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_pointers_are_reported_not_dereferenced() {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { scci_model_load(ptr::null(), &mut m) }, ScciStatus::NullPointer);
    assert!(m.is_null());
    assert!(last_error().contains("null"));
    let path = cstr(&fixture().model);
    assert_eq!(unsafe { scci_model_load(path.as_ptr(), ptr::null_mut()) }, ScciStatus::NullPointer);
    let mut out = [0.0; 256];
    assert_eq!(unsafe { scci_encode(ptr::null(), ptr::null(), out.as_mut_ptr(), 256) }, ScciStatus::NullPointer);
    let (mut h, mut w) = (0, 0);
    assert_eq!(unsafe { scci_image_dims(ptr::null(), &mut h, &mut w) }, ScciStatus::NullPointer);
    unsafe {
        scci_model_free(ptr::null_mut());
        scci_image_free(ptr::null_mut());
    }
}

#[test]
fn load_failures_map_to_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = ptr::null_mut();
    let missing = cstr(&dir.path().join("missing.bin"));
    assert_eq!(unsafe { scci_model_load(missing.as_ptr(), &mut m) }, ScciStatus::Io);
    assert!(last_error().contains("missing.bin"));

    let junk = dir.path().join("junk.bin");
    std::fs::write(&junk, b"not a model").unwrap();
    assert_eq!(unsafe { scci_model_load(cstr(&junk).as_ptr(), &mut m) }, ScciStatus::Model);
    assert!(m.is_null());

    let mut img = ptr::null_mut();
    assert_eq!(unsafe { scci_image_load(cstr(&junk).as_ptr(), &mut img) }, ScciStatus::Io);
    assert!(img.is_null());
}

#[test]
fn image_round_trip_through_handles_and_png() {
    let src = &fixture().images[0];
    let img = handle(src);
    assert_eq!(pixels(img), quantized(src));

    let mut buf = vec![0u8; 5];
    assert_eq!(unsafe { scci_image_to_rgb8(img, buf.as_mut_ptr(), buf.len()) }, ScciStatus::Shape);
    let mut bad = ptr::null_mut();
    assert_eq!(unsafe { scci_image_from_rgb8(0, 4, buf.as_ptr(), &mut bad) }, ScciStatus::Shape);

    let dir = tempfile::tempdir().unwrap();
    let path = cstr(&dir.path().join("x.png"));
    assert_eq!(unsafe { scci_image_save(img, path.as_ptr()) }, ScciStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { scci_image_load(path.as_ptr(), &mut back) }, ScciStatus::Ok);
    assert_eq!(pixels(back), quantized(src));
    unsafe {
        scci_image_free(img);
        scci_image_free(back);
    }
}

#[test]
fn encode_and_rate_match_the_library() {
    let f = fixture();
    let model = load_model();
    let snapshot = scci::codec::ModelSnapshot::load(&f.model).unwrap();
    let img = handle(&f.images[1]);
    let mut e = vec![0.0; EMBEDDING_DIM];
    assert_eq!(unsafe { scci_encode(model, img, e.as_mut_ptr(), e.len()) }, ScciStatus::Ok);
    let expect = encode(&snapshot, &quantized(&f.images[1])).unwrap();
    assert_eq!(e, expect.values());

    let mut short = vec![0.0; 10];
    assert_eq!(unsafe { scci_encode(model, img, short.as_mut_ptr(), short.len()) }, ScciStatus::Shape);
    assert!(last_error().contains("256"));

    let mut bits = -1.0;
    assert_eq!(unsafe { scci_estimate_rate(model, e.as_ptr(), e.len(), &mut bits) }, ScciStatus::Ok);
    assert_eq!(bits, estimate_rate(&snapshot, &expect));
    assert_eq!(unsafe { scci_estimate_rate(model, e.as_ptr(), 3, &mut bits) }, ScciStatus::Shape);
    unsafe {
        scci_image_free(img);
        scci_model_free(model);
    }
}

#[test]
fn transfer_and_edit_match_the_library() {
    let f = fixture();
    let model = load_model();
    let snapshot = scci::codec::ModelSnapshot::load(&f.model).unwrap();
    let (a, b) = (handle(&f.images[0]), handle(&f.images[5]));

    for post in [true, false] {
        let settings = if post { PostSettings::default() } else { PostSettings::disabled() };
        let mut out = ptr::null_mut();
        assert_eq!(unsafe { scci_transfer(model, a, b, 3, post, &mut out) }, ScciStatus::Ok);
        let expect = transfer_colour(&snapshot, &quantized(&f.images[0]), &quantized(&f.images[5]), &settings, 3).unwrap();
        assert_eq!(pixels(out), quantized(&expect));
        unsafe { scci_image_free(out) };
    }

    let (idx, val) = ([2usize, 9], [0.7, -0.2]);
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { scci_edit(model, a, idx.as_ptr(), val.as_ptr(), 2, 4, true, &mut out) }, ScciStatus::Ok);
    let edits = idx.iter().copied().zip(val).collect();
    let expect = edit_entries(&snapshot, &quantized(&f.images[0]), &edits, &PostSettings::default(), 4).unwrap();
    assert_eq!(pixels(out), quantized(&expect));
    unsafe { scci_image_free(out) };

    let mut none = ptr::null_mut();
    assert_eq!(unsafe { scci_edit(model, a, ptr::null(), ptr::null(), 0, 4, true, &mut none) }, ScciStatus::Ok);
    unsafe { scci_image_free(none) };

    let bad = [EMBEDDING_DIM];
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { scci_edit(model, a, bad.as_ptr(), val.as_ptr(), 1, 4, true, &mut out) }, ScciStatus::InvalidArgument);
    assert!(out.is_null());
    unsafe {
        scci_image_free(a);
        scci_image_free(b);
        scci_model_free(model);
    }
}

#[test]
fn errors_are_per_thread() {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { scci_model_load(ptr::null(), &mut m) }, ScciStatus::NullPointer);
    let other = std::thread::spawn(|| scci_last_error().is_null()).join().unwrap();
    assert!(other);
    assert!(!scci_last_error().is_null());
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/scci.h")).unwrap();
    for name in [
        "scci_last_error",
        "scci_version",
        "scci_embedding_dim",
        "scci_model_load",
        "scci_model_free",
        "scci_image_load",
        "scci_image_from_rgb8",
        "scci_image_save",
        "scci_image_dims",
        "scci_image_to_rgb8",
        "scci_image_free",
        "scci_encode",
        "scci_estimate_rate",
        "scci_transfer",
        "scci_edit",
        "SCCI_STATUS_PANIC",
    ] {
        assert!(header.contains(name), "{name} missing from scci.h");
    }
}
