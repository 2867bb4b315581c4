use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use scci::codec::{train_on_images, ModelConfig, ModelSnapshot, TrainingHyperparams};
use scci::image::{decode_png, encode_png};
use scci::pipelines::{coefficients_for, edit_entries, output_rng};
use scci::postprocess::{corrected_manipulation, PostSettings};
use scci::service::{router, ApiSession, ServiceConfig};
use scci::synthbench::{generate_corpus, SceneDomain};
use scci::{ColourEmbedding, RgbImage, EMBEDDING_DIM};

fn scenes() -> Vec<RgbImage> {
    let (_, light) = generate_corpus(6, &SceneDomain::light(), 1, 16, "l", scci::manifest::Split::Train).unwrap();
    let (_, dark) = generate_corpus(6, &SceneDomain::dark(), 2, 16, "d", scci::manifest::Split::Train).unwrap();
    light.into_iter().chain(dark).map(|r| r.image).collect()
}

fn model() -> Arc<ModelSnapshot> {
    static MODEL: OnceLock<Arc<ModelSnapshot>> = OnceLock::new();
    MODEL
        .get_or_init(|| {
            let hp = TrainingHyperparams {
                epochs: 2,
                batch_size: 4,
                resolution: 16,
                architecture: ModelConfig::tiny(EMBEDDING_DIM),
                ..TrainingHyperparams::default()
            };
            Arc::new(train_on_images(&scenes(), &hp).unwrap().0)
        })
        .clone()
}

fn app_with(cfg: ServiceConfig) -> (axum::Router, Arc<ApiSession>) {
    let session = Arc::new(ApiSession::new(model(), cfg).unwrap());
    (router(session.clone()), session)
}

fn app() -> (axum::Router, Arc<ApiSession>) {
    app_with(ServiceConfig::default())
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    raw(app, req).await
}

async fn raw(app: &axum::Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, value)
}

fn b64(image: &RgbImage) -> String {
    STANDARD.encode(encode_png(image).unwrap())
}

fn decode(v: &Value) -> RgbImage {
    decode_png(&STANDARD.decode(v["image"].as_str().unwrap()).unwrap()).unwrap()
}

async fn upload(app: &axum::Router, image: &RgbImage) -> String {
    let (status, v) = call(app, "POST", "/v1/images", Some(json!({ "image": b64(image) }))).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    v["image_id"].as_str().unwrap().to_string()
}

/// The PNG round trip quantizes to 8 bits.
fn quantized(image: &RgbImage) -> RgbImage {
    decode_png(&encode_png(image).unwrap()).unwrap()
}

#[tokio::test]
async fn health_reports_model() {
    let (app, session) = app();
    let (status, v) = call(&app, "GET", "/v1/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["status"], "ok");
    assert_eq!(v["model_version"], session.model().version());
}

#[tokio::test]
async fn upload_and_encode() {
    let (app, _) = app();
    let img = quantized(&scenes()[0]);
    let id = upload(&app, &img).await;
    let (status, v) = call(&app, "POST", "/v1/encode", Some(json!({ "image_id": id }))).await;
    assert_eq!(status, StatusCode::OK);
    let e: Vec<f64> = serde_json::from_value(v["embedding"].clone()).unwrap();
    assert_eq!(e.len(), EMBEDDING_DIM);
    let direct = scci::codec::encode(&model(), &img).unwrap();
    assert!(ColourEmbedding::new(e).unwrap().distance(&direct) < 1e-9);
}

#[tokio::test]
async fn unknown_ids_are_404_with_error_body() {
    let (app, _) = app();
    for (uri, body) in [
        ("/v1/encode", json!({ "image_id": "nope" })),
        ("/v1/edit", json!({ "image_id": "nope", "edits": {} })),
        ("/v1/transfer", json!({ "structure_id": "nope", "colour_id": "nope" })),
        ("/v1/trajectories/nope/apply", json!({ "image_id": "nope", "t": 0.0 })),
        ("/v1/trajectories", json!({ "tbsp_image_ids": ["a", "b"] })),
    ] {
        let (status, v) = call(&app, "POST", uri, Some(body)).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{uri}");
        assert!(v["error"].is_string(), "{uri}: {v}");
    }
    let (status, _) = call(&app, "GET", "/v1/nothing-here", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn malformed_bodies_are_400() {
    let (app, _) = app();
    let id = upload(&app, &scenes()[0]).await;
    let req = Request::builder()
        .method("POST")
        .uri("/v1/encode")
        .header("content-type", "application/json")
        .body(Body::from("{not json"))
        .unwrap();
    let (status, v) = raw(&app, req).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(v["error"].is_string());
    for (uri, body) in [
        ("/v1/images", json!({ "image": "***" })),
        ("/v1/images", json!({ "image": STANDARD.encode(b"not a png") })),
        ("/v1/encode", json!({ "id": id })),
        ("/v1/edit", json!({ "image_id": id, "edits": { "x": 1.0 } })),
        ("/v1/edit", json!({ "image_id": id, "edits": { "256": 1.0 } })),
        ("/v1/trajectories", json!({ "waypoints": [[0.0, 1.0]] })),
        ("/v1/trajectories", json!({})),
    ] {
        let (status, v) = call(&app, "POST", uri, Some(body.clone())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{uri} {body}: {v}");
        assert!(v["error"].is_string());
    }
    let (status, _) = call(&app, "GET", "/v1/model/active-entries?top=abc", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn oversized_uploads_are_413() {
    let (app, _) = app_with(ServiceConfig { max_upload_bytes: 600, ..ServiceConfig::default() });
    let mut state = 1u64;
    let noisy = RgbImage::from_fn(32, 32, |_, _| {
        std::array::from_fn(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 40) as f64 / (1u64 << 24) as f64
        })
    });
    let (status, v) = call(&app, "POST", "/v1/images", Some(json!({ "image": b64(&noisy) }))).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE, "{v}");
    assert!(v["error"].is_string());
}

#[tokio::test]
async fn empty_edit_matches_the_no_op_pipeline() {
    let (app, _) = app();
    let img = quantized(&scenes()[1]);
    let id = upload(&app, &img).await;
    let (status, v) = call(&app, "POST", "/v1/edit", Some(json!({ "image_id": id, "edits": {} }))).await;
    assert_eq!(status, StatusCode::OK);
    let got = decode(&v);
    let expected = edit_entries(&model(), &img, &BTreeMap::new(), &PostSettings::default(), 0).unwrap();
    assert!(got.mean_abs_diff(&expected).unwrap() <= 1.0 / 255.0);
    assert!(got.mean_abs_diff(&expected).unwrap() <= 0.05);
}

#[tokio::test]
async fn responses_are_repeatable() {
    let (app, _) = app();
    let a = upload(&app, &scenes()[2]).await;
    let b = upload(&app, &scenes()[8]).await;
    let body = json!({ "structure_id": a, "colour_id": b });
    let (s1, v1) = call(&app, "POST", "/v1/transfer", Some(body.clone())).await;
    let (s2, v2) = call(&app, "POST", "/v1/transfer", Some(body)).await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(v1, v2);
    assert_eq!(decode(&v1).shape(), (16, 16));
    let edit = json!({ "image_id": a, "edits": { "3": 0.7 } });
    assert_eq!(call(&app, "POST", "/v1/edit", Some(edit.clone())).await, call(&app, "POST", "/v1/edit", Some(edit)).await);
}

#[tokio::test]
async fn active_entries_sorted_and_truncated() {
    let (app, session) = app();
    let (status, v) = call(&app, "GET", "/v1/model/active-entries", None).await;
    assert_eq!(status, StatusCode::OK);
    let all: Vec<usize> = serde_json::from_value(v["indices"].clone()).unwrap();
    let vars: Vec<f64> = serde_json::from_value(v["variances"].clone()).unwrap();
    assert!(!all.is_empty());
    assert!(vars.windows(2).all(|w| w[0] >= w[1]));
    let stats = session.model().embedding_stats();
    for (i, var) in all.iter().zip(&vars) {
        assert_eq!(stats.variance[*i], *var);
    }
    let (_, top) = call(&app, "GET", "/v1/model/active-entries?top=3", None).await;
    let top: Vec<usize> = serde_json::from_value(top["indices"].clone()).unwrap();
    assert_eq!(top, all[..3.min(all.len())]);
}

#[tokio::test]
async fn trajectory_endpoints() {
    let (app, _) = app();
    let imgs = scenes();
    let structure = quantized(&imgs[3]);
    let sid = upload(&app, &structure).await;
    let w0 = ColourEmbedding::from_prefix(&[0.3, -0.2]).unwrap();
    let w1 = ColourEmbedding::from_prefix(&[1.0, 0.4]).unwrap();
    let (status, v) = call(
        &app,
        "POST",
        "/v1/trajectories",
        Some(json!({ "waypoints": [w0.values(), w1.values()] })),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{v}");
    let tid = v["trajectory_id"].as_str().unwrap().to_string();

    let m = model();
    let coeffs = coefficients_for(&m, None, &mut output_rng(0, 0)).unwrap();
    for (t, w) in [(0.0, &w0), (1.0, &w1)] {
        let (status, v) =
            call(&app, "POST", &format!("/v1/trajectories/{tid}/apply"), Some(json!({ "image_id": sid, "t": t }))).await;
        assert_eq!(status, StatusCode::OK);
        let expected = corrected_manipulation(&m, &structure, &coeffs, w, &PostSettings::default()).unwrap();
        assert!(decode(&v).mean_abs_diff(&expected).unwrap() <= 1.0 / 255.0, "t={t}");
    }
    let (status, _) =
        call(&app, "POST", &format!("/v1/trajectories/{tid}/apply"), Some(json!({ "image_id": sid, "t": 1.5 }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    // parallel mode starts at the image's own embedding
    let (_, v) = call(
        &app,
        "POST",
        &format!("/v1/trajectories/{tid}/apply"),
        Some(json!({ "image_id": sid, "t": 0.0, "parallel": true })),
    )
    .await;
    let own = edit_entries(&m, &structure, &BTreeMap::new(), &PostSettings::default(), 0).unwrap();
    assert!(decode(&v).mean_abs_diff(&own).unwrap() <= 1.0 / 255.0);

    let ids = [upload(&app, &imgs[0]).await, upload(&app, &imgs[7]).await, upload(&app, &imgs[11]).await];
    let (status, v) = call(&app, "POST", "/v1/trajectories", Some(json!({ "tbsp_image_ids": ids }))).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["waypoints"], 3);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_uploads_get_unique_ids() {
    let (app, _) = app();
    let img = scenes()[0].clone();
    let handles: Vec<_> = (0..16)
        .map(|_| {
            let (app, img) = (app.clone(), img.clone());
            tokio::spawn(async move { upload(&app, &img).await })
        })
        .collect();
    let mut ids = Vec::new();
    for h in handles {
        ids.push(h.await.unwrap());
    }
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 16);
}
