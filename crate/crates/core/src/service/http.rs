//! JSON-over-HTTP API backing the latent explorer.
//!
//! One immutable model snapshot per session. Uploaded images and trajectories
//! live in in-memory stores; nothing persists across restarts. Every
//! manipulation uses the session seed for its decolourization draw, so
//! identical requests return identical payloads.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::ServiceConfig;
use crate::codec::{encode, ModelSnapshot};
use crate::embedding::{ColourEmbedding, EMBEDDING_DIM};
use crate::error::Error;
use crate::image::{decode_png, encode_png, RgbImage};
use crate::latent::{active_entries_from_variances, Trajectory};
use crate::pipelines::{coefficients_for, edit_entries, output_rng, transfer_colour};
use crate::postprocess::{corrected_manipulation, PostSettings};

/// Shared state of one running service.
pub struct ApiSession {
    model: Arc<ModelSnapshot>,
    config: ServiceConfig,
    post: PostSettings,
    images: RwLock<HashMap<String, RgbImage>>,
    embeddings: RwLock<HashMap<String, ColourEmbedding>>,
    trajectories: RwLock<HashMap<String, Trajectory>>,
    next_image: AtomicU64,
    next_trajectory: AtomicU64,
}

impl ApiSession {
    pub fn new(model: Arc<ModelSnapshot>, config: ServiceConfig) -> crate::Result<Self> {
        config.validate()?;
        let post = PostSettings::from_config(&config.post)?;
        Ok(Self {
            model,
            config,
            post,
            images: RwLock::default(),
            embeddings: RwLock::default(),
            trajectories: RwLock::default(),
            next_image: AtomicU64::new(1),
            next_trajectory: AtomicU64::new(1),
        })
    }

    pub fn model(&self) -> &ModelSnapshot {
        &self.model
    }

    /// Stores an image and returns its fresh id.
    pub fn insert_image(&self, image: RgbImage) -> String {
        let id = format!("img-{}", self.next_image.fetch_add(1, Ordering::SeqCst));
        self.images.write().expect("image store poisoned").insert(id.clone(), image);
        id
    }

    pub fn image(&self, id: &str) -> Result<RgbImage, ApiError> {
        self.images
            .read()
            .expect("image store poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown image id {id}")))
    }

    /// The embedding of a stored image, computed once.
    pub fn embedding(&self, id: &str) -> Result<ColourEmbedding, ApiError> {
        if let Some(e) = self.embeddings.read().expect("embedding cache poisoned").get(id) {
            return Ok(e.clone());
        }
        let e = encode(&self.model, &self.image(id)?)?;
        self.embeddings.write().expect("embedding cache poisoned").insert(id.to_string(), e.clone());
        Ok(e)
    }

    pub fn insert_trajectory(&self, t: Trajectory) -> String {
        let id = format!("traj-{}", self.next_trajectory.fetch_add(1, Ordering::SeqCst));
        self.trajectories.write().expect("trajectory store poisoned").insert(id.clone(), t);
        id
    }

    pub fn trajectory(&self, id: &str) -> Result<Trajectory, ApiError> {
        self.trajectories
            .read()
            .expect("trajectory store poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown trajectory id {id}")))
    }

    fn post_settings(&self, enabled: Option<bool>) -> PostSettings {
        PostSettings { enabled: enabled.unwrap_or(self.post.enabled), ..self.post.clone() }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Argument(_) | Error::Validation(_) | Error::Shape(_) | Error::Format { .. } | Error::Parse { .. } => {
                StatusCode::BAD_REQUEST
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        match r.status() {
            StatusCode::PAYLOAD_TOO_LARGE => Self::new(StatusCode::PAYLOAD_TOO_LARGE, r.body_text()),
            _ => Self::bad_request(r.body_text()),
        }
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        Self::bad_request(r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;
type Shared = State<Arc<ApiSession>>;

/// Runs blocking model work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

fn png_base64(image: &RgbImage) -> Result<String, ApiError> {
    Ok(STANDARD.encode(encode_png(image)?))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub model_version: String,
    pub embedding_dim: usize,
}

async fn health(State(s): Shared) -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".into(),
        model_version: s.model.version().to_string(),
        embedding_dim: s.model.embedding_dim(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UploadRequest {
    /// Base64-encoded PNG.
    pub image: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct UploadResponse {
    pub image_id: String,
    pub height: usize,
    pub width: usize,
}

async fn upload(State(s): Shared, body: Result<Json<UploadRequest>, JsonRejection>) -> ApiResult<UploadResponse> {
    let Json(req) = body?;
    let bytes = STANDARD.decode(req.image.trim()).map_err(|e| ApiError::bad_request(format!("invalid base64: {e}")))?;
    if bytes.len() > s.config.max_upload_bytes {
        return Err(ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, "image exceeds the upload limit"));
    }
    let image = decode_png(&bytes)?;
    let (height, width) = image.shape();
    Ok(Json(UploadResponse { image_id: s.insert_image(image), height, width }))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodeRequest {
    pub image_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EncodeResponse {
    pub embedding: Vec<f64>,
}

async fn encode_image(State(s): Shared, body: Result<Json<EncodeRequest>, JsonRejection>) -> ApiResult<EncodeResponse> {
    let Json(req) = body?;
    let e = blocking(move || s.embedding(&req.image_id)).await?;
    Ok(Json(EncodeResponse { embedding: e.into_values() }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ImageResponse {
    /// Base64-encoded PNG.
    pub image: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferRequest {
    pub structure_id: String,
    pub colour_id: String,
    /// Overrides whether post-processing runs.
    #[serde(default)]
    pub post: Option<bool>,
}

async fn transfer(State(s): Shared, body: Result<Json<TransferRequest>, JsonRejection>) -> ApiResult<ImageResponse> {
    let Json(req) = body?;
    let image = blocking(move || {
        let (structure, colour) = (s.image(&req.structure_id)?, s.image(&req.colour_id)?);
        let out = transfer_colour(&s.model, &structure, &colour, &s.post_settings(req.post), s.config.seed)?;
        png_base64(&out)
    })
    .await?;
    Ok(Json(ImageResponse { image }))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditRequest {
    pub image_id: String,
    /// Entry index (as a string key) → new value.
    #[serde(default)]
    pub edits: BTreeMap<String, f64>,
    #[serde(default)]
    pub post: Option<bool>,
}

fn parse_edits(edits: &BTreeMap<String, f64>) -> Result<BTreeMap<usize, f64>, ApiError> {
    edits
        .iter()
        .map(|(k, &v)| {
            let i: usize = k.parse().map_err(|_| ApiError::bad_request(format!("edit key {k:?} is not an entry index")))?;
            if i >= EMBEDDING_DIM {
                return Err(ApiError::bad_request(format!("entry index {i} out of range [0,{EMBEDDING_DIM})")));
            }
            if !v.is_finite() {
                return Err(ApiError::bad_request(format!("edit value for entry {i} is not finite")));
            }
            Ok((i, v))
        })
        .collect()
}

async fn edit(State(s): Shared, body: Result<Json<EditRequest>, JsonRejection>) -> ApiResult<ImageResponse> {
    let Json(req) = body?;
    let edits = parse_edits(&req.edits)?;
    let image = blocking(move || {
        let img = s.image(&req.image_id)?;
        let out = edit_entries(&s.model, &img, &edits, &s.post_settings(req.post), s.config.seed)?;
        png_base64(&out)
    })
    .await?;
    Ok(Json(ImageResponse { image }))
}

#[derive(Debug, Deserialize)]
pub struct ActiveQuery {
    pub top: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ActiveEntriesResponse {
    /// Active entries by decreasing training variance.
    pub indices: Vec<usize>,
    pub variances: Vec<f64>,
    pub means: Vec<f64>,
    pub threshold_fraction: f64,
}

async fn active(State(s): Shared, query: Result<Query<ActiveQuery>, QueryRejection>) -> ApiResult<ActiveEntriesResponse> {
    let Query(q) = query?;
    let stats = s.model.embedding_stats();
    let threshold = s.config.active_threshold;
    let mut indices = active_entries_from_variances(&stats.variance, threshold)?;
    indices.sort_by(|&a, &b| stats.variance[b].total_cmp(&stats.variance[a]).then(a.cmp(&b)));
    if let Some(k) = q.top {
        indices.truncate(k);
    }
    Ok(Json(ActiveEntriesResponse {
        variances: indices.iter().map(|&i| stats.variance[i]).collect(),
        means: indices.iter().map(|&i| stats.mean[i]).collect(),
        indices,
        threshold_fraction: threshold,
    }))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRequest {
    #[serde(default)]
    pub waypoints: Option<Vec<Vec<f64>>>,
    /// Uploaded trajectory-building photos, connected in the given order.
    #[serde(default)]
    pub tbsp_image_ids: Option<Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrajectoryResponse {
    pub trajectory_id: String,
    pub waypoints: usize,
    pub arc_length: f64,
}

async fn create_trajectory(
    State(s): Shared,
    body: Result<Json<TrajectoryRequest>, JsonRejection>,
) -> ApiResult<TrajectoryResponse> {
    let Json(req) = body?;
    let t = blocking(move || {
        let t = match (req.waypoints, req.tbsp_image_ids) {
            (Some(w), None) => {
                let w = w.into_iter().map(ColourEmbedding::new).collect::<crate::Result<Vec<_>>>()?;
                Trajectory::new(w)?
            }
            (None, Some(ids)) => {
                let w = ids.iter().map(|id| s.embedding(id)).collect::<Result<Vec<_>, _>>()?;
                let labels = ids.into_iter().map(Some).collect();
                Trajectory::with_labels(w, labels)?
            }
            _ => return Err(ApiError::bad_request("give exactly one of waypoints or tbsp_image_ids")),
        };
        let (n, len) = (t.waypoints().len(), t.arc_length());
        Ok((s.insert_trajectory(t), n, len))
    })
    .await?;
    Ok(Json(TrajectoryResponse { trajectory_id: t.0, waypoints: t.1, arc_length: t.2 }))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApplyRequest {
    pub image_id: String,
    pub t: f64,
    /// Follow the curve parallel to the trajectory through the image's own
    /// embedding instead of the trajectory itself.
    #[serde(default)]
    pub parallel: bool,
    #[serde(default)]
    pub post: Option<bool>,
}

async fn apply_trajectory(
    State(s): Shared,
    Path(id): Path<String>,
    body: Result<Json<ApplyRequest>, JsonRejection>,
) -> ApiResult<ImageResponse> {
    let Json(req) = body?;
    let image = blocking(move || {
        let traj = s.trajectory(&id)?;
        let img = s.image(&req.image_id)?;
        let traj = if req.parallel { traj.parallel_curve(&s.embedding(&req.image_id)?)? } else { traj };
        let e = traj.point(req.t)?;
        let coeffs = coefficients_for(&s.model, None, &mut output_rng(s.config.seed, 0))?;
        let out = corrected_manipulation(&s.model, &img, &coeffs, &e, &s.post_settings(req.post))?;
        png_base64(&out)
    })
    .await?;
    Ok(Json(ImageResponse { image }))
}

async fn fallback() -> ApiError {
    ApiError::not_found("no such endpoint")
}

pub fn router(session: Arc<ApiSession>) -> Router {
    // base64 inflates by 4/3; leave room for the JSON envelope
    let body_limit = session.config.max_upload_bytes / 3 * 4 + 4096;
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/images", post(upload))
        .route("/v1/encode", post(encode_image))
        .route("/v1/transfer", post(transfer))
        .route("/v1/edit", post(edit))
        .route("/v1/model/active-entries", get(active))
        .route("/v1/trajectories", post(create_trajectory))
        .route("/v1/trajectories/{id}/apply", post(apply_trajectory))
        .fallback(fallback)
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(session)
}

/// Serves until ctrl-c.
pub async fn serve(session: Arc<ApiSession>, addr: SocketAddr) -> crate::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(session))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
