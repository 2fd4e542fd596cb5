//! `/v1` HTTP inference service over a read-only checkpoint.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Semaphore;
use uniisp_core::apps::DEFAULT_SPLICE_TAU;
use uniisp_core::synth::ExifParams;
use uniisp_core::SrgbImage;

use crate::engine::Engine;
use crate::io::{decode_b64, decode_png, encode_b64, encode_png, png_dimensions, png_to_xyz, xyz_to_png, XYZ_PNG_SCALE};

pub const API_VERSION: u32 = 1;
pub const DEFAULT_MAX_SIDE: u32 = 1024;
pub const ALPHA_RANGE: (f64, f64) = (-2.0, 3.0);
const BODY_LIMIT: usize = 64 << 20;
const ENDPOINTS: [&str; 8] = ["cameras", "invert", "render", "transfer", "interpolate", "identify", "splice", "schema"];

#[derive(Clone, Debug)]
pub struct ServeOptions {
    pub workers: usize,
    pub max_side: u32,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions { workers: std::thread::available_parallelism().map_or(1, |n| n.get()), max_side: DEFAULT_MAX_SIDE }
    }
}

/// Session state: the loaded checkpoint never changes after startup.
pub struct Session {
    engine: Engine,
    pool: Semaphore,
    max_side: u32,
    counters: [AtomicU64; ENDPOINTS.len()],
}

impl Session {
    pub fn new(engine: Engine, opts: &ServeOptions) -> Self {
        Session {
            engine,
            pool: Semaphore::new(opts.workers.max(1)),
            max_side: opts.max_side,
            counters: Default::default(),
        }
    }

    fn count(&self, endpoint: &str) {
        if let Some(i) = ENDPOINTS.iter().position(|e| *e == endpoint) {
            self.counters[i].fetch_add(1, Ordering::Relaxed);
        }
    }

    pub fn request_counts(&self) -> Vec<(&'static str, u64)> {
        ENDPOINTS.iter().zip(&self.counters).map(|(e, c)| (*e, c.load(Ordering::Relaxed))).collect()
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<anyhow::Error> for ApiError {
    fn from(e: anyhow::Error) -> Self {
        use uniisp_core::Error as E;
        let status = match e.downcast_ref::<E>() {
            Some(E::UnknownCamera(_)) => StatusCode::UNPROCESSABLE_ENTITY,
            Some(E::InvalidArgument(_) | E::InvalidImage(_) | E::Shape(_)) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, format!("{e:#}"))
    }
}

impl From<uniisp_core::Error> for ApiError {
    fn from(e: uniisp_core::Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "status": self.status.as_u16(), "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExifPayload {
    exposure_time: Option<f64>,
    iso: Option<f64>,
    f_number: Option<f64>,
}

impl ExifPayload {
    fn resolve(&self) -> Result<ExifParams, ApiError> {
        let u = ExifParams::unity();
        let e = ExifParams {
            exposure_time: self.exposure_time.unwrap_or(u.exposure_time),
            iso: self.iso.unwrap_or(u.iso),
            f_number: self.f_number.unwrap_or(u.f_number),
        };
        e.validate().map_err(|err| ApiError::bad_request(err.to_string()))?;
        Ok(e)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModuleRequest {
    image: String,
    #[serde(default)]
    camera: Option<String>,
    #[serde(default)]
    exif: ExifPayload,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TransferRequest {
    image: String,
    source: String,
    target: String,
    #[serde(default)]
    exif: ExifPayload,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InterpolateRequest {
    image: String,
    source: String,
    target: String,
    alpha: f64,
    #[serde(default)]
    exif: ExifPayload,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IdentifyRequest {
    image: String,
    #[serde(default)]
    candidates: Option<Vec<String>>,
    #[serde(default)]
    exif: ExifPayload,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpliceRequest {
    image: String,
    camera: String,
    #[serde(default)]
    tau: Option<f64>,
    #[serde(default)]
    exif: ExifPayload,
}

#[derive(Serialize)]
struct CameraEntry {
    id: String,
    display_name: String,
}

pub fn display_name(id: &str) -> String {
    match id.strip_prefix("cam") {
        Some(n) if !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()) => format!("Camera {n}"),
        _ => id.to_string(),
    }
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed request: {e}")))
}

/// Base64 PNG to raster bytes, enforcing the size cap before decoding pixels.
fn image_bytes(session: &Session, b64: &str) -> Result<Vec<u8>, ApiError> {
    let bytes = decode_b64(b64).map_err(|e| ApiError::bad_request(format!("image: {e:#}")))?;
    let (w, h) = png_dimensions(&bytes).map_err(|e| ApiError::bad_request(format!("image: {e:#}")))?;
    if w > session.max_side || h > session.max_side {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            format!("image is {w}×{h}; the limit is {0}×{0}", session.max_side),
        ));
    }
    if w == 0 || h == 0 {
        return Err(ApiError::bad_request("image is empty"));
    }
    Ok(bytes)
}

fn srgb_from(bytes: &[u8]) -> Result<SrgbImage, ApiError> {
    let r = decode_png(bytes).map_err(|e| ApiError::bad_request(format!("image: {e:#}")))?;
    Ok(SrgbImage::new(r)?)
}

fn camera(session: &Session, id: &str) -> Result<(), ApiError> {
    Ok(session.engine.check_camera(id)?)
}

/// Runs `f` on the blocking pool once a worker slot is free.
async fn compute<F>(session: Arc<Session>, f: F) -> ApiResult
where
    F: FnOnce(&Session) -> Result<Value, ApiError> + Send + 'static,
{
    let permit = session.pool.acquire().await.map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "shutting down"))?;
    let s = session.clone();
    let out = tokio::task::spawn_blocking(move || f(&s))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")))?;
    drop(permit);
    out.map(Json)
}

async fn cameras(State(s): State<Arc<Session>>) -> Json<Value> {
    s.count("cameras");
    let list: Vec<CameraEntry> = s.engine.model.cameras().iter().map(|id| CameraEntry { id: id.clone(), display_name: display_name(id) }).collect();
    Json(json!({ "api_version": API_VERSION, "checkpoint": s.engine.checkpoint_id, "cameras": list }))
}

async fn invert(State(s): State<Arc<Session>>, body: Bytes) -> ApiResult {
    s.count("invert");
    let req: ModuleRequest = parse(&body)?;
    let exif = req.exif.resolve()?;
    if let Some(c) = &req.camera {
        camera(&s, c)?;
    }
    let bytes = image_bytes(&s, &req.image)?;
    compute(s, move |s| {
        let img = srgb_from(&bytes)?;
        let xyz = s.engine.invert(&img, req.camera.as_deref(), &exif)?;
        Ok(json!({ "image": encode_b64(&xyz_to_png(&xyz)?), "camera": req.camera, "xyz_scale": XYZ_PNG_SCALE }))
    })
    .await
}

async fn render(State(s): State<Arc<Session>>, body: Bytes) -> ApiResult {
    s.count("render");
    let req: ModuleRequest = parse(&body)?;
    let exif = req.exif.resolve()?;
    if let Some(c) = &req.camera {
        camera(&s, c)?;
    }
    let bytes = image_bytes(&s, &req.image)?;
    compute(s, move |s| {
        let xyz = png_to_xyz(&bytes).map_err(|e| ApiError::bad_request(format!("image: {e:#}")))?;
        let img = s.engine.render(&xyz, req.camera.as_deref(), &exif)?;
        Ok(json!({ "image": encode_b64(&encode_png(img.raster())?), "camera": req.camera }))
    })
    .await
}

async fn transfer(State(s): State<Arc<Session>>, body: Bytes) -> ApiResult {
    s.count("transfer");
    let req: TransferRequest = parse(&body)?;
    let exif = req.exif.resolve()?;
    camera(&s, &req.source)?;
    camera(&s, &req.target)?;
    let bytes = image_bytes(&s, &req.image)?;
    compute(s, move |s| {
        let img = s.engine.transfer(&srgb_from(&bytes)?, &req.source, &req.target, &exif)?;
        Ok(json!({ "image": encode_b64(&encode_png(img.raster())?), "source": req.source, "target": req.target }))
    })
    .await
}

async fn interpolate(State(s): State<Arc<Session>>, body: Bytes) -> ApiResult {
    s.count("interpolate");
    let req: InterpolateRequest = parse(&body)?;
    if !req.alpha.is_finite() {
        return Err(ApiError::bad_request("alpha must be finite"));
    }
    let alpha = req.alpha.clamp(ALPHA_RANGE.0, ALPHA_RANGE.1);
    let exif = req.exif.resolve()?;
    camera(&s, &req.source)?;
    camera(&s, &req.target)?;
    let bytes = image_bytes(&s, &req.image)?;
    compute(s, move |s| {
        let img = s.engine.interpolate(&srgb_from(&bytes)?, &req.source, &req.target, alpha, &exif)?;
        Ok(json!({ "image": encode_b64(&encode_png(img.raster())?), "source": req.source, "target": req.target, "alpha": alpha }))
    })
    .await
}

async fn identify(State(s): State<Arc<Session>>, body: Bytes) -> ApiResult {
    s.count("identify");
    let req: IdentifyRequest = parse(&body)?;
    let exif = req.exif.resolve()?;
    let candidates = req.candidates.unwrap_or_else(|| s.engine.model.cameras().to_vec());
    if candidates.is_empty() {
        return Err(ApiError::bad_request("candidates must not be empty"));
    }
    for c in &candidates {
        camera(&s, c)?;
    }
    let bytes = image_bytes(&s, &req.image)?;
    compute(s, move |s| {
        let ids: Vec<&str> = candidates.iter().map(String::as_str).collect();
        let r = s.engine.identify(&srgb_from(&bytes)?, &ids, &exif)?;
        Ok(json!({ "scores": r.scores.iter().map(|(c, v)| json!({ "camera": c, "ssim": v })).collect::<Vec<_>>(), "predicted": r.predicted, "margin": r.margin }))
    })
    .await
}

async fn splice(State(s): State<Arc<Session>>, body: Bytes) -> ApiResult {
    s.count("splice");
    let req: SpliceRequest = parse(&body)?;
    let tau = req.tau.unwrap_or(DEFAULT_SPLICE_TAU);
    if !tau.is_finite() {
        return Err(ApiError::bad_request("tau must be finite"));
    }
    let exif = req.exif.resolve()?;
    camera(&s, &req.camera)?;
    let bytes = image_bytes(&s, &req.image)?;
    compute(s, move |s| {
        let m = s.engine.splice(&srgb_from(&bytes)?, &req.camera, &exif, tau)?;
        let ssim01 = m.ssim_map.map(|v| 0.5 * (v + 1.0));
        Ok(json!({
            "camera": req.camera,
            "tau": m.tau,
            "suspicious_fraction": m.suspicious_fraction(),
            "mean_ssim": m.ssim_map.mean(),
            "mask": encode_b64(&encode_png(&m.mask)?),
            "ssim_map": encode_b64(&encode_png(&ssim01)?),
        }))
    })
    .await
}

async fn schema(State(s): State<Arc<Session>>) -> Json<Value> {
    s.count("schema");
    Json(schema_document(s.max_side))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "no such endpoint")
}

/// OpenAPI-style description of the `/v1` endpoints.
pub fn schema_document(max_side: u32) -> Value {
    let image = json!({ "type": "string", "format": "base64 PNG" });
    let exif = json!({
        "type": "object",
        "optional": true,
        "properties": { "exposure_time": { "type": "number" }, "iso": { "type": "number" }, "f_number": { "type": "number" } }
    });
    let errors = json!({
        "400": "malformed JSON, base64 or PNG; invalid EXIF or parameters",
        "413": format!("image larger than {max_side}×{max_side}"),
        "422": "camera not registered in the checkpoint"
    });
    json!({
        "openapi": "3.0-style",
        "info": { "title": "uniisp inference service", "version": format!("v{API_VERSION}") },
        "notes": [
            format!("XYZ images are 16-bit PNGs holding XYZ / {XYZ_PNG_SCALE}."),
            "sRGB outputs are 16-bit PNGs; inputs may be 8- or 16-bit.",
            "Inputs are reflect-padded to the model's spatial multiple and outputs cropped back.",
            "Identical requests produce identical responses."
        ],
        "paths": {
            "/v1/cameras": { "get": { "response": { "api_version": "integer", "checkpoint": "string", "cameras": [{ "id": "string", "display_name": "string" }] } } },
            "/v1/invert": { "post": { "request": { "image": image, "camera": "string | null (neutral)", "exif": exif }, "response": { "image": "base64 PNG (XYZ)", "camera": "string | null", "xyz_scale": "number" }, "errors": errors } },
            "/v1/render": { "post": { "request": { "image": "base64 PNG (XYZ)", "camera": "string | null (neutral)", "exif": exif }, "response": { "image": image, "camera": "string | null" }, "errors": errors } },
            "/v1/transfer": { "post": { "request": { "image": image, "source": "string", "target": "string", "exif": exif }, "response": { "image": image, "source": "string", "target": "string" }, "errors": errors } },
            "/v1/interpolate": { "post": { "request": { "image": image, "source": "string", "target": "string", "alpha": format!("number, clamped to [{}, {}]", ALPHA_RANGE.0, ALPHA_RANGE.1), "exif": exif }, "response": { "image": image, "source": "string", "target": "string", "alpha": "number (after clamping)" }, "errors": errors } },
            "/v1/identify": { "post": { "request": { "image": image, "candidates": "string[] (default: all cameras)", "exif": exif }, "response": { "scores": [{ "camera": "string", "ssim": "number" }], "predicted": "string", "margin": "number" }, "errors": errors } },
            "/v1/splice": { "post": { "request": { "image": image, "camera": "string", "tau": format!("number (default {DEFAULT_SPLICE_TAU})"), "exif": exif }, "response": { "camera": "string", "tau": "number", "suspicious_fraction": "number", "mean_ssim": "number", "mask": "base64 PNG (gray, 1 = suspicious)", "ssim_map": "base64 PNG (gray, (ssim + 1) / 2)" }, "errors": errors } },
            "/v1/schema": { "get": { "response": "this document" } }
        }
    })
}

pub fn router(session: Arc<Session>) -> Router {
    Router::new()
        .route("/v1/cameras", get(cameras))
        .route("/v1/invert", post(invert))
        .route("/v1/render", post(render))
        .route("/v1/transfer", post(transfer))
        .route("/v1/interpolate", post(interpolate))
        .route("/v1/identify", post(identify))
        .route("/v1/splice", post(splice))
        .route("/v1/schema", get(schema))
        .fallback(not_found)
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(session)
}

pub async fn serve(engine: Engine, addr: SocketAddr, opts: ServeOptions) -> anyhow::Result<()> {
    let session = Arc::new(Session::new(engine, &opts));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!(
        "serving checkpoint {} ({} cameras) on http://{} with {} workers",
        session.engine.checkpoint_id,
        session.engine.model.cameras().len(),
        listener.local_addr()?,
        opts.workers
    );
    let app = router(session.clone());
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    log::info!("request counts: {:?}", session.request_counts());
    Ok(())
}
