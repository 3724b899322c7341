//! REST facade over a dataset directory for the annotation front end.
//!
//! The manifest directory is the only store: submitted masks are written
//! next to it and registered in `manifest.json`, annotator profiles live in
//! `annotators.json`.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agreement::ProtocolThresholds;
use crate::config::CuratorConfig;
use crate::enhance::{enhance, EnhancementParams};
use crate::io::{self, IoError};
use crate::manifest::{save_manifest, AnnotationRecord, DatasetManifest, ManifestError};
use crate::mask::{self, LesionType, Mask};
use crate::pipeline::{agreement_for_image, file_stem, PipelineError};
use crate::postprocess::{postprocess, PostprocessParams};

pub const ANNOTATOR_HEADER: &str = "x-annotator-id";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorProfile {
    pub annotator_id: String,
    #[serde(default)]
    pub display_name: String,
    pub expertise: f64,
    #[serde(default)]
    pub band: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct NewAnnotator {
    pub annotator_id: String,
    #[serde(default)]
    pub display_name: String,
    #[serde(default)]
    pub expertise: Option<f64>,
    #[serde(default)]
    pub band: Option<String>,
}

/// Row-major runs alternating background and foreground, starting with
/// background (a leading 0 when the first pixel is foreground).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskRle {
    pub width: u32,
    pub height: u32,
    pub counts: Vec<u64>,
}

impl MaskRle {
    pub fn encode(mask: &Mask) -> Self {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u64;
        for &b in mask.bits() {
            if b != current {
                counts.push(run);
                run = 0;
                current = b;
            }
            run += 1;
        }
        counts.push(run);
        Self {
            width: mask.width(),
            height: mask.height(),
            counts,
        }
    }

    pub fn decode(&self) -> Result<Mask, String> {
        let total = self.width as u64 * self.height as u64;
        if self.counts.iter().sum::<u64>() != total {
            return Err(format!("run lengths do not sum to {}x{}", self.width, self.height));
        }
        let mut bits = Vec::with_capacity(total as usize);
        for (i, &n) in self.counts.iter().enumerate() {
            bits.extend(std::iter::repeat_n(i % 2 == 1, n as usize));
        }
        Mask::from_bits(self.width, self.height, bits).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Deserialize)]
pub struct Submission {
    pub lesion: LesionType,
    pub confidence: f64,
    #[serde(default)]
    pub mask_png: Option<String>,
    #[serde(default)]
    pub mask_rle: Option<MaskRle>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageListing {
    pub id: String,
    pub quality: Option<crate::manifest::QualityLabel>,
    pub predictions: Vec<LesionType>,
    pub annotations: usize,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(m: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, m)
    }

    fn not_found(m: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, m)
    }

    fn internal(m: impl ToString) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, m.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

impl From<IoError> for ApiError {
    fn from(e: IoError) -> Self {
        ApiError::internal(e)
    }
}

impl From<ManifestError> for ApiError {
    fn from(e: ManifestError) -> Self {
        ApiError::internal(e)
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub struct ServiceSettings {
    pub enhance: EnhancementParams,
    pub postprocess: PostprocessParams,
    pub thresholds: ProtocolThresholds,
}

impl From<&CuratorConfig> for ServiceSettings {
    fn from(c: &CuratorConfig) -> Self {
        Self {
            enhance: c.enhance,
            postprocess: c.postprocess.clone(),
            thresholds: c.agreement.clone(),
        }
    }
}

/// Shared state: the manifest behind a lock, profiles, per-image write locks
/// and caches of derived PNGs.
pub struct Store {
    manifest_path: PathBuf,
    dataset: RwLock<DatasetManifest>,
    profiles: RwLock<BTreeMap<String, AnnotatorProfile>>,
    image_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    derived: Mutex<HashMap<String, Arc<Vec<u8>>>>,
    settings: ServiceSettings,
}

pub fn profiles_path(root: &Path) -> PathBuf {
    root.join("annotators.json")
}

impl Store {
    pub fn open(manifest_path: impl Into<PathBuf>, settings: ServiceSettings) -> Result<Self, PipelineError> {
        let manifest_path = manifest_path.into();
        let dataset = DatasetManifest::load(&manifest_path)?;
        let ppath = profiles_path(dataset.root());
        let profiles = match std::fs::read_to_string(&ppath) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| IoError::Corrupt {
                path: ppath.clone(),
                detail: e.to_string(),
            })?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
            Err(source) => return Err(IoError::Io { path: ppath, source }.into()),
        };
        Ok(Self {
            manifest_path,
            dataset: RwLock::new(dataset),
            profiles: RwLock::new(profiles),
            image_locks: Mutex::new(HashMap::new()),
            derived: Mutex::new(HashMap::new()),
            settings,
        })
    }

    fn snapshot(&self) -> DatasetManifest {
        self.dataset.read().expect("manifest lock").clone()
    }

    fn image_lock(&self, id: &str) -> Arc<Mutex<()>> {
        self.image_locks
            .lock()
            .expect("lock table")
            .entry(id.to_string())
            .or_default()
            .clone()
    }

    fn cached(&self, key: String, make: impl FnOnce() -> ApiResult<Vec<u8>>) -> ApiResult<Arc<Vec<u8>>> {
        if let Some(v) = self.derived.lock().expect("cache lock").get(&key) {
            return Ok(v.clone());
        }
        let bytes = Arc::new(make()?);
        self.derived.lock().expect("cache lock").insert(key, bytes.clone());
        Ok(bytes)
    }
}

pub type AppState = Arc<Store>;

pub fn router(store: AppState) -> Router {
    Router::new()
        .route("/images", get(list_images))
        .route("/images/{id}/enhanced", get(enhanced))
        .route("/images/{id}/suggestions/{lesion}", get(suggestion))
        .route("/images/{id}/annotations", post(submit_annotation))
        .route("/images/{id}/annotations/{annotator}/{lesion}", get(annotation_mask))
        .route("/images/{id}/agreement", get(agreement))
        .route("/annotators", post(register_annotator).get(list_annotators))
        .with_state(store)
}

pub async fn serve(store: AppState, bind: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(store)).await
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?
}

pub fn etag(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    format!("\"{hex}\"")
}

fn png_response(bytes: &[u8], req: &HeaderMap) -> Response {
    let tag = etag(bytes);
    let matches = req
        .get(header::IF_NONE_MATCH)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.split(',').any(|t| t.trim() == tag || t.trim() == "*"));
    let mut resp = if matches {
        StatusCode::NOT_MODIFIED.into_response()
    } else {
        ([(header::CONTENT_TYPE, "image/png")], bytes.to_vec()).into_response()
    };
    resp.headers_mut()
        .insert(header::ETAG, HeaderValue::from_str(&tag).expect("hex etag"));
    resp
}

fn parse_lesion(s: &str) -> ApiResult<LesionType> {
    s.parse().map_err(|_| ApiError::bad_request(format!("unknown lesion type {s:?}")))
}

fn require_image(ds: &DatasetManifest, id: &str) -> ApiResult<()> {
    ds.entry(id)
        .map(|_| ())
        .ok_or_else(|| ApiError::not_found(format!("unknown image {id:?}")))
}

async fn list_images(State(store): State<AppState>) -> Json<Vec<ImageListing>> {
    let ds = store.snapshot();
    Json(
        ds.sorted_entries()
            .into_iter()
            .map(|e| ImageListing {
                id: e.id.clone(),
                quality: e.quality,
                predictions: e.predictions.keys().copied().collect(),
                annotations: e.annotations.len(),
            })
            .collect(),
    )
}

async fn enhanced(State(store): State<AppState>, UrlPath(id): UrlPath<String>, headers: HeaderMap) -> ApiResult<Response> {
    let ds = store.snapshot();
    require_image(&ds, &id)?;
    let s = store.clone();
    let bytes = blocking(move || {
        s.cached(format!("enhanced/{id}"), || {
            let entry = ds.entry(&id).expect("checked");
            let img = io::load_image(ds.image_path(entry))?;
            let out = enhance(&img, &s.settings.enhance).map_err(ApiError::internal)?;
            Ok(io::encode_png(&out)?)
        })
    })
    .await?;
    Ok(png_response(&bytes, &headers))
}

async fn suggestion(
    State(store): State<AppState>,
    UrlPath((id, lesion)): UrlPath<(String, String)>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let ds = store.snapshot();
    require_image(&ds, &id)?;
    let lesion = parse_lesion(&lesion)?;
    let Some(rel) = ds.entry(&id).and_then(|e| e.predictions.get(&lesion)).cloned() else {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            format!("no {lesion} prediction for image {id:?}"),
        ));
    };
    let s = store.clone();
    let bytes = blocking(move || {
        s.cached(format!("suggestion/{id}/{lesion}"), || {
            let img = io::load_image(ds.image_path(ds.entry(&id).expect("checked")))?;
            let m = io::load_mask(ds.resolve(&rel))?;
            let cleaned = postprocess(&img, &m, lesion, &s.settings.postprocess)
                .map_err(|e| ApiError::new(StatusCode::CONFLICT, e.to_string()))?;
            Ok(io::mask_to_png(&cleaned)?)
        })
    })
    .await?;
    Ok(png_response(&bytes, &headers))
}

async fn list_annotators(State(store): State<AppState>) -> Json<Vec<AnnotatorProfile>> {
    Json(store.profiles.read().expect("profiles lock").values().cloned().collect())
}

async fn register_annotator(
    State(store): State<AppState>,
    Json(req): Json<NewAnnotator>,
) -> ApiResult<(StatusCode, Json<AnnotatorProfile>)> {
    if req.annotator_id.trim().is_empty() {
        return Err(ApiError::bad_request("annotator_id is empty"));
    }
    let band = match &req.band {
        Some(label) => Some(mask::expertise_band(label).map_err(|e| ApiError::bad_request(e.to_string()))?),
        None => None,
    };
    let expertise = match (req.expertise, band) {
        (Some(e), _) => e,
        (None, Some(b)) => b.midpoint(),
        (None, None) => return Err(ApiError::bad_request("expertise or band is required")),
    };
    mask::check_unit("expertise", expertise).map_err(|e| ApiError::bad_request(e.to_string()))?;
    if let Some(b) = band {
        if !b.contains(expertise) {
            return Err(ApiError::bad_request(format!(
                "expertise {expertise} lies outside the {:?} band [{}, {}]",
                b.label, b.low, b.high
            )));
        }
    }
    let profile = AnnotatorProfile {
        annotator_id: req.annotator_id,
        display_name: req.display_name,
        expertise,
        band: band.map(|b| b.label.to_string()),
    };
    let s = store.clone();
    let p = profile.clone();
    let created = blocking(move || {
        let mut profiles = s.profiles.write().expect("profiles lock");
        let created = profiles.insert(p.annotator_id.clone(), p).is_none();
        let root = s.dataset.read().expect("manifest lock").root().to_path_buf();
        let text = serde_json::to_string_pretty(&*profiles).expect("profiles serialize");
        io::write_atomic(&profiles_path(&root), text.as_bytes())?;
        Ok(created)
    })
    .await?;
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(profile)))
}

fn decode_submission(
    headers: &HeaderMap,
    query: &HashMap<String, String>,
    body: &[u8],
) -> ApiResult<(LesionType, f64, Mask)> {
    let content_type = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .to_ascii_lowercase();
    let origin = Path::new("<upload>");
    if content_type.starts_with("image/png") {
        let (Some(lesion), Some(confidence)) = (query.get("lesion"), query.get("confidence")) else {
            return Err(ApiError::bad_request("PNG uploads need lesion and confidence query parameters"));
        };
        let confidence = confidence
            .parse::<f64>()
            .map_err(|e| ApiError::bad_request(format!("confidence: {e}")))?;
        let img = io::decode_image(body, origin).map_err(|e| ApiError::bad_request(e.to_string()))?;
        let m = Mask::from_gray(&img).map_err(|e| ApiError::bad_request(e.to_string()))?;
        return Ok((parse_lesion(lesion)?, confidence, m));
    }
    let sub: Submission = serde_json::from_slice(body).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let m = match (&sub.mask_png, &sub.mask_rle) {
        (Some(b64), None) => {
            let bytes = base64::engine::general_purpose::STANDARD
                .decode(b64.trim())
                .map_err(|e| ApiError::bad_request(format!("mask_png: {e}")))?;
            let img = io::decode_image(&bytes, origin).map_err(|e| ApiError::bad_request(e.to_string()))?;
            Mask::from_gray(&img).map_err(|e| ApiError::bad_request(e.to_string()))?
        }
        (None, Some(rle)) => rle.decode().map_err(ApiError::bad_request)?,
        _ => return Err(ApiError::bad_request("exactly one of mask_png and mask_rle is required")),
    };
    Ok((sub.lesion, sub.confidence, m))
}

pub fn annotation_rel_path(image_id: &str, annotator: &str, lesion: LesionType) -> String {
    format!("annotations/{}/{}.{lesion}.png", file_stem(image_id), file_stem(annotator))
}

async fn submit_annotation(
    State(store): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(query): Query<HashMap<String, String>>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<AnnotationRecord>)> {
    let annotator = headers
        .get(ANNOTATOR_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::to_string)
        .ok_or_else(|| ApiError::bad_request("missing X-Annotator-Id header"))?;
    require_image(&store.snapshot(), &id)?;
    let profile = store
        .profiles
        .read()
        .expect("profiles lock")
        .get(&annotator)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("unknown annotator {annotator:?}")))?;
    let (lesion, confidence, m) = decode_submission(&headers, &query, &body)?;
    mask::check_unit("confidence", confidence).map_err(|e| ApiError::bad_request(e.to_string()))?;

    let s = store.clone();
    let record = blocking(move || {
        let lock = s.image_lock(&id);
        let _guard = lock.lock().expect("image lock");
        let ds = s.snapshot();
        let img = io::load_image(ds.image_path(ds.entry(&id).expect("checked")))?;
        if m.dims() != (img.width(), img.height()) {
            return Err(ApiError::bad_request(format!(
                "mask is {}x{}, image is {}x{}",
                m.width(),
                m.height(),
                img.width(),
                img.height()
            )));
        }
        let rel = annotation_rel_path(&id, &annotator, lesion);
        io::save_mask(&m, ds.resolve(&rel))?;
        let record = AnnotationRecord {
            path: rel,
            annotator: annotator.clone(),
            lesion,
            confidence,
            expertise: profile.expertise,
        };
        let mut guard = s.dataset.write().expect("manifest lock");
        let mut manifest = guard.manifest().clone();
        let entry = manifest.images.iter_mut().find(|e| e.id == id).expect("checked");
        entry.annotations.retain(|a| !(a.annotator == annotator && a.lesion == lesion));
        entry.annotations.push(record.clone());
        save_manifest(&manifest, &s.manifest_path)?;
        *guard = DatasetManifest::from_parts(guard.root().to_path_buf(), manifest)?;
        Ok(record)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(record)))
}

async fn annotation_mask(
    State(store): State<AppState>,
    UrlPath((id, annotator, lesion)): UrlPath<(String, String, String)>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let ds = store.snapshot();
    require_image(&ds, &id)?;
    let lesion = parse_lesion(&lesion)?;
    let rec = ds
        .entry(&id)
        .and_then(|e| e.annotations.iter().find(|a| a.annotator == annotator && a.lesion == lesion))
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("no {lesion} annotation by {annotator:?}")))?;
    let bytes = blocking(move || Ok(io::mask_to_png(&io::load_mask(ds.resolve(&rec.path))?)?)).await?;
    Ok(png_response(&bytes, &headers))
}

#[derive(Debug, Deserialize)]
struct AgreementQuery {
    #[serde(default)]
    format: Option<String>,
}

async fn agreement(
    State(store): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<AgreementQuery>,
) -> ApiResult<Response> {
    let ds = store.snapshot();
    require_image(&ds, &id)?;
    let s = store.clone();
    let report = blocking(move || {
        let expertise: BTreeMap<String, f64> = s
            .profiles
            .read()
            .expect("profiles lock")
            .iter()
            .map(|(k, p)| (k.clone(), p.expertise))
            .collect();
        agreement_for_image(&ds, &id, &s.settings.thresholds, Some(&expertise)).map_err(ApiError::internal)
    })
    .await?;
    Ok(match q.format.as_deref() {
        Some("text") => ([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], report.to_text()).into_response(),
        _ => Json(report).into_response(),
    })
}
