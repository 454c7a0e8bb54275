//! HTTP service behind the reader workstation. One server runs one session.
//! Responses go to an append-only CSV log through a single writer; reads
//! use a shared snapshot.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use panscreen_core::rng;
use panscreen_core::volume::{nifti, BinaryMask, ScalarVolume};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cohort::load_case;
use crate::manifest::Manifest;
use crate::reader::{read_responses, response_line, write_header, write_responses, ReaderResponse, Submission};
use crate::StudyError;

/// Volume shown to readers, with the AI's predicted lesion mask for
/// session 2.
#[derive(Debug, Clone)]
pub struct CaseImage {
    pub scalar: ScalarVolume,
    pub overlay: Option<BinaryMask>,
}

impl CaseImage {
    pub fn slices(&self) -> usize {
        self.scalar.geometry().dims()[2]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub session: u8,
    pub window: [f32; 2],
    pub order_seed: u64,
}

/// Append-only response log.
pub struct ResponseLog {
    path: PathBuf,
    file: File,
    keys: HashMap<(String, String, u8), usize>,
    responses: Vec<ReaderResponse>,
}

impl ResponseLog {
    /// Open `path`, replaying existing responses, or create it with a header.
    pub fn open(path: &Path) -> Result<Self, StudyError> {
        let responses = if path.is_file() && std::fs::metadata(path).map_err(|e| StudyError::io(path, e))?.len() > 0 {
            let f = File::open(path).map_err(|e| StudyError::io(path, e))?;
            read_responses(f)?
        } else {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| StudyError::io(dir, e))?;
            }
            let f = File::create(path).map_err(|e| StudyError::io(path, e))?;
            write_header(f)?;
            Vec::new()
        };
        let mut keys = HashMap::new();
        for (k, r) in responses.iter().enumerate() {
            let key = (r.reader_id.clone(), r.case_id.clone(), r.session);
            if keys.insert(key, k).is_some() {
                return Err(StudyError::Format(format!(
                    "{}: duplicate response for reader '{}', case '{}', session {}",
                    path.display(),
                    r.reader_id,
                    r.case_id,
                    r.session
                )));
            }
        }
        let file = OpenOptions::new().append(true).open(path).map_err(|e| StudyError::io(path, e))?;
        Ok(Self { path: path.to_path_buf(), file, keys, responses })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn responses(&self) -> &[ReaderResponse] {
        &self.responses
    }

    pub fn existing(&self, reader_id: &str, case_id: &str, session: u8) -> Option<&ReaderResponse> {
        self.keys.get(&(reader_id.to_string(), case_id.to_string(), session)).map(|&k| &self.responses[k])
    }

    /// Append one response and sync it to disk.
    pub fn append(&mut self, r: ReaderResponse) -> Result<(), StudyError> {
        let line = response_line(&r)?;
        self.file.write_all(&line).map_err(|e| StudyError::io(&self.path, e))?;
        self.file.sync_data().map_err(|e| StudyError::io(&self.path, e))?;
        self.keys.insert((r.reader_id.clone(), r.case_id.clone(), r.session), self.responses.len());
        self.responses.push(r);
        Ok(())
    }
}

type Clock = Arc<dyn Fn() -> String + Send + Sync>;

pub fn utc_now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

struct Inner {
    cfg: SessionConfig,
    cases: BTreeMap<String, CaseImage>,
    log: Mutex<ResponseLog>,
    snapshot: RwLock<Arc<Vec<ReaderResponse>>>,
    clock: Clock,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(cfg: SessionConfig, cases: BTreeMap<String, CaseImage>, log: ResponseLog) -> Result<Self, StudyError> {
        Self::with_clock(cfg, cases, log, Arc::new(utc_now))
    }

    pub fn with_clock(
        cfg: SessionConfig,
        cases: BTreeMap<String, CaseImage>,
        log: ResponseLog,
        clock: Clock,
    ) -> Result<Self, StudyError> {
        if !matches!(cfg.session, 1 | 2) {
            return Err(StudyError::Config(format!("session must be 1 or 2, got {}", cfg.session)));
        }
        if !(cfg.window[0] < cfg.window[1]) {
            return Err(StudyError::Config("window must be increasing".into()));
        }
        if cfg.session == 2 {
            let missing: Vec<&str> = cases.iter().filter(|(_, c)| c.overlay.is_none()).map(|(id, _)| id.as_str()).collect();
            if !missing.is_empty() {
                return Err(StudyError::Config(format!("session 2 needs AI overlays; missing for {}", missing.join(", "))));
            }
        }
        let snapshot = RwLock::new(Arc::new(log.responses().to_vec()));
        Ok(Self(Arc::new(Inner { cfg, cases, log: Mutex::new(log), snapshot, clock })))
    }

    pub fn responses(&self) -> Arc<Vec<ReaderResponse>> {
        self.0.snapshot.read().map(|s| s.clone()).unwrap_or_default()
    }
}

/// Load every manifest case. Overlays are read from
/// `<overlay_dir>/<id>_pred.nii` when a directory is given.
pub fn load_case_images(manifest: &Manifest, overlay_dir: Option<&Path>) -> Result<BTreeMap<String, CaseImage>, StudyError> {
    let mut out = BTreeMap::new();
    for row in &manifest.rows {
        let case = load_case(manifest, row)?;
        let overlay = match overlay_dir {
            Some(dir) => {
                let p = dir.join(format!("{}_pred.nii", row.id));
                let mask = nifti::read_mask(&p).map_err(|e| StudyError::nifti(&p, e))?;
                case.geometry().ensure_aligned(mask.geometry()).map_err(|e| StudyError::Format(format!("{}: {e}", p.display())))?;
                Some(mask)
            }
            None => None,
        };
        out.insert(row.id.clone(), CaseImage { scalar: case.scalar, overlay });
    }
    Ok(out)
}

/// Case order shown to one reader: a shuffle seeded by the reader id.
pub fn reader_order(ids: &[String], order_seed: u64, reader_id: &str) -> Vec<String> {
    let mut out = ids.to_vec();
    out.sort();
    let mut r = rng::stream(order_seed, rng::fnv1a(reader_id));
    out.shuffle(&mut r);
    out
}

pub fn window_u8(v: f32, window: [f32; 2]) -> u8 {
    let t = (v - window[0]) / (window[1] - window[0]);
    (t.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn slice_gray(img: &CaseImage, k: usize, window: [f32; 2]) -> Vec<u8> {
    let g = img.scalar.geometry();
    let [nx, ny, _] = g.dims();
    let mut out = Vec::with_capacity(nx * ny);
    for y in 0..ny {
        for x in 0..nx {
            out.push(window_u8(img.scalar.get(g.index(x, y, k)), window));
        }
    }
    out
}

/// In-plane contour pixels of the mask on slice `k`: mask pixels with a
/// 4-neighbour outside the mask or outside the slice.
pub fn contour(mask: &BinaryMask, k: usize) -> Vec<bool> {
    let g = mask.geometry();
    let [nx, ny, _] = g.dims();
    let inside = |x: i64, y: i64| x >= 0 && y >= 0 && (x as usize) < nx && (y as usize) < ny && mask.get(g.index(x as usize, y as usize, k));
    let mut out = vec![false; nx * ny];
    for y in 0..ny as i64 {
        for x in 0..nx as i64 {
            if inside(x, y) && [(1, 0), (-1, 0), (0, 1), (0, -1)].iter().any(|(dx, dy)| !inside(x + dx, y + dy)) {
                out[y as usize * nx + x as usize] = true;
            }
        }
    }
    out
}

pub fn encode_png(width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<Vec<u8>, StudyError> {
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| StudyError::Format(e.to_string()))?;
        w.write_image_data(data).map_err(|e| StudyError::Format(e.to_string()))?;
    }
    Ok(buf)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CaseEntry {
    pub id: String,
    pub slices: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CaseList {
    pub session: u8,
    pub cases: Vec<CaseEntry>,
}

#[derive(Debug, Deserialize)]
pub struct CasesQuery {
    pub reader_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub existing: Option<ReaderResponse>,
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(ErrorBody { error: msg.into(), existing: None })).into_response()
}

fn png_response(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn list_cases(State(s): State<AppState>, Query(q): Query<CasesQuery>) -> Response {
    if q.reader_id.trim().is_empty() {
        return error(StatusCode::BAD_REQUEST, "reader_id must be non-empty");
    }
    let ids: Vec<String> = s.0.cases.keys().cloned().collect();
    let cases = reader_order(&ids, s.0.cfg.order_seed, &q.reader_id)
        .into_iter()
        .map(|id| CaseEntry { slices: s.0.cases[&id].slices(), id })
        .collect();
    Json(CaseList { session: s.0.cfg.session, cases }).into_response()
}

fn lookup<'a>(s: &'a AppState, id: &str, k: usize) -> Result<&'a CaseImage, Response> {
    let img = s.0.cases.get(id).ok_or_else(|| error(StatusCode::NOT_FOUND, format!("unknown case '{id}'")))?;
    if k >= img.slices() {
        return Err(error(StatusCode::NOT_FOUND, format!("slice {k} outside 0..{}", img.slices())));
    }
    Ok(img)
}

async fn slice(State(s): State<AppState>, UrlPath((id, k)): UrlPath<(String, usize)>) -> Response {
    let img = match lookup(&s, &id, k) {
        Ok(img) => img,
        Err(r) => return r,
    };
    let [nx, ny, _] = img.scalar.geometry().dims();
    match encode_png(nx, ny, png::ColorType::Grayscale, &slice_gray(img, k, s.0.cfg.window)) {
        Ok(bytes) => png_response(bytes),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn overlay(State(s): State<AppState>, UrlPath((id, k)): UrlPath<(String, usize)>) -> Response {
    if s.0.cfg.session != 2 {
        return error(StatusCode::FORBIDDEN, "AI overlays are available in session 2 only");
    }
    let img = match lookup(&s, &id, k) {
        Ok(img) => img,
        Err(r) => return r,
    };
    let Some(mask) = &img.overlay else {
        return error(StatusCode::NOT_FOUND, format!("no overlay for case '{id}'"));
    };
    let [nx, ny, _] = img.scalar.geometry().dims();
    let gray = slice_gray(img, k, s.0.cfg.window);
    let edge = contour(mask, k);
    let mut rgb = Vec::with_capacity(3 * gray.len());
    for (&v, &e) in gray.iter().zip(&edge) {
        let px = if e { [255, 0, 0] } else { [v, v, v] };
        rgb.extend_from_slice(&px);
    }
    match encode_png(nx, ny, png::ColorType::Rgb, &rgb) {
        Ok(bytes) => png_response(bytes),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn submit(State(s): State<AppState>, Json(sub): Json<Submission>) -> Response {
    if let Err(e) = sub.validate() {
        return error(StatusCode::BAD_REQUEST, e);
    }
    if sub.session != s.0.cfg.session {
        return error(StatusCode::BAD_REQUEST, format!("this server runs session {}", s.0.cfg.session));
    }
    if !s.0.cases.contains_key(&sub.case_id) {
        return error(StatusCode::NOT_FOUND, format!("unknown case '{}'", sub.case_id));
    }
    let mut log = match s.0.log.lock() {
        Ok(l) => l,
        Err(_) => return error(StatusCode::INTERNAL_SERVER_ERROR, "response log unavailable"),
    };
    if let Some(prev) = log.existing(&sub.reader_id, &sub.case_id, sub.session) {
        let body = ErrorBody { error: "response already recorded".into(), existing: Some(prev.clone()) };
        return (StatusCode::CONFLICT, Json(body)).into_response();
    }
    let response = sub.stamped((s.0.clock)());
    if let Err(e) = log.append(response.clone()) {
        return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
    }
    if let Ok(mut snap) = s.0.snapshot.write() {
        *snap = Arc::new(log.responses().to_vec());
    }
    (StatusCode::CREATED, Json(response)).into_response()
}

async fn export(State(s): State<AppState>) -> Response {
    let mut buf = Vec::new();
    match write_responses(&mut buf, &s.responses()) {
        Ok(()) => ([(header::CONTENT_TYPE, "text/csv")], buf).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/cases", get(list_cases))
        .route("/cases/{id}/slice/{k}", get(slice))
        .route("/cases/{id}/overlay/{k}", get(overlay))
        .route("/responses", post(submit))
        .route("/export/responses", get(export))
        .with_state(state)
}

/// Bind `addr` and serve until the process is stopped.
pub async fn serve(addr: &str, state: AppState) -> Result<(), StudyError> {
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| StudyError::Config(format!("bind {addr}: {e}")))?;
    axum::serve(listener, router(state)).await.map_err(|e| StudyError::Format(e.to_string()))
}
