//! HTTP session service. A session is calibrated once at creation; every
//! later query reads the same critical vector, so all bounds returned from
//! one session hold simultaneously.

use std::collections::HashMap;
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use permtdp::cluster::ReportJson;
use permtdp::io::SubsetFile;
use permtdp::{
    drill_down, threshold_clusters, Alternative, Analysis, AnalysisConfig, ClusterReport, Connectivity, FamilyKind,
    FamilySpec, SubjectContrasts, VoxelSubset, SCHEMA_VERSION,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::args::ServeArgs;
use crate::error::{CliError, CliResult};
use crate::input::{load_contrasts, scheme};

/// Body of `POST /sessions`. Paths resolve against the service's data
/// directory when one is configured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub data: PathBuf,
    #[serde(default)]
    pub mask: Option<PathBuf>,
    /// Group labels (1 or 2) for a two-sample design.
    #[serde(default)]
    pub labels: Option<Vec<u8>>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_family")]
    pub family: FamilyKind,
    #[serde(default)]
    pub delta: f64,
    #[serde(default = "default_w")]
    pub w: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub alternative: Alternative,
    /// Respond only once calibration is done; otherwise respond 202 at once.
    #[serde(default = "default_wait")]
    pub wait: bool,
}

fn default_alpha() -> f64 {
    0.05
}
fn default_family() -> FamilyKind {
    FamilyKind::SimesShift
}
fn default_w() -> usize {
    1000
}
fn default_wait() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
pub struct ClustersQuery {
    pub threshold: f64,
    #[serde(default)]
    pub connectivity: Option<Connectivity>,
    #[serde(default)]
    pub voxels: Option<u8>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct DrillRequest {
    /// History node whose report `cluster_id` refers to; defaults to the
    /// most recent cluster query.
    #[serde(default)]
    pub node: Option<usize>,
    #[serde(default)]
    pub cluster_id: Option<usize>,
    /// An explicit parent set instead of a cluster.
    #[serde(default)]
    pub voxels: Option<SubsetFile>,
    pub threshold: f64,
    #[serde(default)]
    pub connectivity: Option<Connectivity>,
    #[serde(default)]
    pub include_voxels: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Stat,
    Tdp,
}

#[derive(Debug, Clone, Deserialize)]
pub struct SliceQuery {
    /// x, y or z (or 0, 1, 2).
    pub axis: String,
    pub index: usize,
    #[serde(default = "default_layer")]
    pub layer: Layer,
    #[serde(default)]
    pub node: Option<usize>,
}

fn default_layer() -> Layer {
    Layer::Stat
}

/// One step of the drill history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub parent: Option<usize>,
    pub threshold: f64,
    pub connectivity: Connectivity,
    /// Cluster of the parent report that was drilled into.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_id: Option<usize>,
    /// Explicit parent voxels, when the drill named them directly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voxels: Option<Vec<usize>>,
    #[serde(skip)]
    report: Option<ClusterReport>,
}

#[derive(Debug, Default)]
struct History {
    nodes: Vec<Node>,
}

impl History {
    fn report(&self, id: usize) -> &ClusterReport {
        self.nodes[id].report.as_ref().expect("nodes carry their report")
    }

    fn latest_root(&self) -> Option<usize> {
        self.nodes
            .iter()
            .rev()
            .find(|n| n.parent.is_none() && n.voxels.is_none())
            .map(|n| n.id)
    }

    fn tree(&self, id: usize) -> Value {
        let n = &self.nodes[id];
        let r = self.report(id);
        let children: Vec<Value> = self
            .nodes
            .iter()
            .filter(|c| c.parent == Some(id))
            .map(|c| self.tree(c.id))
            .collect();
        json!({
            "id": n.id,
            "threshold": n.threshold,
            "connectivity": n.connectivity,
            "cluster_id": n.cluster_id,
            "explicit_voxels": n.voxels.as_ref().map(|v| v.len()),
            "clusters": r.clusters.len(),
            "children": children,
        })
    }
}

struct Session {
    analysis: Analysis,
    history: Mutex<History>,
}

impl Session {
    fn history(&self) -> std::sync::MutexGuard<'_, History> {
        self.history.lock().unwrap_or_else(|e| e.into_inner())
    }
}

struct Slot {
    id: String,
    request: CreateSession,
    progress: AtomicU64,
    state: OnceLock<Result<Arc<Session>, String>>,
}

impl Slot {
    fn progress(&self) -> f64 {
        f64::from_bits(self.progress.load(Ordering::Relaxed))
    }
}

pub struct AppState {
    sessions: RwLock<HashMap<String, Arc<Slot>>>,
    max_sessions: usize,
    data_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(data_dir: Option<PathBuf>, max_sessions: usize) -> Arc<Self> {
        Arc::new(AppState {
            sessions: RwLock::new(HashMap::new()),
            max_sessions,
            data_dir,
        })
    }

    /// Registers a session that never finishes computing; for tests of the
    /// 409 path.
    #[doc(hidden)]
    pub fn insert_pending(&self, request: CreateSession, progress: f64) -> String {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let slot = Slot {
            id: id.clone(),
            request,
            progress: AtomicU64::new(progress.to_bits()),
            state: OnceLock::new(),
        };
        self.sessions
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(id.clone(), Arc::new(slot));
        id
    }

    fn resolve(&self, p: &Path) -> Result<PathBuf, ApiError> {
        match &self.data_dir {
            None => Ok(p.to_path_buf()),
            Some(dir) => {
                if p.components()
                    .any(|c| !matches!(c, Component::Normal(_) | Component::CurDir))
                {
                    return Err(ApiError::new(
                        StatusCode::BAD_REQUEST,
                        format!("data reference {} must be relative to the data directory", p.display()),
                    ));
                }
                Ok(dir.join(p))
            }
        }
    }

    fn snapshot_dir(&self) -> Option<PathBuf> {
        self.data_dir.as_ref().map(|d| d.join("sessions"))
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, ApiError> {
        self.sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session '{id}'")))
    }

    fn ready(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        let slot = self.slot(id)?;
        match slot.state.get() {
            None => {
                Err(ApiError::new(StatusCode::CONFLICT, "session is still computing").with_progress(slot.progress()))
            }
            Some(Err(msg)) => Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                format!("session failed: {msg}"),
            )),
            Some(Ok(s)) => Ok(s.clone()),
        }
    }

    /// Writes the session's request and drill history so it can be rebuilt
    /// after a restart.
    fn snapshot(&self, slot: &Slot, session: &Session) {
        let Some(dir) = self.snapshot_dir() else { return };
        let history = session.history();
        let doc = json!({
            "schema_version": SCHEMA_VERSION,
            "id": slot.id,
            "request": slot.request,
            "history": history.nodes,
        });
        let write = std::fs::create_dir_all(&dir)
            .and_then(|_| std::fs::write(dir.join(format!("{}.json", slot.id)), doc.to_string()));
        if let Err(e) = write {
            log::warn!("could not snapshot session {}: {e}", slot.id);
        }
    }

    /// Rebuilds every snapshotted session. Analyses are deterministic, so
    /// the restored bounds equal the original ones.
    pub fn restore(self: &Arc<Self>) -> usize {
        let Some(dir) = self.snapshot_dir() else { return 0 };
        let Ok(entries) = std::fs::read_dir(&dir) else { return 0 };
        let mut restored = 0;
        for entry in entries.flatten() {
            let path = entry.path();
            let parsed = std::fs::read_to_string(&path)
                .ok()
                .and_then(|t| serde_json::from_str::<Value>(&t).ok())
                .and_then(|v| {
                    let id = v["id"].as_str()?.to_string();
                    let req: CreateSession = serde_json::from_value(v["request"].clone()).ok()?;
                    let nodes: Vec<Node> = serde_json::from_value(v["history"].clone()).ok()?;
                    Some((id, req, nodes))
                });
            let Some((id, req, nodes)) = parsed else {
                log::warn!("skipping unreadable snapshot {}", path.display());
                continue;
            };
            match self.build(&req).and_then(|(_, a)| replay(a, nodes)) {
                Ok(session) => {
                    let slot = Slot {
                        id: id.clone(),
                        request: req,
                        progress: AtomicU64::new(1f64.to_bits()),
                        state: OnceLock::new(),
                    };
                    let _ = slot.state.set(Ok(Arc::new(session)));
                    self.sessions
                        .write()
                        .unwrap_or_else(|e| e.into_inner())
                        .insert(id, Arc::new(slot));
                    restored += 1;
                }
                Err(e) => log::warn!("could not restore session {id}: {}", e.message),
            }
        }
        restored
    }

    fn load(&self, req: &CreateSession) -> Result<(SubjectContrasts, AnalysisConfig), ApiError> {
        let data = self.resolve(&req.data)?;
        let mask = req.mask.as_deref().map(|m| self.resolve(m)).transpose()?;
        let contrasts = load_contrasts(&data, mask.as_deref()).map_err(ApiError::from_cli)?;
        let config = AnalysisConfig {
            scheme: scheme(req.labels.clone(), req.w, req.seed),
            alternative: req.alternative,
            family: FamilySpec::new(req.family, req.delta),
            alpha: req.alpha,
        };
        Ok((contrasts, config))
    }

    fn build(&self, req: &CreateSession) -> Result<(SubjectContrasts, Analysis), ApiError> {
        let (contrasts, config) = self.load(req)?;
        let a = Analysis::run(&contrasts, config).map_err(|e| ApiError::from_cli(e.into()))?;
        Ok((contrasts, a))
    }
}

/// Recomputes every node's report from the stored thresholds and parents.
fn replay(analysis: Analysis, mut nodes: Vec<Node>) -> Result<Session, ApiError> {
    let mut history = History::default();
    for (k, mut n) in nodes.drain(..).enumerate() {
        if n.id != k || n.parent.is_some_and(|p| p >= k) {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "snapshot history is out of order",
            ));
        }
        let report = match (n.parent, &n.voxels) {
            (None, None) => analysis.clusters(n.threshold, n.connectivity),
            (_, Some(v)) => {
                VoxelSubset::new(v.clone(), analysis.m()).and_then(|s| analysis.drill(&s, n.threshold, n.connectivity))
            }
            (Some(p), None) => {
                let cid = n.cluster_id.unwrap_or(0);
                let parent = history
                    .report(p)
                    .clusters
                    .get(cid.wrapping_sub(1))
                    .ok_or_else(|| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "snapshot names a missing cluster"))?
                    .subset
                    .clone();
                analysis.drill(&parent, n.threshold, n.connectivity)
            }
        }
        .map_err(|e| ApiError::from_cli(e.into()))?;
        n.report = Some(report);
        history.nodes.push(n);
    }
    Ok(Session {
        analysis,
        history: Mutex::new(history),
    })
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    progress: Option<f64>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
            progress: None,
        }
    }

    fn with_progress(mut self, p: f64) -> Self {
        self.progress = Some(p);
        self
    }

    fn from_cli(e: CliError) -> Self {
        let status = match e.kind {
            crate::error::ErrorKind::Runtime => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError::new(status, e.message)
    }

    fn unprocessable(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }
}

impl From<permtdp::Error> for ApiError {
    fn from(e: permtdp::Error) -> Self {
        ApiError::from_cli(e.into())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut err = json!({ "status": self.status.as_u16(), "message": self.message });
        if let Some(p) = self.progress {
            err["progress"] = json!(p);
        }
        let body = json!({ "schema_version": SCHEMA_VERSION, "error": err });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

fn ok(v: Value) -> ApiResult {
    Ok(Json(v).into_response())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(session_status).delete(delete_session))
        .route("/sessions/{id}/clusters", get(clusters))
        .route("/sessions/{id}/drill", post(drill))
        .route("/sessions/{id}/tdp", post(tdp))
        .route("/sessions/{id}/slice", get(slice))
        .route("/sessions/{id}/history", get(history))
        .with_state(state)
}

fn status_json(slot: &Slot) -> Value {
    let mut v = json!({
        "schema_version": SCHEMA_VERSION,
        "id": slot.id,
        "alpha": slot.request.alpha,
        "family": slot.request.family,
        "delta": slot.request.delta,
        "w": slot.request.w,
        "seed": slot.request.seed,
    });
    match slot.state.get() {
        None => {
            v["status"] = json!("computing");
            v["progress"] = json!(slot.progress());
        }
        Some(Err(msg)) => {
            v["status"] = json!("failed");
            v["message"] = json!(msg);
        }
        Some(Ok(s)) => {
            let cal = s.analysis.calibration();
            v["status"] = json!("ready");
            v["progress"] = json!(1.0);
            v["lambda_alpha"] = json!(cal.lambda_alpha);
            v["powerless"] = json!(cal.powerless);
            v["m"] = json!(s.analysis.m());
        }
    }
    v
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> ApiResult {
    let Json(req) = body?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let slot = Arc::new(Slot {
        id: id.clone(),
        request: req.clone(),
        progress: AtomicU64::new(0f64.to_bits()),
        state: OnceLock::new(),
    });
    {
        let mut sessions = state.sessions.write().unwrap_or_else(|e| e.into_inner());
        if sessions.len() >= state.max_sessions {
            return Err(ApiError::new(
                StatusCode::SERVICE_UNAVAILABLE,
                format!("session limit of {} reached", state.max_sessions),
            ));
        }
        sessions.insert(id.clone(), slot.clone());
    }
    let remove = |state: &AppState| {
        state.sessions.write().unwrap_or_else(|e| e.into_inner()).remove(&id);
    };
    let st = state.clone();
    let req2 = req.clone();
    let loaded = tokio::task::spawn_blocking(move || st.load(&req2)).await;
    let (contrasts, config) = match loaded {
        Ok(Ok(x)) => x,
        Ok(Err(e)) => {
            remove(&state);
            return Err(e);
        }
        Err(e) => {
            remove(&state);
            return Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()));
        }
    };
    let worker_slot = slot.clone();
    let st = state.clone();
    let job = tokio::task::spawn_blocking(move || {
        let s = &worker_slot;
        let result = Analysis::run_with_progress(&contrasts, config, |stage| {
            s.progress.store(stage.fraction().to_bits(), Ordering::Relaxed);
        })
        .map(|analysis| {
            Arc::new(Session {
                analysis,
                history: Mutex::new(History::default()),
            })
        })
        .map_err(|e| e.to_string());
        if let Ok(session) = &result {
            st.snapshot(s, session);
        }
        let _ = s.state.set(result);
    });
    if !req.wait {
        let mut v = status_json(&slot);
        v["status"] = json!("computing");
        return Ok((StatusCode::ACCEPTED, Json(v)).into_response());
    }
    job.await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    match slot.state.get() {
        Some(Ok(_)) => Ok((StatusCode::CREATED, Json(status_json(&slot))).into_response()),
        Some(Err(msg)) => {
            let msg = msg.clone();
            remove(&state);
            Err(ApiError::unprocessable(msg))
        }
        None => Err(ApiError::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            "calibration ended without a result",
        )),
    }
}

async fn list_sessions(State(state): State<Arc<AppState>>) -> ApiResult {
    let sessions = state.sessions.read().unwrap_or_else(|e| e.into_inner());
    let mut ids: Vec<&String> = sessions.keys().collect();
    ids.sort();
    ok(json!({ "schema_version": SCHEMA_VERSION, "sessions": ids, "max_sessions": state.max_sessions }))
}

async fn session_status(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult {
    let slot = state.slot(&id)?;
    ok(status_json(&slot))
}

async fn delete_session(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult {
    let removed = state.sessions.write().unwrap_or_else(|e| e.into_inner()).remove(&id);
    if removed.is_none() {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown session '{id}'")));
    }
    if let Some(dir) = state.snapshot_dir() {
        let _ = std::fs::remove_file(dir.join(format!("{id}.json")));
    }
    Ok(StatusCode::NO_CONTENT.into_response())
}

fn check_threshold(t: f64) -> Result<(), ApiError> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(ApiError::unprocessable(format!("threshold must be finite, got {t}")))
    }
}

fn node_report(session: &Session, node: &Node, include_voxels: bool) -> Result<Value, ApiError> {
    let g = session
        .analysis
        .geometry()
        .ok_or_else(|| ApiError::unprocessable("session has no volume geometry"))?;
    let r: ReportJson = node
        .report
        .as_ref()
        .expect("nodes carry their report")
        .to_json(g, include_voxels);
    let mut v = serde_json::to_value(r).expect("reports serialize");
    v["node"] = json!(node.id);
    v["parent"] = json!(node.parent);
    Ok(v)
}

async fn clusters(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<ClustersQuery>,
) -> ApiResult {
    let session = state.ready(&id)?;
    check_threshold(q.threshold)?;
    let conn = q.connectivity.unwrap_or_default();
    let g = session
        .analysis
        .geometry()
        .ok_or_else(|| ApiError::unprocessable("session has no volume geometry"))?;
    let mut created = false;
    let value = {
        let mut h = session.history();
        let existing = h
            .nodes
            .iter()
            .find(|n| n.parent.is_none() && n.voxels.is_none() && n.threshold == q.threshold && n.connectivity == conn)
            .map(|n| n.id);
        let nid = match existing {
            Some(n) => n,
            None => {
                let subsets = threshold_clusters(session.analysis.observed_stats(), g, q.threshold, conn)?;
                let report = session.analysis.report(subsets, q.threshold, conn)?;
                let nid = h.nodes.len();
                h.nodes.push(Node {
                    id: nid,
                    parent: None,
                    threshold: q.threshold,
                    connectivity: conn,
                    cluster_id: None,
                    voxels: None,
                    report: Some(report),
                });
                created = true;
                nid
            }
        };
        node_report(&session, &h.nodes[nid], q.voxels == Some(1))?
    };
    if created {
        if let Ok(slot) = state.slot(&id) {
            state.snapshot(&slot, &session);
        }
    }
    ok(value)
}

async fn drill(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<DrillRequest>, JsonRejection>,
) -> ApiResult {
    let Json(req) = body?;
    let session = state.ready(&id)?;
    check_threshold(req.threshold)?;
    let m = session.analysis.m();
    let g = session
        .analysis
        .geometry()
        .ok_or_else(|| ApiError::unprocessable("session has no volume geometry"))?;
    let value = {
        let mut h = session.history();
        let parent = match (req.node, &req.voxels) {
            (Some(n), _) if n >= h.nodes.len() => {
                return Err(ApiError::new(
                    StatusCode::NOT_FOUND,
                    format!("unknown history node {n}"),
                ));
            }
            (Some(n), _) => Some(n),
            (None, Some(_)) => None,
            (None, None) => Some(
                h.latest_root()
                    .ok_or_else(|| ApiError::unprocessable("no cluster report to drill into; query clusters first"))?,
            ),
        };
        if let Some(p) = parent {
            let pt = h.nodes[p].threshold;
            if req.threshold <= pt {
                return Err(ApiError::unprocessable(format!(
                    "drill threshold {} must exceed the parent threshold {pt}",
                    req.threshold
                )));
            }
        }
        let (subset, cluster_id, explicit) = match (&req.voxels, req.cluster_id) {
            (Some(_), Some(_)) => return Err(ApiError::unprocessable("give either cluster_id or voxels, not both")),
            (Some(v), None) => {
                let s = v.resolve(m, Some(g))?;
                let idx = s.indices().to_vec();
                (s, None, Some(idx))
            }
            (None, Some(c)) => {
                let p = parent.expect("cluster drills always have a parent");
                let s = h
                    .report(p)
                    .clusters
                    .get(c.wrapping_sub(1))
                    .ok_or_else(|| ApiError::unprocessable(format!("node {p} has no cluster {c}")))?
                    .subset
                    .clone();
                (s, Some(c), None)
            }
            (None, None) => return Err(ApiError::unprocessable("drill needs cluster_id or voxels")),
        };
        let conn = req
            .connectivity
            .or_else(|| parent.map(|p| h.nodes[p].connectivity))
            .unwrap_or_default();
        let subsets = drill_down(&subset, session.analysis.observed_stats(), g, req.threshold, conn)?;
        let report = session.analysis.report(subsets, req.threshold, conn)?;
        let nid = h.nodes.len();
        h.nodes.push(Node {
            id: nid,
            parent,
            threshold: req.threshold,
            connectivity: conn,
            cluster_id,
            voxels: explicit,
            report: Some(report),
        });
        node_report(&session, &h.nodes[nid], req.include_voxels)?
    };
    if let Ok(slot) = state.slot(&id) {
        state.snapshot(&slot, &session);
    }
    ok(value)
}

async fn tdp(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<SubsetFile>, JsonRejection>,
) -> ApiResult {
    let Json(subset) = body?;
    let session = state.ready(&id)?;
    let s = subset.resolve(session.analysis.m(), session.analysis.geometry())?;
    let r = session.analysis.tdp(&s)?;
    ok(json!({
        "schema_version": SCHEMA_VERSION,
        "size": r.size,
        "lower_bound": r.lower_bound,
        "tdp": r.tdp(),
        "argmax_u": r.argmax_u,
    }))
}

const AXES: [&str; 3] = ["x", "y", "z"];

fn parse_axis(a: &str) -> Result<usize, ApiError> {
    match a {
        "x" | "0" => Ok(0),
        "y" | "1" => Ok(1),
        "z" | "2" => Ok(2),
        other => Err(ApiError::unprocessable(format!(
            "axis must be x, y or z, got '{other}'"
        ))),
    }
}

async fn slice(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<SliceQuery>,
) -> ApiResult {
    let session = state.ready(&id)?;
    let axis = parse_axis(&q.axis)?;
    let g = session
        .analysis
        .geometry()
        .ok_or_else(|| ApiError::unprocessable("session has no volume geometry"))?;
    let dims = g.dims();
    if q.index >= dims[axis] {
        return Err(ApiError::unprocessable(format!(
            "index {} outside 0..{} on axis {}",
            q.index, dims[axis], q.axis
        )));
    }
    let (node, values): (Option<usize>, Vec<f64>) = match q.layer {
        Layer::Stat => (None, session.analysis.observed_stats().to_vec()),
        Layer::Tdp => {
            let h = session.history();
            let nid = match q.node {
                Some(n) if n >= h.nodes.len() => {
                    return Err(ApiError::new(
                        StatusCode::NOT_FOUND,
                        format!("unknown history node {n}"),
                    ));
                }
                Some(n) => Some(n),
                None => h.nodes.len().checked_sub(1),
            };
            let map = match nid {
                Some(n) => h.report(n).tdp_map(g.m()),
                None => vec![0.0; g.m()],
            };
            (nid, map)
        }
    };
    // Rows run along the slower remaining axis, columns along the faster one.
    let (col_axis, row_axis) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let grid: Vec<Vec<Option<f64>>> = (0..dims[row_axis])
        .map(|r| {
            (0..dims[col_axis])
                .map(|c| {
                    let mut xyz = [0usize; 3];
                    xyz[axis] = q.index;
                    xyz[row_axis] = r;
                    xyz[col_axis] = c;
                    g.index_of(xyz.into()).map(|i| values[i])
                })
                .collect()
        })
        .collect();
    ok(json!({
        "schema_version": SCHEMA_VERSION,
        "axis": AXES[axis],
        "index": q.index,
        "layer": q.layer,
        "node": node,
        "width": dims[col_axis],
        "height": dims[row_axis],
        "values": grid,
    }))
}

async fn history(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult {
    let session = state.ready(&id)?;
    let h = session.history();
    let roots: Vec<Value> = h
        .nodes
        .iter()
        .filter(|n| n.parent.is_none())
        .map(|n| h.tree(n.id))
        .collect();
    ok(json!({ "schema_version": SCHEMA_VERSION, "roots": roots }))
}

pub async fn serve(args: ServeArgs) -> std::io::Result<()> {
    let state = AppState::new(args.data_dir, args.max_sessions);
    let restored = state.restore();
    if restored > 0 {
        log::info!("restored {restored} sessions");
    }
    let listener = tokio::net::TcpListener::bind(args.bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

pub fn serve_blocking(args: ServeArgs) -> CliResult<()> {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::runtime(e.to_string()))?;
    rt.block_on(serve(args))
        .map_err(|e| CliError::usage(format!("serve: {e}")))
}
