//! HTTP API for the labeling console.
//!
//! Every route is mounted under both `/api` and `/api/v1`. Errors carry a
//! JSON body `{"error": kind, "detail": message}`. GET responses are pure
//! views of session and run-directory state.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use pws_core::analysis::{lf_stats, LfStats, Report};
use pws_core::calibration::CalibrationStore;
use pws_core::data::{load_dataset, read_vote_matrix};
use pws_core::gateway::{BackendStats, Gateway};
use pws_core::label_model::LabelModelConfig;
use pws_core::pipeline::{
    build_gateway, run_label_quality, LabelQualityRequest, RunConfig, RunRecord,
};
use pws_core::prompt::{run_lf, LabelerSuite, LfSpec, ABSTAIN};
use pws_core::{Dataset, Error, Vote, VoteMatrix};

/// Preview sample size when the request does not set one.
pub const DEFAULT_PREVIEW: usize = 50;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub error: &'static str,
    pub detail: String,
}

#[derive(Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub detail: String,
}

impl ApiError {
    fn new(status: StatusCode, error: &'static str, detail: impl Into<String>) -> Self {
        Self {
            status,
            error,
            detail: detail.into(),
        }
    }

    fn not_found(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", detail)
    }

    fn bad_request(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "validation", detail)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, kind) = match &e {
            _ if e.is_backend() => (StatusCode::BAD_GATEWAY, "backend"),
            Error::Validation(_)
            | Error::Config(_)
            | Error::Contract(_)
            | Error::Render(_)
            | Error::Parse { .. } => (StatusCode::BAD_REQUEST, "validation"),
            Error::Load { .. } => (StatusCode::NOT_FOUND, "not_found"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self::new(status, kind, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.error.to_string(),
            detail: self.detail,
        };
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct RunKey {
    suite_hash: String,
    calibrate: bool,
    split: String,
}

/// Mutable session: the draft suite and what has been run from it.
pub struct SessionState {
    pub dataset: Dataset,
    pub suite: LabelerSuite,
    last_runs: BTreeMap<RunKey, String>,
    statuses: BTreeMap<String, (RunStatus, Option<String>)>,
}

impl SessionState {
    pub fn suite_hash(&self) -> String {
        self.suite.hash()
    }
}

pub struct AppState {
    /// Suite mutations take the write lock; everything else reads.
    pub session: RwLock<SessionState>,
    pub gateway: Arc<Gateway>,
    pub runs_root: PathBuf,
    pub null_inputs: Vec<String>,
    pub label: LabelModelConfig,
    /// Gold-bearing split used for previews and default runs.
    pub dev_split: String,
}

pub type Shared = Arc<AppState>;

impl AppState {
    /// Session over the dataset, suite and backends of a run config. Console
    /// runs live under `{output}/console`.
    pub fn from_config(config: &RunConfig) -> pws_core::Result<Self> {
        let dataset = load_dataset(config.dataset_dir())?;
        let suite = LabelerSuite::load(config.labelers_path(), &dataset.class_space)?;
        dataset.split(&config.report_split)?.require_gold()?;
        Ok(Self {
            session: RwLock::new(SessionState {
                dataset,
                suite,
                last_runs: BTreeMap::new(),
                statuses: BTreeMap::new(),
            }),
            gateway: Arc::new(build_gateway(config)?),
            runs_root: config.output_dir().join("console"),
            null_inputs: config.null_inputs(),
            label: config.label.clone(),
            dev_split: config.report_split.clone(),
        })
    }

    fn run_dir(&self, id: &str) -> Result<PathBuf, ApiError> {
        if id.is_empty() || !id.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(ApiError::not_found(format!("no run `{id}`")));
        }
        Ok(self.runs_root.join(id))
    }
}

#[derive(Serialize)]
pub struct SplitView {
    pub n: usize,
    pub labeled: bool,
}

#[derive(Serialize)]
pub struct DatasetView {
    pub classes: Vec<String>,
    pub positive: String,
    pub prior: Vec<f64>,
    pub dev_split: String,
    pub splits: BTreeMap<String, SplitView>,
}

async fn get_dataset(State(app): State<Shared>) -> ApiResult<DatasetView> {
    let s = app.session.read().unwrap();
    let cs = &s.dataset.class_space;
    Ok(Json(DatasetView {
        classes: cs.names().to_vec(),
        positive: cs.name(cs.positive_index()).to_string(),
        prior: s.dataset.prior.clone(),
        dev_split: app.dev_split.clone(),
        splits: s
            .dataset
            .splits
            .iter()
            .map(|(k, v)| {
                (
                    k.clone(),
                    SplitView {
                        n: v.len(),
                        labeled: v.gold().is_some(),
                    },
                )
            })
            .collect(),
    }))
}

#[derive(Serialize, Deserialize)]
pub struct LabelerView {
    #[serde(flatten)]
    pub spec: LfSpec,
    pub polarity: Vec<String>,
}

#[derive(Serialize, Deserialize)]
pub struct LabelersView {
    pub suite_hash: String,
    pub labelers: Vec<LabelerView>,
}

fn labeler_view(spec: LfSpec, suite: &LabelerSuite) -> LabelerView {
    let polarity = suite
        .get(&spec.name)
        .map(|lf| {
            lf.polarity()
                .into_iter()
                .map(|c| suite.class_space.name(c).to_string())
                .collect()
        })
        .unwrap_or_default();
    LabelerView { spec, polarity }
}

fn labelers_view(suite: &LabelerSuite) -> LabelersView {
    LabelersView {
        suite_hash: suite.hash(),
        labelers: suite
            .specs()
            .into_iter()
            .map(|s| labeler_view(s, suite))
            .collect(),
    }
}

async fn get_labelers(State(app): State<Shared>) -> ApiResult<LabelersView> {
    Ok(Json(labelers_view(&app.session.read().unwrap().suite)))
}

async fn put_labelers(
    State(app): State<Shared>,
    Json(specs): Json<Vec<LfSpec>>,
) -> ApiResult<LabelersView> {
    let mut s = app.session.write().unwrap();
    let suite = LabelerSuite::from_specs(&specs, &s.dataset.class_space)?;
    s.suite = suite;
    Ok(Json(labelers_view(&s.suite)))
}

async fn get_labeler(
    State(app): State<Shared>,
    UrlPath(name): UrlPath<String>,
) -> ApiResult<LabelerView> {
    let s = app.session.read().unwrap();
    let spec = s
        .suite
        .specs()
        .into_iter()
        .find(|l| l.name == name)
        .ok_or_else(|| ApiError::not_found(format!("no labeler `{name}`")))?;
    Ok(Json(labeler_view(spec, &s.suite)))
}

#[derive(Serialize, Deserialize)]
pub struct LabelerUpdate {
    pub suite_hash: String,
    pub labeler: LabelerView,
}

/// Replaces the named labeler, or appends it when absent.
async fn put_labeler(
    State(app): State<Shared>,
    UrlPath(name): UrlPath<String>,
    Json(spec): Json<LfSpec>,
) -> ApiResult<LabelerUpdate> {
    if spec.name != name {
        return Err(ApiError::bad_request(format!(
            "body names `{}` but the path names `{name}`",
            spec.name
        )));
    }
    let mut s = app.session.write().unwrap();
    let mut specs = s.suite.specs();
    match specs.iter_mut().find(|l| l.name == name) {
        Some(slot) => *slot = spec.clone(),
        None => specs.push(spec.clone()),
    }
    s.suite = LabelerSuite::from_specs(&specs, &s.dataset.class_space)?;
    let labeler = labeler_view(spec, &s.suite);
    Ok(Json(LabelerUpdate {
        suite_hash: s.suite.hash(),
        labeler,
    }))
}

#[derive(Deserialize)]
pub struct PreviewRequest {
    pub lf: LfSpec,
    #[serde(default)]
    pub sample: Option<usize>,
    #[serde(default)]
    pub calibrate: bool,
}

#[derive(Serialize, Deserialize)]
pub struct PreviewExample {
    pub example_id: String,
    pub prompt: Option<String>,
    pub scored: Vec<(String, f64)>,
    pub calibrated: Option<Vec<f64>>,
    /// Class name, or null for abstention.
    pub vote: Option<String>,
    pub gold: Option<String>,
    pub error: Option<String>,
}

#[derive(Serialize, Deserialize)]
pub struct PreviewResponse {
    pub examples: Vec<PreviewExample>,
    pub stats: Option<LfStats>,
}

/// Runs one drafted labeler on the first `sample` dev examples.
pub fn preview_lf(app: &AppState, req: &PreviewRequest) -> Result<PreviewResponse, ApiError> {
    let (lf, split, classes) = {
        let s = app.session.read().unwrap();
        let lf = req.lf.compile(&s.dataset.class_space)?;
        let split = s.dataset.split(&app.dev_split)?.clone();
        (lf, split, s.dataset.class_space.clone())
    };
    if !app.gateway.has_backend(&lf.backend) {
        return Err(ApiError::bad_request(format!(
            "backend `{}` is not configured",
            lf.backend
        )));
    }
    let size = req.sample.unwrap_or(DEFAULT_PREVIEW.min(split.len()));
    if size > split.len() {
        return Err(ApiError::bad_request(format!(
            "sample of {size} exceeds the {} dev examples",
            split.len()
        )));
    }
    if size == 0 {
        return Ok(PreviewResponse {
            examples: vec![],
            stats: None,
        });
    }
    let weights = if req.calibrate && lf.mode == pws_core::data::ExtractionMode::Score {
        let store = CalibrationStore::for_gateway(&app.gateway)?;
        Some(store.estimate(&lf, &app.gateway, &app.null_inputs)?)
    } else {
        None
    };
    let mut examples = Vec::with_capacity(size);
    let mut votes = Vec::with_capacity(size);
    for e in &split.examples[..size] {
        let gold = e.gold.map(|g| classes.name(g).to_string());
        match run_lf(&lf, e, &app.gateway, weights.as_ref()) {
            Ok(o) => {
                let v = o.extraction.vote;
                examples.push(PreviewExample {
                    example_id: e.id.clone(),
                    prompt: Some(o.prompt),
                    scored: o.scored,
                    calibrated: o.calibrated,
                    vote: v.label.map(|c| classes.name(c).to_string()),
                    gold,
                    error: None,
                });
                votes.push(vec![v]);
            }
            Err(err) if err.is_backend() => {
                examples.push(PreviewExample {
                    example_id: e.id.clone(),
                    prompt: lf.render(e).ok(),
                    scored: vec![],
                    calibrated: None,
                    vote: None,
                    gold,
                    error: Some(err.to_string()),
                });
                votes.push(vec![Vote::abstain(0.0)]);
            }
            Err(err) => return Err(err.into()),
        }
    }
    let ids = split.examples[..size]
        .iter()
        .map(|e| e.id.clone())
        .collect();
    let matrix = VoteMatrix::new(vec![lf.name.clone()], ids, votes, split.name.clone())?;
    let gold: Vec<usize> = split.examples[..size]
        .iter()
        .map(|e| e.gold.expect("dev split carries gold"))
        .collect();
    let stats = lf_stats(&matrix, &gold, &classes)?.into_iter().next();
    Ok(PreviewResponse { examples, stats })
}

async fn post_preview(
    State(app): State<Shared>,
    Json(req): Json<PreviewRequest>,
) -> ApiResult<PreviewResponse> {
    tokio::task::spawn_blocking(move || preview_lf(&app, &req).map(Json))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

#[derive(Deserialize)]
pub struct RunRequest {
    #[serde(default)]
    pub split: Option<String>,
    #[serde(default = "yes")]
    pub calibrate: bool,
    /// Block until the run finishes instead of returning while it runs.
    #[serde(default)]
    pub wait: bool,
}

fn yes() -> bool {
    true
}

#[derive(Serialize, Deserialize)]
pub struct RunStarted {
    pub run_id: String,
    pub status: RunStatus,
    /// True when an earlier identical request already produced this run.
    pub cached: bool,
}

async fn post_run(
    State(app): State<Shared>,
    Json(req): Json<RunRequest>,
) -> Result<(StatusCode, Json<RunStarted>), ApiError> {
    let split = req.split.clone().unwrap_or_else(|| app.dev_split.clone());
    let (suite, dataset, key) = {
        let s = app.session.read().unwrap();
        s.dataset.split(&split)?.require_gold()?;
        let key = RunKey {
            suite_hash: s.suite_hash(),
            calibrate: req.calibrate,
            split: split.clone(),
        };
        if let Some(id) = s.last_runs.get(&key) {
            let status = s.statuses.get(id).map(|x| x.0).unwrap_or(RunStatus::Done);
            if status != RunStatus::Failed {
                return Ok((
                    StatusCode::OK,
                    Json(RunStarted {
                        run_id: id.clone(),
                        status,
                        cached: true,
                    }),
                ));
            }
        }
        (s.suite.clone(), s.dataset.clone(), key)
    };
    let request = LabelQualityRequest {
        split,
        calibrate: req.calibrate,
        label: app.label.clone(),
    };
    let run_id = request.run_id(&dataset, &suite, &app.null_inputs)?;
    {
        let mut s = app.session.write().unwrap();
        s.last_runs.insert(key, run_id.clone());
        s.statuses
            .insert(run_id.clone(), (RunStatus::Running, None));
    }
    let worker_app = app.clone();
    let worker_id = run_id.clone();
    let task = tokio::task::spawn_blocking(move || {
        let app = worker_app;
        let result = run_label_quality(
            &dataset,
            &suite,
            &app.gateway,
            &request,
            &app.null_inputs,
            &app.runs_root,
        );
        let entry = match &result {
            Ok(_) => (RunStatus::Done, None),
            Err(e) => {
                log::error!("run {worker_id} failed: {e}");
                (RunStatus::Failed, Some(e.to_string()))
            }
        };
        app.session
            .write()
            .unwrap()
            .statuses
            .insert(worker_id, entry.clone());
        entry.0
    });
    let status = if req.wait {
        task.await.map_err(|e| {
            ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
        })?
    } else {
        RunStatus::Running
    };
    let code = if status == RunStatus::Running {
        StatusCode::ACCEPTED
    } else {
        StatusCode::OK
    };
    Ok((
        code,
        Json(RunStarted {
            run_id,
            status,
            cached: false,
        }),
    ))
}

#[derive(Serialize, Deserialize)]
pub struct RunView {
    pub run_id: String,
    pub status: RunStatus,
    pub error: Option<String>,
    pub record: Option<RunRecord>,
}

fn run_status(
    app: &AppState,
    id: &str,
) -> Result<(RunStatus, Option<String>, Option<RunRecord>), ApiError> {
    let dir = app.run_dir(id)?;
    let record = RunRecord::load(&dir).ok();
    let known = app.session.read().unwrap().statuses.get(id).cloned();
    match (known, record) {
        (Some((status, err)), record) => Ok((status, err, record)),
        (None, Some(r)) => {
            let status = if r.is_finished() {
                RunStatus::Done
            } else {
                RunStatus::Failed
            };
            Ok((status, None, Some(r)))
        }
        (None, None) => Err(ApiError::not_found(format!("no run `{id}`"))),
    }
}

async fn get_run(State(app): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<RunView> {
    let (status, error, record) = run_status(&app, &id)?;
    Ok(Json(RunView {
        run_id: id,
        status,
        error,
        record,
    }))
}

fn load_report(app: &AppState, id: &str) -> Result<Report, ApiError> {
    let (status, _, _) = run_status(app, id)?;
    if status != RunStatus::Done {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "not_ready",
            format!("run `{id}` is {status:?}"),
        ));
    }
    let path = app.run_dir(id)?.join("report/report.json");
    let bytes = std::fs::read(&path)
        .map_err(|_| ApiError::not_found(format!("run `{id}` has no report")))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::from(e).into())
}

async fn get_run_stats(
    State(app): State<Shared>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Vec<LfStats>> {
    Ok(Json(load_report(&app, &id)?.lf_stats))
}

async fn get_run_diversity(
    State(app): State<Shared>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<pws_core::analysis::DiversityReport> {
    Ok(Json(load_report(&app, &id)?.diversity))
}

async fn get_run_calibration(
    State(app): State<Shared>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Vec<pws_core::analysis::CalibrationDelta>> {
    load_report(&app, &id)?
        .calibration
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("run `{id}` was not calibrated")))
}

#[derive(Deserialize)]
pub struct ExampleQuery {
    pub split: Option<String>,
    pub lf: Option<String>,
    /// Class name or `ABSTAIN`.
    pub vote: Option<String>,
    pub correct: Option<bool>,
    pub run: Option<String>,
}

#[derive(Serialize, Deserialize)]
pub struct ExampleView {
    pub id: String,
    pub fields: BTreeMap<String, String>,
    pub gold: Option<String>,
    /// Per labeler, in suite order; null for abstention.
    pub votes: Option<Vec<Option<String>>>,
}

#[derive(Serialize, Deserialize)]
pub struct ExamplesView {
    pub split: String,
    pub run_id: Option<String>,
    pub lf_names: Vec<String>,
    pub examples: Vec<ExampleView>,
}

fn latest_run_for(app: &AppState, split: &str) -> Option<String> {
    let s = app.session.read().unwrap();
    let hash = s.suite_hash();
    // Calibrated runs first, matching the key order (false < true).
    [true, false].into_iter().find_map(|calibrate| {
        let key = RunKey {
            suite_hash: hash.clone(),
            calibrate,
            split: split.to_string(),
        };
        s.last_runs
            .get(&key)
            .filter(|id| matches!(s.statuses.get(*id), Some((RunStatus::Done, _))))
            .cloned()
    })
}

fn list_examples(app: &AppState, q: &ExampleQuery) -> Result<ExamplesView, ApiError> {
    let split_name = q.split.clone().unwrap_or_else(|| app.dev_split.clone());
    let (split, classes) = {
        let s = app.session.read().unwrap();
        (
            s.dataset.split(&split_name)?.clone(),
            s.dataset.class_space.clone(),
        )
    };
    let run_id = q.run.clone().or_else(|| latest_run_for(app, &split_name));
    let matrix = match &run_id {
        Some(id) => {
            let m = read_vote_matrix(app.run_dir(id)?.join("votes.csv"))?;
            if m.split != split_name {
                return Err(ApiError::bad_request(format!(
                    "run `{id}` labeled split `{}`, not `{split_name}`",
                    m.split
                )));
            }
            Some(m)
        }
        None => None,
    };
    let filtering = q.vote.is_some() || q.correct.is_some();
    if filtering && q.lf.is_none() {
        return Err(ApiError::bad_request("`vote` and `correct` need `lf`"));
    }
    let column = match (&q.lf, &matrix) {
        (Some(lf), Some(m)) => Some(
            m.lf_index(lf)
                .ok_or_else(|| ApiError::not_found(format!("run has no labeler `{lf}`")))?,
        ),
        (Some(_), None) => {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "not_ready",
                format!("no finished run on split `{split_name}`"),
            ))
        }
        _ => None,
    };
    let vote_filter: Option<Option<usize>> = match &q.vote {
        None => None,
        Some(v) if v == ABSTAIN => Some(None),
        Some(v) => {
            Some(Some(classes.index_of(v).ok_or_else(|| {
                ApiError::bad_request(format!("unknown class `{v}`"))
            })?))
        }
    };
    let name = |c: usize| classes.name(c).to_string();
    let mut out = Vec::new();
    for (i, e) in split.examples.iter().enumerate() {
        let row = matrix.as_ref().map(|m| &m.rows[i]);
        if let (Some(j), Some(row)) = (column, row) {
            let v = row[j].label;
            if vote_filter.is_some_and(|want| want != v) {
                continue;
            }
            if let Some(want) = q.correct {
                match (v, e.gold) {
                    (Some(v), Some(g)) if (v == g) == want => {}
                    _ => continue,
                }
            }
        }
        out.push(ExampleView {
            id: e.id.clone(),
            fields: e.fields.clone(),
            gold: e.gold.map(name),
            votes: row.map(|r| r.iter().map(|v| v.label.map(name)).collect()),
        });
    }
    Ok(ExamplesView {
        split: split_name,
        run_id,
        lf_names: matrix.map(|m| m.lf_names).unwrap_or_default(),
        examples: out,
    })
}

async fn get_examples(
    State(app): State<Shared>,
    Query(q): Query<ExampleQuery>,
) -> ApiResult<ExamplesView> {
    Ok(Json(list_examples(&app, &q)?))
}

async fn get_gateway_stats(State(app): State<Shared>) -> ApiResult<BTreeMap<String, BackendStats>> {
    Ok(Json(app.gateway.flush_stats()))
}

async fn not_found() -> ApiError {
    ApiError::not_found("no such endpoint")
}

fn api(state: Shared) -> Router {
    Router::new()
        .route("/dataset", get(get_dataset))
        .route("/labelers", get(get_labelers).put(put_labelers))
        .route("/labelers/preview", post(post_preview))
        .route("/labelers/{name}", get(get_labeler).put(put_labeler))
        .route("/runs", post(post_run))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/stats", get(get_run_stats))
        .route("/runs/{id}/diversity", get(get_run_diversity))
        .route("/runs/{id}/calibration", get(get_run_calibration))
        .route("/examples", get(get_examples))
        .route("/gateway/stats", get(get_gateway_stats))
        .fallback(not_found)
        .with_state(state)
}

/// The full application: API under `/api` and `/api/v1`, and static
/// console assets from `static_dir` when given.
pub fn router(state: Shared, static_dir: Option<&Path>) -> Router {
    let app = Router::new()
        .nest("/api", api(state.clone()))
        .nest("/api/v1", api(state));
    match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}

/// Binds `addr` and serves until the process ends. A busy port is a
/// startup error.
pub async fn serve(
    state: Shared,
    addr: SocketAddr,
    static_dir: Option<PathBuf>,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("console API on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state, static_dir.as_deref())).await
}
