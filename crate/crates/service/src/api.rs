//! HTTP routes. Mutating routes require the bearer token when one is
//! configured and honour an `Idempotency-Key` header.

use std::collections::HashMap;
use std::future::Future;
use std::ops::ControlFlow;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use booktree_core::curriculum::Stage;
use booktree_core::feedback::LabelFilter;
use booktree_core::engine::RunOutcome;
use booktree_core::{AssignmentId, BookId, Criterion, LabelKindTag, NodeId, TreeId};
use parking_lot::Mutex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::app::{
    App, AppError, AssignRequest, ErrorCode, IngestRequest, PlanRequest, RunRequest, SubmitRequest,
};
use crate::jobs::{JobRegistry, JobState};

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

#[derive(Debug)]
pub struct ApiError(pub AppError);

impl From<AppError> for ApiError {
    fn from(e: AppError) -> Self {
        Self(e)
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    code: ErrorCode,
    message: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    details: Option<&'a Value>,
}

pub fn status_for(code: ErrorCode) -> StatusCode {
    match code {
        ErrorCode::NotFound => StatusCode::NOT_FOUND,
        ErrorCode::Conflict => StatusCode::CONFLICT,
        ErrorCode::Validation => StatusCode::UNPROCESSABLE_ENTITY,
        ErrorCode::BackendUnavailable => StatusCode::SERVICE_UNAVAILABLE,
        ErrorCode::Unauthorized => StatusCode::UNAUTHORIZED,
        ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let e = self.0;
        if e.code == ErrorCode::Internal {
            tracing::error!(message = %e.message, "internal error");
        }
        let body = ErrorBody {
            code: e.code,
            message: &e.message,
            details: e.details.as_ref(),
        };
        (status_for(e.code), Json(json!({ "error": body }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

struct Cached {
    request_hash: [u8; 32],
    status: StatusCode,
    body: Value,
}

#[derive(Clone)]
pub struct ApiState {
    app: Arc<App>,
    jobs: Arc<JobRegistry>,
    idempotency: Arc<Mutex<HashMap<String, Cached>>>,
}

pub fn router(app: Arc<App>) -> Router {
    let state = ApiState {
        app,
        jobs: Arc::new(JobRegistry::default()),
        idempotency: Arc::default(),
    };
    Router::new()
        .route("/health", get(health))
        .route("/books", post(create_book))
        .route("/books/{id}", get(get_book))
        .route("/trees", post(create_tree))
        .route("/trees/{id}", get(get_tree))
        .route("/trees/{id}/run", post(start_run))
        .route("/trees/{id}/nodes/{nid}", get(get_node))
        .route("/trees/{id}/nodes/{nid}/provenance", get(get_provenance))
        .route("/jobs/{id}", get(get_job))
        .route("/assignments", post(create_assignments))
        .route("/assignments/next", get(next_assignment))
        .route("/assignments/{id}", get(get_assignment))
        .route("/labels", post(submit_labels).get(list_labels))
        .route("/sampler", get(get_sampler).post(advance_sampler))
        .route("/reports/likert", get(report_likert))
        .route("/reports/agreement", get(report_agreement))
        .route("/reports/human-time", get(report_human_time))
        .route("/reports/rouge", get(report_rouge))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

async fn require_token(State(state): State<ApiState>, req: Request, next: Next) -> Response {
    if req.method() != Method::GET {
        if let Some(token) = &state.app.config.auth_token {
            let given = req
                .headers()
                .get(header::AUTHORIZATION)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.strip_prefix("Bearer "));
            if given != Some(token.as_str()) {
                return ApiError(AppError::new(ErrorCode::Unauthorized, "missing or wrong bearer token"))
                    .into_response();
            }
        }
    }
    next.run(req).await
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    let raw: &[u8] = if body.is_empty() { b"{}" } else { body };
    serde_json::from_slice(raw).map_err(|e| AppError::validation(format!("request body: {e}")).into())
}

async fn blocking<T, F>(app: &Arc<App>, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&App) -> Result<T, AppError> + Send + 'static,
{
    let app = app.clone();
    tokio::task::spawn_blocking(move || f(&app))
        .await
        .map_err(|e| AppError::internal(format!("worker panicked: {e}")))?
        .map_err(ApiError)
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("response types serialize")
}

/// Replays a cached response when the request carries a known idempotency key.
/// Only successful responses are cached.
async fn idempotent<Fut>(
    state: &ApiState,
    headers: &HeaderMap,
    route: &str,
    body: &Bytes,
    f: impl FnOnce() -> Fut,
) -> ApiResult<Response>
where
    Fut: Future<Output = ApiResult<(StatusCode, Value)>>,
{
    let key = headers
        .get(IDEMPOTENCY_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(|k| format!("{route}\n{k}"));
    let Some(key) = key else {
        let (status, value) = f().await?;
        return Ok((status, Json(value)).into_response());
    };
    let mut h = Sha256::new();
    h.update(body);
    let request_hash: [u8; 32] = h.finalize().into();
    if let Some(c) = state.idempotency.lock().get(&key) {
        if c.request_hash != request_hash {
            return Err(AppError::conflict("idempotency key was used with a different request body").into());
        }
        return Ok((c.status, Json(c.body.clone())).into_response());
    }
    let (status, value) = f().await?;
    state.idempotency.lock().insert(
        key,
        Cached {
            request_hash,
            status,
            body: value.clone(),
        },
    );
    Ok((status, Json(value)).into_response())
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok", "version": env!("CARGO_PKG_VERSION") }))
}

async fn create_book(State(s): State<ApiState>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    idempotent(&s, &headers, "POST /books", &body, || async {
        let req: IngestRequest = parse(&body)?;
        let r = blocking(&s.app, move |app| app.ingest(req)).await?;
        let status = if r.created { StatusCode::CREATED } else { StatusCode::OK };
        Ok((status, to_json(&r)))
    })
    .await
}

async fn get_book(State(s): State<ApiState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let book = blocking(&s.app, move |app| Ok(app.workspace.book(&BookId::new(id))?)).await?;
    Ok(Json(to_json(&book)))
}

async fn create_tree(State(s): State<ApiState>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    idempotent(&s, &headers, "POST /trees", &body, || async {
        let req: PlanRequest = parse(&body)?;
        let tree = blocking(&s.app, move |app| app.plan(req)).await?;
        Ok((StatusCode::CREATED, to_json(&tree)))
    })
    .await
}

async fn get_tree(State(s): State<ApiState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let tree = blocking(&s.app, move |app| app.tree_view(&TreeId::new(id))).await?;
    Ok(Json(to_json(&tree)))
}

async fn start_run(
    State(s): State<ApiState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let route = format!("POST /trees/{id}/run");
    idempotent(&s, &headers, &route, &body, || async {
        let req: RunRequest = parse(&body)?;
        let tree_id = TreeId::new(id);
        let params = s.app.run_params(&req)?;
        let backend = s.app.backend_config(req.backend);
        backend.validate().map_err(|e| AppError::validation(e.to_string()))?;
        let total = {
            let tid = tree_id.clone();
            blocking(&s.app, move |app| Ok(app.workspace.tree(&tid)?.nodes.len())).await?
        };
        let run_id = App::run_id(&params);
        let job_id = s.jobs.start(&tree_id, run_id.clone(), total)?;

        let (app, jobs, jid) = (s.app.clone(), s.jobs.clone(), job_id.clone());
        tokio::task::spawn_blocking(move || {
            let result = app
                .run_tree(&tree_id, params, &backend, |st| {
                    jobs.progress(&jid, st.entries.len(), st.backend_calls());
                    ControlFlow::Continue(())
                })
                .map(|(st, outcome)| {
                    jobs.progress(&jid, st.entries.len(), st.backend_calls());
                    match outcome {
                        RunOutcome::Completed => JobState::Completed,
                        RunOutcome::Stopped => JobState::Stopped,
                    }
                });
            jobs.finish(&jid, result);
        });
        Ok((
            StatusCode::ACCEPTED,
            json!({ "job_id": job_id, "run_id": run_id, "status_url": format!("/jobs/{job_id}") }),
        ))
    })
    .await
}

async fn get_job(State(s): State<ApiState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let job = s
        .jobs
        .get(&id)
        .ok_or_else(|| AppError::not_found(format!("job {id}")))?;
    Ok(Json(to_json(&job)))
}

async fn get_node(State(s): State<ApiState>, Path((id, nid)): Path<(String, String)>) -> ApiResult<Json<Value>> {
    let view = blocking(&s.app, move |app| app.node_view(&TreeId::new(id), &NodeId::new(nid))).await?;
    Ok(Json(to_json(&view)))
}

async fn get_provenance(
    State(s): State<ApiState>,
    Path((id, nid)): Path<(String, String)>,
) -> ApiResult<Json<Value>> {
    let p = blocking(&s.app, move |app| app.provenance(&TreeId::new(id), &NodeId::new(nid))).await?;
    Ok(Json(to_json(&p)))
}

async fn create_assignments(State(s): State<ApiState>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    idempotent(&s, &headers, "POST /assignments", &body, || async {
        let req: AssignRequest = parse(&body)?;
        let issued = blocking(&s.app, move |app| app.issue_assignments(req)).await?;
        Ok((StatusCode::CREATED, json!({ "assignments": issued })))
    })
    .await
}

#[derive(Deserialize)]
struct NextQuery {
    labeler: String,
}

async fn next_assignment(State(s): State<ApiState>, Query(q): Query<NextQuery>) -> ApiResult<Response> {
    let payload = blocking(&s.app, move |app| app.next_assignment(&q.labeler)).await?;
    Ok(match payload {
        Some(p) => Json(to_json(&p)).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn get_assignment(State(s): State<ApiState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let payload = blocking(&s.app, move |app| {
        let a = app
            .feedback
            .assignment(&AssignmentId::new(id.clone()))
            .ok_or_else(|| AppError::not_found(format!("assignment {id}")))?;
        app.payload(a)
    })
    .await?;
    Ok(Json(to_json(&payload)))
}

async fn submit_labels(State(s): State<ApiState>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    idempotent(&s, &headers, "POST /labels", &body, || async {
        let req: SubmitRequest = parse(&body)?;
        let ids = blocking(&s.app, move |app| app.submit(req)).await?;
        Ok((StatusCode::CREATED, json!({ "label_ids": ids })))
    })
    .await
}

#[derive(Deserialize)]
struct LabelQuery {
    node: Option<String>,
    labeler: Option<String>,
    kind: Option<String>,
}

async fn list_labels(State(s): State<ApiState>, Query(q): Query<LabelQuery>) -> ApiResult<Json<Value>> {
    let kind = q
        .kind
        .map(|k| k.parse::<LabelKindTag>())
        .transpose()
        .map_err(AppError::validation)?;
    let filter = LabelFilter {
        node: q.node.map(NodeId::new),
        labeler: q.labeler,
        kind,
        ..Default::default()
    };
    Ok(Json(json!({ "labels": s.app.feedback.labels(&filter) })))
}

async fn get_sampler(State(s): State<ApiState>) -> ApiResult<Json<Value>> {
    let st = blocking(&s.app, |app| app.sampler_state()).await?;
    Ok(Json(to_json(&st)))
}

#[derive(Deserialize)]
struct StageBody {
    stage: Stage,
}

async fn advance_sampler(State(s): State<ApiState>, body: Bytes) -> ApiResult<Json<Value>> {
    let req: StageBody = parse(&body)?;
    let st = blocking(&s.app, move |app| app.advance_stage(req.stage)).await?;
    Ok(Json(to_json(&st)))
}

#[derive(Deserialize)]
struct LikertQuery {
    criterion: Option<Criterion>,
}

async fn report_likert(State(s): State<ApiState>, Query(q): Query<LikertQuery>) -> ApiResult<Json<Value>> {
    let criterion = q.criterion.unwrap_or(Criterion::Overall);
    let r = blocking(&s.app, move |app| app.likert_report(criterion)).await?;
    Ok(Json(to_json(&r)))
}

async fn report_agreement(State(s): State<ApiState>) -> Json<Value> {
    Json(to_json(&s.app.agreement_report()))
}

async fn report_human_time(State(s): State<ApiState>) -> Json<Value> {
    Json(to_json(&s.app.human_time_report()))
}

#[derive(Deserialize)]
struct RougeQuery {
    candidate_tree: String,
    reference: String,
    #[serde(default = "one")]
    depth: u32,
}

fn one() -> u32 {
    1
}

async fn report_rouge(State(s): State<ApiState>, Query(q): Query<RougeQuery>) -> ApiResult<Json<Value>> {
    let r = blocking(&s.app, move |app| {
        app.rouge_report(&TreeId::new(q.candidate_tree), &BookId::new(q.reference), q.depth)
    })
    .await?;
    Ok(Json(to_json(&r)))
}
