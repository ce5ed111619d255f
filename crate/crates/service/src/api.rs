//! Versioned HTTP routes.

use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State as AxState};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use mirc_lab_core::dataset::ResponseRecord;
use mirc_lab_core::tree::ReductionTree;

use crate::store::{Command, Outcome, State, Store, StoreError};
use crate::study::{CreateStudy, StudyError};

/// Shared service state: readers clone the current snapshot pointer, the
/// single writer builds the next state and swaps it in.
pub struct Shared {
    current: RwLock<Arc<State>>,
    writer: Mutex<Store>,
}

impl Shared {
    pub fn new(store: Store, state: State) -> Self {
        Self {
            current: RwLock::new(Arc::new(state)),
            writer: Mutex::new(store),
        }
    }

    pub fn snapshot(&self) -> Arc<State> {
        self.current.read().expect("state lock").clone()
    }

    /// Applies a command built from the latest state, persists it, then
    /// publishes the new state.
    fn execute(&self, build: impl FnOnce(&State) -> Command) -> Result<Outcome, ApiError> {
        let mut store = self.writer.lock().expect("writer lock");
        let mut next = (*self.snapshot()).clone();
        let cmd = build(&next);
        let outcome = next.apply(&cmd)?;
        store.record(&cmd, &next)?;
        *self.current.write().expect("state lock") = Arc::new(next);
        Ok(outcome)
    }
}

#[derive(Debug)]
pub enum ApiError {
    Study(StudyError),
    Store(StoreError),
    BadRequest(String),
}

impl From<StudyError> for ApiError {
    fn from(e: StudyError) -> Self {
        ApiError::Study(e)
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        ApiError::Store(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code, message) = match &self {
            ApiError::Study(e) => {
                let (status, code) = match e {
                    StudyError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
                    StudyError::Setup(_) => (StatusCode::BAD_REQUEST, "setup"),
                    StudyError::Duplicate { .. } => (StatusCode::CONFLICT, "duplicate"),
                    StudyError::Sequencing { .. } => (StatusCode::CONFLICT, "out_of_order"),
                    StudyError::Excluded => (StatusCode::CONFLICT, "excluded"),
                    StudyError::Complete => (StatusCode::CONFLICT, "complete"),
                    StudyError::NotReady(_) => (StatusCode::CONFLICT, "not_ready"),
                    StudyError::NoWork => (StatusCode::CONFLICT, "no_work"),
                    StudyError::Data(_) => (StatusCode::UNPROCESSABLE_ENTITY, "data"),
                };
                (status, code, e.to_string())
            }
            ApiError::Store(e) => {
                log::error!("store failure: {e}");
                (StatusCode::INTERNAL_SERVER_ERROR, "storage", e.to_string())
            }
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, "bad_request", m.clone()),
        };
        (
            status,
            Json(json!({ "error": { "code": code, "message": message } })),
        )
            .into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;
type Ctx = AxState<Arc<Shared>>;

fn parse_body<T: DeserializeOwned + Default>(body: &Bytes) -> ApiResult<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    parse_required(body)
}

fn parse_required<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de)
        .map_err(|e| ApiError::BadRequest(format!("{}: {}", e.path(), e.inner())))
}

/// Runs a blocking state change off the async executor.
async fn run<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::BadRequest(format!("request aborted: {e}")))?
}

pub fn router(shared: Arc<Shared>) -> Router {
    Router::new()
        .route("/v1/studies", post(create_study))
        .route("/v1/studies/{id}/participants", post(add_participant))
        .route("/v1/studies/{id}/advance", post(advance))
        .route("/v1/studies/{id}/progress", get(progress))
        .route("/v1/studies/{id}/export", get(export))
        .route("/v1/sessions/{id}/next", get(next_trial))
        .route("/v1/sessions/{id}/responses", post(submit))
        .route("/v1/sessions/{id}/media", get(media))
        .route("/v1/sessions/{id}/frames/{clip}/{index}", get(frame))
        .with_state(shared)
}

async fn create_study(AxState(sh): Ctx, body: Bytes) -> ApiResult<impl IntoResponse> {
    let request: CreateStudy = parse_required(&body)?;
    let sh2 = sh.clone();
    let out = run(move || {
        sh2.execute(|s| Command::CreateStudy {
            study_id: format!("st{:04}", s.studies.len() + 1),
            request: Box::new(request),
        })
    })
    .await?;
    let Outcome::Created { study_id } = out else {
        unreachable!("create returns Created")
    };
    let snap = sh.snapshot();
    let study = snap.study(&study_id)?;
    let warnings = study.config().reduction.validate().unwrap_or_default();
    Ok((
        StatusCode::CREATED,
        Json(json!({ "study_id": study_id, "warnings": warnings, "progress": study.progress() })),
    ))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParticipantBody {
    participant_id: Option<String>,
}

#[derive(Debug, Serialize)]
struct ParticipantReply {
    session_id: String,
    participant_id: String,
    set_index: usize,
    total_trials: usize,
    next_url: String,
}

async fn add_participant(
    AxState(sh): Ctx,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let b: ParticipantBody = parse_body(&body)?;
    let out = run(move || {
        sh.execute(|_| Command::AddParticipant {
            study_id: id,
            participant_id: b.participant_id,
        })
    })
    .await?;
    let Outcome::Participant { session } = out else {
        unreachable!("participant command returns Participant")
    };
    Ok((
        StatusCode::CREATED,
        Json(ParticipantReply {
            next_url: format!("/v1/sessions/{}/next", session.session_id),
            session_id: session.session_id,
            participant_id: session.participant_id,
            set_index: session.set_index,
            total_trials: session.trials.len(),
        }),
    ))
}

async fn next_trial(
    AxState(sh): Ctx,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<impl IntoResponse> {
    let snap = sh.snapshot();
    Ok(Json(snap.study_of_session(&id)?.next_trial(&id)?))
}

async fn submit(
    AxState(sh): Ctx,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let submission = parse_required(&body)?;
    let out = run(move || {
        sh.execute(|_| Command::SubmitResponse {
            session_id: id,
            submission,
        })
    })
    .await?;
    let Outcome::Ack(ack) = out else {
        unreachable!("submit returns Ack")
    };
    Ok(Json(ack))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdvanceBody {
    clip: Option<String>,
}

async fn advance(
    AxState(sh): Ctx,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let b: AdvanceBody = parse_body(&body)?;
    let sh2 = sh.clone();
    let id2 = id.clone();
    let out = run(move || {
        sh2.execute(|_| Command::Advance {
            study_id: id2,
            clip: b.clip,
        })
    })
    .await?;
    let Outcome::Advanced { clips } = out else {
        unreachable!("advance returns Advanced")
    };
    let snap = sh.snapshot();
    Ok(Json(
        json!({ "clips": clips, "progress": snap.study(&id)?.progress() }),
    ))
}

async fn progress(AxState(sh): Ctx, UrlPath(id): UrlPath<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(sh.snapshot().study(&id)?.progress()))
}

#[derive(Debug, Serialize)]
struct Export<'a> {
    seed: u64,
    trees: Vec<&'a ReductionTree>,
    responses: Vec<ResponseRecord>,
    excluded_participants: Vec<&'a str>,
}

/// Trees and raw responses in the formats the analysis commands read.
async fn export(AxState(sh): Ctx, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let snap = sh.snapshot();
    let study = snap.study(&id)?;
    let export = Export {
        seed: study.config().seed,
        trees: study.trees.values().collect(),
        responses: study
            .responses
            .iter()
            .filter(|r| !r.skipped)
            .map(|r| ResponseRecord {
                participant_id: r.participant_id.clone(),
                node_id: r.node_id.clone(),
                trial_kind: r.trial_kind,
                response_time_ms: r.response_time_ms,
                raw_text: r.raw_text.clone(),
            })
            .collect(),
        excluded_participants: study
            .sessions
            .values()
            .filter(|s| s.excluded)
            .map(|s| s.participant_id.as_str())
            .collect(),
    };
    Ok(Json(export).into_response())
}

#[derive(Debug, Deserialize)]
struct MediaQuery {
    trial: usize,
}

async fn media(
    AxState(sh): Ctx,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<MediaQuery>,
) -> ApiResult<impl IntoResponse> {
    let snap = sh.snapshot();
    Ok(Json(snap.study_of_session(&id)?.media(&id, q.trial)?))
}

async fn frame(
    AxState(sh): Ctx,
    UrlPath((id, clip, index)): UrlPath<(String, String, usize)>,
) -> ApiResult<Response> {
    let path = {
        let snap = sh.snapshot();
        snap.study_of_session(&id)?.frame_path(&id, &clip, index)?
    };
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| StudyError::Data(format!("reading {}: {e}", path.display())))?;
    Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response())
}

fn content_type(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        _ => "application/octet-stream",
    }
}
