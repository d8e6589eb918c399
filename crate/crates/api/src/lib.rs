//! HTTP sandbox over a single planning session.
//!
//! Mutating requests may send `If-Match: <version>` (the `ETag` of the plan
//! they were based on) and `X-Session-Token`. A stale version or a token from
//! another session is answered with 409 and the plan is left untouched.

pub mod session;

pub use session::{DiscussOutcome, MutationOutcome, Session, SessionError, Snapshot, WriterState};

use agora_core::domain::{LandUse, PlotId};
use agora_core::scenario_gen::geojson;
use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderName, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use std::net::SocketAddr;
use std::sync::Arc;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub const DEFAULT_PORT: u16 = 8787;
pub const TOKEN_HEADER: &str = "x-session-token";

impl IntoResponse for SessionError {
    fn into_response(self) -> Response {
        let (status, kind) = match &self {
            SessionError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            SessionError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            SessionError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            SessionError::Agent(_) => (StatusCode::BAD_GATEWAY, "agent_error"),
            SessionError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        (status, Json(json!({"error": kind, "message": self.to_string()}))).into_response()
    }
}

type Shared = Arc<Session>;
type ApiResult = Result<Response, SessionError>;

/// Router with CORS for `origin` (any origin when `None`).
pub fn router(session: Shared, origin: Option<HeaderValue>) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(origin.map(AllowOrigin::exact).unwrap_or_else(AllowOrigin::any))
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE, header::IF_MATCH, HeaderName::from_static(TOKEN_HEADER)])
        .expose_headers([header::ETAG]);
    Router::new()
        .route("/session", get(get_session))
        .route("/scenario", get(get_scenario))
        .route("/plan", get(get_plan))
        .route("/plan/edits", post(post_edits))
        .route("/plan/undo", post(post_undo))
        .route("/discuss/{sub_community}", post(post_discuss))
        .route("/residents/{id}/ask", post(post_ask))
        .route("/metrics", get(get_metrics))
        .route("/trajectory", get(get_trajectory))
        .route("/violations", get(get_violations))
        .route("/transcript", get(get_transcript))
        .route("/export", get(get_export))
        .layer(cors)
        .with_state(session)
}

pub async fn serve(session: Shared, addr: SocketAddr, origin: Option<HeaderValue>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(session, origin)).await
}

fn with_etag(version: u64, body: impl IntoResponse) -> Response {
    let mut res = body.into_response();
    res.headers_mut().insert(header::ETAG, HeaderValue::from(version));
    res
}

/// Version from `If-Match`, with or without quotes; rejects a foreign token.
fn preconditions(session: &Session, headers: &HeaderMap) -> Result<Option<u64>, SessionError> {
    if let Some(token) = headers.get(TOKEN_HEADER) {
        if token.as_bytes() != session.id.as_bytes() {
            return Err(SessionError::Conflict("request belongs to another session".into()));
        }
    }
    match headers.get(header::IF_MATCH) {
        None => Ok(None),
        Some(v) => {
            let text = v.to_str().unwrap_or("").trim().trim_start_matches("W/").trim_matches('"');
            if text == "*" {
                return Ok(None);
            }
            text.parse().map(Some).map_err(|_| SessionError::BadRequest(format!("bad If-Match value {text:?}")))
        }
    }
}

async fn get_session(State(s): State<Shared>) -> Response {
    let snap = s.snapshot();
    with_etag(
        snap.version,
        Json(json!({
            "id": s.id,
            "version": snap.version,
            "scenario": s.scenario.name,
            "backend": s.backend.kind(),
            "n_sub_communities": s.scenario.n_sub_communities,
            "residents": s.population.agents.len(),
        })),
    )
}

async fn get_scenario(State(s): State<Shared>) -> Response {
    let snap = s.snapshot();
    with_etag(snap.version, Json(geojson(&s.scenario, Some(&snap.plan))))
}

async fn get_plan(State(s): State<Shared>) -> Response {
    let snap = s.snapshot();
    with_etag(snap.version, Json(snap.plan.clone()))
}

async fn get_metrics(State(s): State<Shared>) -> Response {
    let snap = s.snapshot();
    with_etag(snap.version, Json(snap.metrics.clone()))
}

async fn get_trajectory(State(s): State<Shared>) -> Response {
    let snap = s.snapshot();
    with_etag(snap.version, Json(snap.trajectory.clone()))
}

async fn get_violations(State(s): State<Shared>) -> Response {
    let snap = s.snapshot();
    with_etag(snap.version, Json(snap.violations.clone()))
}

#[derive(Deserialize)]
struct TranscriptQuery {
    after: Option<u64>,
}

async fn get_transcript(State(s): State<Shared>, q: Result<Query<TranscriptQuery>, QueryRejection>) -> ApiResult {
    let Query(q) = q.map_err(|e| SessionError::BadRequest(e.body_text()))?;
    Ok(Json(s.transcript_after(q.after)).into_response())
}

async fn get_export(State(s): State<Shared>) -> Response {
    let snap = s.snapshot();
    with_etag(
        snap.version,
        Json(json!({
            "session": s.id,
            "scenario": s.scenario.name,
            "version": snap.version,
            "plan": snap.plan,
            "metrics": snap.metrics.summary(),
            "violations": snap.violations,
            "trajectory": snap.trajectory,
            "transcript": s.transcript.entries(),
        })),
    )
}

#[derive(Deserialize)]
struct EditItem {
    plot_id: PlotId,
    land_use: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum EditBody {
    List(Vec<EditItem>),
    Wrapped { edits: Vec<EditItem> },
}

fn parse_edits(body: &[u8]) -> Result<Vec<(PlotId, LandUse)>, SessionError> {
    let parsed: EditBody =
        serde_json::from_slice(body).map_err(|e| SessionError::BadRequest(format!("invalid edit list: {e}")))?;
    let items = match parsed {
        EditBody::List(v) | EditBody::Wrapped { edits: v } => v,
    };
    items
        .into_iter()
        .map(|e| {
            let u = e.land_use.parse::<LandUse>().map_err(|err| SessionError::BadRequest(err.to_string()))?;
            Ok((e.plot_id, u))
        })
        .collect()
}

async fn post_edits(State(s): State<Shared>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let expected = preconditions(&s, &headers)?;
    let edits = parse_edits(&body)?;
    let writer = s.writer();
    let mut w = writer.lock().await;
    let out = s.edit(&mut w, &edits, expected)?;
    Ok(with_etag(out.version, Json(out)))
}

async fn post_undo(State(s): State<Shared>, headers: HeaderMap) -> ApiResult {
    let expected = preconditions(&s, &headers)?;
    let writer = s.writer();
    let mut w = writer.lock().await;
    let out = s.undo(&mut w, expected)?;
    Ok(with_etag(out.version, Json(out)))
}

async fn post_discuss(State(s): State<Shared>, Path(sc): Path<String>, headers: HeaderMap) -> ApiResult {
    let sc: u32 = sc.parse().map_err(|_| SessionError::NotFound(format!("no sub-community {sc:?}")))?;
    let expected = preconditions(&s, &headers)?;
    let guard = s.writer().lock_owned().await;
    // agent calls may block on the network
    let out = tokio::task::spawn_blocking(move || {
        let mut w = guard;
        s.discuss(&mut w, sc, expected)
    })
    .await
    .map_err(|e| SessionError::Internal(e.to_string()))??;
    Ok(with_etag(out.version, Json(out)))
}

#[derive(Deserialize, Default)]
struct AskBody {
    question: Option<String>,
}

async fn post_ask(State(s): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let id: u32 = id.parse().map_err(|_| SessionError::NotFound(format!("no resident {id:?}")))?;
    let ask: AskBody = if body.iter().all(u8::is_ascii_whitespace) {
        AskBody::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| SessionError::BadRequest(format!("invalid body: {e}")))?
    };
    let opinion = tokio::task::spawn_blocking(move || s.ask(id, ask.question.as_deref()))
        .await
        .map_err(|e| SessionError::Internal(e.to_string()))??;
    Ok(Json(opinion).into_response())
}
