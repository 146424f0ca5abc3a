//! HTTP routes. Bodies are JSON unless noted; errors are
//! `{"error": "<message>"}` with a matching status code.

use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use futures::Stream;
use serde::Deserialize;
use serde_json::json;
use shaderbreed_core::evolution::EvolveError;
use shaderbreed_core::genome::{GenomeError, GenomeId};
use shaderbreed_core::persistence::PersistError;
use tokio::sync::broadcast::error::RecvError;

use crate::session::{
    CreateSession, EvolveTicket, PopulationView, SelectionAck, ServiceError, SessionManager,
    DEFAULT_HOP_SECONDS,
};

const MAX_UPLOAD_BYTES: usize = 64 * 1024 * 1024;

impl ServiceError {
    fn status(&self) -> StatusCode {
        match self {
            ServiceError::UnknownSession(_)
            | ServiceError::NoAudio(_)
            | ServiceError::Genome(GenomeError::UnknownGenome(_))
            | ServiceError::Persist(PersistError::NotFound(_)) => StatusCode::NOT_FOUND,
            ServiceError::Busy | ServiceError::SessionExists(_) => StatusCode::CONFLICT,
            ServiceError::InvalidSessionId(_)
            | ServiceError::Evolve(EvolveError::EmptySelection)
            | ServiceError::Persist(PersistError::NothingSelected)
            | ServiceError::Wav(_)
            | ServiceError::Invalid(_) => StatusCode::BAD_REQUEST,
            ServiceError::Provider(_) => StatusCode::BAD_GATEWAY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            log::error!("{self}");
        }
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<T, ServiceError>;
type Shared = Arc<SessionManager>;

pub fn router(manager: Shared) -> Router {
    Router::new()
        .route("/api/sessions", post(create_session).get(list_sessions))
        .route("/api/sessions/{id}/load", post(load_session))
        .route("/api/sessions/{id}/population", get(population))
        .route("/api/sessions/{id}/selection/{genome}", put(set_selection))
        .route("/api/sessions/{id}/evolve", post(evolve))
        .route("/api/sessions/{id}/audio", post(upload_audio).get(audio_timeline))
        .route("/api/sessions/{id}/export", get(export))
        .route("/api/sessions/{id}/events", get(events))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(manager)
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> ApiResult<T> + Send + 'static,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Invalid(format!("worker failed: {e}")))?
}

async fn create_session(
    State(m): State<Shared>,
    body: Option<Json<CreateSession>>,
) -> ApiResult<(StatusCode, Json<PopulationView>)> {
    let req = body.map(|Json(b)| b).unwrap_or_default();
    let view = blocking(move || Ok(m.create(req)?.population_view())).await?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn list_sessions(State(m): State<Shared>) -> ApiResult<Json<serde_json::Value>> {
    Ok(Json(json!({ "sessions": m.list()? })))
}

async fn load_session(
    State(m): State<Shared>,
    Path(id): Path<String>,
) -> ApiResult<Json<PopulationView>> {
    let view = blocking(move || Ok(m.load(&id)?.population_view())).await?;
    Ok(Json(view))
}

async fn population(
    State(m): State<Shared>,
    Path(id): Path<String>,
) -> ApiResult<Json<PopulationView>> {
    Ok(Json(m.get(&id)?.population_view()))
}

#[derive(Deserialize)]
struct SelectionBody {
    selected: bool,
}

async fn set_selection(
    State(m): State<Shared>,
    Path((id, genome)): Path<(String, String)>,
    Json(body): Json<SelectionBody>,
) -> ApiResult<Json<SelectionAck>> {
    let session = m.get(&id)?;
    let ack = m.set_selection(&session, &GenomeId::from(genome), body.selected)?;
    Ok(Json(ack))
}

async fn evolve(
    State(m): State<Shared>,
    Path(id): Path<String>,
) -> ApiResult<(StatusCode, Json<EvolveTicket>)> {
    let session = m.get(&id)?;
    let job = m.begin_evolve(&session)?;
    let ticket = job.ticket().clone();
    tokio::task::spawn_blocking(move || {
        if let Err(e) = m.run_evolve(job) {
            log::warn!("evolve failed: {e}");
        }
    });
    Ok((StatusCode::ACCEPTED, Json(ticket)))
}

#[derive(Deserialize)]
struct HopQuery {
    hop: Option<f64>,
}

async fn upload_audio(
    State(m): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<HopQuery>,
    body: Bytes,
) -> ApiResult<Json<serde_json::Value>> {
    let session = m.get(&id)?;
    let hop = q.hop.unwrap_or(DEFAULT_HOP_SECONDS);
    if !(hop.is_finite() && hop > 0.0) {
        return Err(ServiceError::Invalid(format!("hop must be positive, got {hop}")));
    }
    let summary = blocking(move || m.upload_audio(&session, &body, hop)).await?;
    Ok(Json(json!({
        "frames": summary.frames,
        "hop_seconds": summary.hop_seconds,
        "timeline": format!("/api/sessions/{id}/audio"),
    })))
}

async fn audio_timeline(State(m): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    let session = m.get(&id)?;
    let timeline = m.audio(&session)?;
    Ok((
        [(header::CONTENT_TYPE, "text/plain; charset=utf-8")],
        timeline.to_text(),
    )
        .into_response())
}

async fn export(State(m): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    let session = m.get(&id)?;
    let text = m.export(&session)?;
    let disposition = format!("attachment; filename=\"{id}-selected.glsl\"");
    Ok((
        [
            (header::CONTENT_TYPE, "text/plain; charset=utf-8".to_owned()),
            (header::CONTENT_DISPOSITION, disposition),
        ],
        text,
    )
        .into_response())
}

async fn events(
    State(m): State<Shared>,
    Path(id): Path<String>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let rx = m.get(&id)?.subscribe();
    let stream = futures::stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(ev) => {
                    let event = Event::default()
                        .event(ev.kind.as_str())
                        .id(ev.seq.to_string())
                        .json_data(&ev)
                        .expect("events serialize");
                    return Some((Ok(event), rx));
                }
                Err(RecvError::Lagged(n)) => log::warn!("event stream lagged by {n}"),
                Err(RecvError::Closed) => return None,
            }
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::new().interval(Duration::from_secs(15))))
}
