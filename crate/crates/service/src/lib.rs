//! Read-only JSON API over a trained subgoal analysis.
//!
//! Every response carries `schema_version`. Data endpoints answer 503 until
//! an [`Analysis`] has been installed; after that the state never changes.

use std::future::{Future, IntoFuture};
use std::sync::{Arc, OnceLock};

use axum::body::Bytes;
use axum::extract::State as Extract;
use axum::http::{header, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use subgoal_core::mdp::{Action, State};
use subgoal_core::pipeline::Analysis;
use tokio::net::TcpListener;
use tower_http::cors::{Any, CorsLayer};

pub const SCHEMA_VERSION: u32 = 1;

/// Shared, write-once handle on the loaded analysis.
#[derive(Clone, Default)]
pub struct AppState {
    analysis: Arc<OnceLock<Analysis>>,
}

impl AppState {
    /// A state that answers 503 until [`AppState::install`] is called.
    pub fn loading() -> Self {
        AppState::default()
    }

    pub fn ready(analysis: Analysis) -> Self {
        let s = AppState::default();
        let _ = s.analysis.set(analysis);
        s
    }

    /// Installs the analysis; false if one was already installed.
    pub fn install(&self, analysis: Analysis) -> bool {
        self.analysis.set(analysis).is_ok()
    }

    pub fn is_ready(&self) -> bool {
        self.analysis.get().is_some()
    }

    fn get(&self) -> Result<&Analysis, ApiError> {
        self.analysis.get().ok_or(ApiError {
            status: StatusCode::SERVICE_UNAVAILABLE,
            message: "artifacts are still loading".into(),
        })
    }
}

/// Body of `POST /api/explain`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryRequest {
    pub actions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<State>,
}

#[derive(Serialize)]
struct Versioned<T: Serialize> {
    schema_version: u32,
    #[serde(flatten)]
    body: T,
}

fn versioned<T: Serialize>(body: T) -> Json<Versioned<T>> {
    Json(Versioned {
        schema_version: SCHEMA_VERSION,
        body,
    })
}

#[derive(Debug)]
struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
        }
    }

    fn unprocessable(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            message: message.into(),
        }
    }
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, versioned(ErrorBody { error: self.message })).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Serialize)]
struct Health {
    status: &'static str,
}

async fn health() -> impl IntoResponse {
    versioned(Health { status: "ok" })
}

async fn env(Extract(st): Extract<AppState>) -> ApiResult<impl IntoResponse> {
    Ok(versioned(st.get()?.spec().clone()))
}

async fn path(Extract(st): Extract<AppState>) -> ApiResult<impl IntoResponse> {
    Ok(versioned(st.get()?.path().clone()))
}

async fn importance(Extract(st): Extract<AppState>) -> ApiResult<impl IntoResponse> {
    Ok(versioned(st.get()?.profile.clone()))
}

async fn subgoals(Extract(st): Extract<AppState>) -> ApiResult<impl IntoResponse> {
    Ok(versioned(st.get()?.subgoals.clone()))
}

/// Validates a query against the loaded analysis.
fn parse_query(a: &Analysis, body: &[u8]) -> ApiResult<(Option<State>, Vec<Action>)> {
    let req: QueryRequest =
        serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed query: {e}")))?;
    let spec = a.spec();
    let limit = 4 * spec.max_steps;
    if req.actions.len() > limit {
        return Err(ApiError::bad_request(format!(
            "query has {} actions, the limit is {limit}",
            req.actions.len()
        )));
    }
    let actions = req
        .actions
        .iter()
        .map(|name| name.parse::<Action>().map_err(|e| ApiError::bad_request(e.to_string())))
        .collect::<ApiResult<Vec<Action>>>()?;
    if let Some(s) = req.start {
        if !spec.in_bounds(s.pos()) {
            return Err(ApiError::unprocessable(format!("start {s} is outside the map")));
        }
        if !a.model().knows_state(&s) {
            return Err(ApiError::unprocessable(format!("start {s} is unknown to the world model")));
        }
    }
    Ok((req.start, actions))
}

async fn explain(Extract(st): Extract<AppState>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let a = st.get()?;
    let (start, actions) = parse_query(a, &body)?;
    Ok(versioned(a.explain(start, &actions)))
}

pub fn router(state: AppState) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/api/health", get(health))
        .route("/api/env", get(env))
        .route("/api/path", get(path))
        .route("/api/importance", get(importance))
        .route("/api/subgoals", get(subgoals))
        .route("/api/explain", post(explain))
        .layer(cors)
        .with_state(state)
}

/// Serves immediately and installs the analysis once `load` finishes.
///
/// A failed load stops the server with its error. The server otherwise
/// runs until `shutdown` resolves.
pub async fn serve_while_loading<L, S>(listener: TcpListener, load: L, shutdown: S) -> std::io::Result<()>
where
    L: FnOnce() -> Result<Analysis, String> + Send + 'static,
    S: Future<Output = ()> + Send + 'static,
{
    let state = AppState::loading();
    let app = router(state.clone());
    let server = axum::serve(listener, app).with_graceful_shutdown(shutdown).into_future();
    tokio::pin!(server);
    let mut loader = tokio::task::spawn_blocking(load);
    tokio::select! {
        done = &mut server => return done,
        loaded = &mut loader => {
            let analysis = loaded
                .map_err(std::io::Error::other)?
                .map_err(std::io::Error::other)?;
            state.install(analysis);
        }
    }
    server.await
}
