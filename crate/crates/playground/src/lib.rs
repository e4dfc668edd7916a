//! JSON API around the intervention engine: create a session on one scene,
//! push or remove interventions, and read back factual and counterfactual
//! predictions.
//!
//! Routes:
//!
//! - `GET /catalog` lists loaded models and scene ids
//! - `POST /session` creates a session
//! - `GET /session/{id}` returns the full snapshot
//! - `POST /session/{id}/intervention` appends one intervention
//! - `DELETE /session/{id}/intervention/{index}` removes one
//! - `POST /session/{id}/reseed` replaces the noise seed
//!
//! Sessions keep only their base case and the ordered intervention list;
//! every response is recomputed from those, so a snapshot never depends on
//! the order in which edits arrived.

mod session;

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use socialcircle::causal::{CausalError, InterventionSpec};
use socialcircle::predictor::Model;
use socialcircle::trajdata::{generate_synthetic, Case, SampleSpec, ScenarioKind, SynthConfig};
use thiserror::Error;
use tokio::sync::Mutex;
use tower_http::services::ServeDir;

pub use session::{RepView, RleMap, SceneView, Session, Snapshot};

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{0}")]
    NotFound(String),
    #[error("{message}")]
    Invalid {
        field: Option<String>,
        message: String,
    },
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    fn invalid(field: Option<&str>, message: impl Into<String>) -> Self {
        ApiError::Invalid {
            field: field.map(str::to_string),
            message: message.into(),
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Invalid { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<CausalError> for ApiError {
    fn from(e: CausalError) -> Self {
        match e {
            CausalError::Field { .. } | CausalError::Config(_) | CausalError::Shape(_) => {
                ApiError::Invalid {
                    field: e.field_name().map(str::to_string),
                    message: e.to_string(),
                }
            }
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let field = match &self {
            ApiError::Invalid { field, .. } => field.clone(),
            _ => None,
        };
        let body = json!({ "error": { "message": self.to_string(), "field": field } });
        (self.status(), Json(body)).into_response()
    }
}

/// Best guess at the offending field of a JSON decoding error.
fn serde_field(err: &serde_json::Error) -> Option<String> {
    let msg = err.to_string();
    for prefix in ["missing field `", "unknown field `", "duplicate field `"] {
        if let Some(rest) = msg.split(prefix).nth(1) {
            return rest.split('`').next().map(str::to_string);
        }
    }
    (msg.contains("unknown variant") || msg.contains("missing field `kind`")).then(|| "kind".into())
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::Invalid {
        field: serde_field(&e),
        message: format!("invalid request body: {e}"),
    })
}

/// Models and scenes a server can open sessions on.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    pub models: BTreeMap<String, Arc<Model>>,
    /// Used when a request names no model.
    pub default_model: Option<String>,
    pub cases: BTreeMap<String, Case>,
}

impl Registry {
    pub fn with_model(mut self, name: impl Into<String>, model: Model) -> Self {
        let name = name.into();
        self.default_model.get_or_insert_with(|| name.clone());
        self.models.insert(name, Arc::new(model));
        self
    }

    pub fn with_cases(mut self, cases: impl IntoIterator<Item = Case>) -> Self {
        for c in cases {
            self.cases.insert(c.sample.id.clone(), c);
        }
        self
    }
}

type SessionMap = HashMap<String, Arc<Mutex<Session>>>;

#[derive(Clone)]
pub struct AppState {
    registry: Arc<Registry>,
    sessions: Arc<RwLock<SessionMap>>,
}

impl AppState {
    pub fn new(registry: Registry) -> Self {
        AppState {
            registry: Arc::new(registry),
            sessions: Arc::new(RwLock::new(HashMap::new())),
        }
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions
            .read()
            .expect("session table lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("unknown session {id}")))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticRequest {
    pub kind: ScenarioKind,
    pub seed: u64,
    /// Which generated scenario to open.
    #[serde(default)]
    pub index: usize,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub model: Option<String>,
    pub sample_id: Option<String>,
    pub synthetic: Option<SyntheticRequest>,
    #[serde(default)]
    pub seed: u64,
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reseed {
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Catalog {
    pub models: Vec<String>,
    pub default_model: Option<String>,
    pub samples: Vec<String>,
}

async fn compute(session: Session) -> Result<Snapshot, ApiError> {
    tokio::task::spawn_blocking(move || session.snapshot())
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
        .map_err(ApiError::from)
}

async fn catalog(State(state): State<AppState>) -> Json<Catalog> {
    let r = &state.registry;
    Json(Catalog {
        models: r.models.keys().cloned().collect(),
        default_model: r.default_model.clone(),
        samples: r.cases.keys().cloned().collect(),
    })
}

fn resolve_case(registry: &Registry, req: &CreateSession, model: &Model) -> Result<Case, ApiError> {
    match (&req.sample_id, &req.synthetic) {
        (Some(id), None) => registry
            .cases
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::invalid(Some("sample_id"), format!("unknown sample {id:?}"))),
        (None, Some(syn)) => {
            let spec = SampleSpec {
                t_h: model.config.t_h,
                t_f: model.config.t_f,
                ..SampleSpec::default()
            };
            let scene = generate_synthetic(syn.kind, syn.index + 1, syn.seed, &spec, &SynthConfig::default());
            scene
                .cases()
                .into_iter()
                .nth(syn.index)
                .ok_or_else(|| ApiError::invalid(Some("synthetic"), "generator produced no such scenario"))
        }
        _ => Err(ApiError::invalid(
            Some("sample_id"),
            "give exactly one of sample_id and synthetic",
        )),
    }
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateSession = parse_body(&body)?;
    let registry = &state.registry;
    let name = req
        .model
        .clone()
        .or_else(|| registry.default_model.clone())
        .ok_or_else(|| ApiError::invalid(Some("model"), "no model named and no default loaded"))?;
    let model = registry
        .models
        .get(&name)
        .cloned()
        .ok_or_else(|| ApiError::invalid(Some("model"), format!("unknown model {name:?}")))?;
    let k = req.k.unwrap_or(model.config.k_gen);
    if k == 0 {
        return Err(ApiError::invalid(Some("k"), "k must be >= 1"));
    }
    let base = resolve_case(registry, &req, &model)?;
    if base.sample.t_h() != model.config.t_h {
        return Err(ApiError::invalid(
            Some("sample_id"),
            format!("sample has {} observed steps, model expects {}", base.sample.t_h(), model.config.t_h),
        ));
    }
    let session = Session {
        id: uuid::Uuid::new_v4().to_string(),
        model_name: name,
        model,
        base,
        interventions: Vec::new(),
        seed: req.seed,
        k,
    };
    let snap = compute(session.clone()).await?;
    state
        .sessions
        .write()
        .expect("session table lock")
        .insert(session.id.clone(), Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(snap)).into_response())
}

async fn get_session(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<Snapshot>, ApiError> {
    let session = state.session(&id)?;
    let current = session.lock().await.clone();
    Ok(Json(compute(current).await?))
}

/// Runs `edit` on a copy of the session and commits it only if the edited
/// state still computes.
async fn update(
    state: &AppState,
    id: &str,
    edit: impl FnOnce(&mut Session) -> Result<(), ApiError>,
) -> Result<Json<Snapshot>, ApiError> {
    let session = state.session(id)?;
    let mut guard = session.lock().await;
    let mut next = guard.clone();
    edit(&mut next)?;
    let snap = compute(next.clone()).await?;
    *guard = next;
    Ok(Json(snap))
}

async fn add_intervention(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<Snapshot>, ApiError> {
    let spec: InterventionSpec = parse_body(&body)?;
    update(&state, &id, |s| {
        spec.validate(&s.model)?;
        s.interventions.push(spec);
        Ok(())
    })
    .await
}

async fn delete_intervention(
    State(state): State<AppState>,
    UrlPath((id, index)): UrlPath<(String, String)>,
) -> Result<Json<Snapshot>, ApiError> {
    update(&state, &id, |s| {
        let i: usize = index
            .parse()
            .ok()
            .filter(|&i| i < s.interventions.len())
            .ok_or_else(|| ApiError::NotFound(format!("no intervention at index {index}")))?;
        s.interventions.remove(i);
        Ok(())
    })
    .await
}

async fn reseed(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<Snapshot>, ApiError> {
    let req: Reseed = parse_body(&body)?;
    update(&state, &id, |s| {
        s.seed = req.seed;
        Ok(())
    })
    .await
}

/// API routes, plus static files from `ui_dir` for every other path.
pub fn router(state: AppState, ui_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/catalog", get(catalog))
        .route("/session", post(create_session))
        .route("/session/{id}", get(get_session))
        .route("/session/{id}/intervention", post(add_intervention))
        .route("/session/{id}/intervention/{index}", delete(delete_intervention))
        .route("/session/{id}/reseed", post(reseed))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(state: AppState, addr: SocketAddr, ui_dir: Option<&Path>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("playground listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state, ui_dir)).await
}
