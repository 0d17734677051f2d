//! HTTP/JSON front end for the raplace operations.
//!
//! Every operation is a `POST` of a [`Job`] to its route in [`raplace_core::api`].
//! Work runs on the blocking pool; opened stores are cached between queries
//! and reopened whenever their manifest changes.

use std::collections::HashMap;
use std::future::Future;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Instant, SystemTime};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use raplace_core::api::{self, Health, Job};
use raplace_core::config::RunConfig;
use raplace_core::pipeline::{self, OpenStores, MANIFEST_FILE};
use raplace_core::{Error, ErrorBody, ErrorKind};
use serde::de::DeserializeOwned;
use serde::Serialize;
use tokio::net::TcpListener;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    fn internal(message: String) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            body: ErrorBody {
                kind: ErrorKind::InternalError,
                message,
            },
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e.kind() {
            ErrorKind::NoCandidateError => StatusCode::NOT_FOUND,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        Self {
            status,
            body: ErrorBody::from(&e),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type Cached = (Option<SystemTime>, Arc<OpenStores>);

#[derive(Debug, Default)]
pub struct AppState {
    stores: Mutex<HashMap<PathBuf, Cached>>,
}

impl AppState {
    fn key(dir: &Path) -> PathBuf {
        dir.canonicalize().unwrap_or_else(|_| dir.to_path_buf())
    }

    /// Opened stores for `dir`, reused while the manifest is unchanged.
    fn stores(&self, dir: &Path) -> Result<Arc<OpenStores>, Error> {
        let key = Self::key(dir);
        let stamp = manifest_stamp(&key);
        if let Some((t, s)) = self.stores.lock().unwrap().get(&key) {
            if stamp.is_some() && *t == stamp {
                return Ok(Arc::clone(s));
            }
        }
        let opened = Arc::new(OpenStores::open(dir)?);
        self.stores
            .lock()
            .unwrap()
            .insert(key, (stamp, Arc::clone(&opened)));
        Ok(opened)
    }

    fn forget(&self, dir: &Path) {
        self.stores.lock().unwrap().remove(&Self::key(dir));
    }

    pub fn cached_stores(&self) -> usize {
        self.stores.lock().unwrap().len()
    }
}

fn manifest_stamp(dir: &Path) -> Option<SystemTime> {
    std::fs::metadata(dir.join(MANIFEST_FILE)).and_then(|m| m.modified()).ok()
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route(api::HEALTH, get(health))
        .route(api::BUILD, post(build))
        .route(api::QUERY, post(query))
        .route(api::EVAL, post(eval))
        .route(api::SENS, post(sens))
        .route(api::SYNTH, post(synth))
        .with_state(state)
}

/// Serves until `shutdown` resolves, then drains in-flight requests.
pub async fn serve(
    listener: TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

async fn health() -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
    })
}

fn parse<R: DeserializeOwned>(body: &[u8]) -> Result<Job<R>, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError {
        status: StatusCode::BAD_REQUEST,
        body: ErrorBody {
            kind: ErrorKind::FormatError,
            message: format!("bad request body: {e}"),
        },
    })
}

/// Decodes the job and runs `op` on the blocking pool.
async fn run<R, O, F>(name: &'static str, body: Bytes, op: F) -> Result<Json<O>, ApiError>
where
    R: DeserializeOwned + Send + 'static,
    O: Serialize + Send + 'static,
    F: FnOnce(R, RunConfig) -> Result<O, Error> + Send + 'static,
{
    let job = parse::<R>(&body)?;
    let start = Instant::now();
    let out = tokio::task::spawn_blocking(move || op(job.request, job.config))
        .await
        .map_err(|e| ApiError::internal(format!("{name} aborted: {e}")))?;
    let ms = start.elapsed().as_secs_f64() * 1e3;
    match out {
        Ok(o) => {
            tracing::info!(op = name, ms, "done");
            Ok(Json(o))
        }
        Err(e) => {
            tracing::warn!(op = name, ms, error = %e, "failed");
            Err(e.into())
        }
    }
}

async fn build(State(st): State<Arc<AppState>>, body: Bytes) -> Result<Json<pipeline::BuildManifest>, ApiError> {
    run("build", body, move |req: pipeline::BuildRequest, cfg| {
        st.forget(&req.out_dir);
        pipeline::build(&req, &cfg)
    })
    .await
}

async fn query(State(st): State<Arc<AppState>>, body: Bytes) -> Result<Json<pipeline::QueryOutput>, ApiError> {
    run("query", body, move |req: pipeline::QueryRequest, cfg| {
        cfg.validate()?;
        // the uncached path reports missing inputs before opening anything
        if !req.scan.is_file() {
            return pipeline::query(&req, &cfg);
        }
        pipeline::query_with(&*st.stores(&req.store_dir)?, &req, &cfg)
    })
    .await
}

async fn eval(State(st): State<Arc<AppState>>, body: Bytes) -> Result<Json<pipeline::EvalOutput>, ApiError> {
    run("eval", body, move |req: pipeline::EvalRequest, cfg| {
        cfg.validate()?;
        if !req.poses.is_file() {
            return pipeline::eval(&req, &cfg);
        }
        pipeline::eval_with(&*st.stores(&req.store_dir)?, &req, &cfg)
    })
    .await
}

async fn sens(body: Bytes) -> Result<Json<pipeline::SensOutput>, ApiError> {
    run("sens", body, |req: pipeline::SensRequest, cfg| pipeline::sens(&req, &cfg)).await
}

async fn synth(body: Bytes) -> Result<Json<pipeline::SynthOutput>, ApiError> {
    run("synth", body, |req: pipeline::SynthRequest, cfg| pipeline::synth(&req, &cfg)).await
}
