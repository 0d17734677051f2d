//! Thin async client for the raplace service.

use raplace_core::api::{self, Health, Job};
use raplace_core::config::RunConfig;
use raplace_core::pipeline::{
    BuildManifest, BuildRequest, EvalOutput, EvalRequest, QueryOutput, QueryRequest, SensOutput, SensRequest,
    SynthOutput, SynthRequest,
};
use raplace_core::{ErrorBody, ErrorKind};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub mod cli;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    /// The service ran the job and reported a failure.
    #[error("{body} (http {status})")]
    Api { status: u16, body: ErrorBody },
    #[error("cannot reach service: {0}")]
    Transport(#[from] reqwest::Error),
}

impl ClientError {
    pub fn body(&self) -> ErrorBody {
        match self {
            ClientError::Api { body, .. } => body.clone(),
            ClientError::Transport(e) => ErrorBody {
                kind: ErrorKind::IoError,
                message: format!("cannot reach service: {e}"),
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:7878`.
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    async fn post<R: Serialize, O: DeserializeOwned>(
        &self,
        route: &str,
        request: R,
        config: &RunConfig,
    ) -> Result<O, ClientError> {
        let job = Job {
            request,
            config: config.clone(),
        };
        let resp = self.http.post(format!("{}{route}", self.base)).json(&job).send().await?;
        decode(resp).await
    }

    pub async fn health(&self) -> Result<Health, ClientError> {
        let resp = self.http.get(format!("{}{}", self.base, api::HEALTH)).send().await?;
        decode(resp).await
    }

    pub async fn build(&self, req: &BuildRequest, cfg: &RunConfig) -> Result<BuildManifest, ClientError> {
        self.post(api::BUILD, req, cfg).await
    }

    pub async fn query(&self, req: &QueryRequest, cfg: &RunConfig) -> Result<QueryOutput, ClientError> {
        self.post(api::QUERY, req, cfg).await
    }

    pub async fn eval(&self, req: &EvalRequest, cfg: &RunConfig) -> Result<EvalOutput, ClientError> {
        self.post(api::EVAL, req, cfg).await
    }

    pub async fn sens(&self, req: &SensRequest, cfg: &RunConfig) -> Result<SensOutput, ClientError> {
        self.post(api::SENS, req, cfg).await
    }

    pub async fn synth(&self, req: &SynthRequest, cfg: &RunConfig) -> Result<SynthOutput, ClientError> {
        self.post(api::SYNTH, req, cfg).await
    }
}

async fn decode<O: DeserializeOwned>(resp: reqwest::Response) -> Result<O, ClientError> {
    let status = resp.status();
    if status.is_success() {
        return Ok(resp.json().await?);
    }
    let text = resp.text().await?;
    // anything that is not an error body (a proxy page, say) is still reported as one
    let body = serde_json::from_str(&text).unwrap_or(ErrorBody {
        kind: ErrorKind::InternalError,
        message: text,
    });
    Err(ClientError::Api {
        status: status.as_u16(),
        body,
    })
}
