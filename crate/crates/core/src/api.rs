//! Wire format of the HTTP service: every operation is a `POST` of a
//! [`Job`] to its route, answered with the operation's output or an
//! [`ErrorBody`](crate::ErrorBody).

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const HEALTH: &str = "/health";
pub const BUILD: &str = "/v1/build";
pub const QUERY: &str = "/v1/query";
pub const EVAL: &str = "/v1/eval";
pub const SENS: &str = "/v1/sens";
pub const SYNTH: &str = "/v1/synth";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job<R> {
    pub request: R,
    #[serde(default)]
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
}
