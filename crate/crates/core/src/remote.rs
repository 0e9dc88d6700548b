//! HTTP client for the log-probability and embedding server protocol.
//!
//! ```text
//! POST /v1/logprobs  {"prompt": str, "completion": str, "max_length"?: int}
//!                 -> {"tokens": [str], "token_logprobs": [float], "truncated": bool, "model": str}
//! POST /v1/embed     {"texts": [str]}
//!                 -> {"vectors": [[float]], "dim": int, "model": str}
//! GET  /v1/health -> {"status": str, "models": ..., "max_length": int}
//! ```
//!
//! Request bodies are compact JSON with keys in the order shown above.
//! Log-probabilities are natural logs. When a token is configured, every
//! request carries `Authorization: Bearer <token>`.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::scoring::{BackendKind, Completion, LogProbBackend, TokenLogProbs};

/// Environment variable holding the shared bearer token for remote servers.
pub const TOKEN_ENV: &str = "SUPERFILTER_REMOTE_TOKEN";

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub prompt: String,
    pub completion: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_length: Option<usize>,
}

impl ScoreRequest {
    /// The exact bytes sent on the wire.
    pub fn to_body(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("request serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub tokens: Vec<String>,
    pub token_logprobs: Vec<f64>,
    #[serde(default)]
    pub truncated: bool,
    #[serde(default)]
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbedRequest<'a> {
    pub texts: &'a [String],
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct EmbedResponse {
    pub vectors: Vec<Vec<f64>>,
    pub dim: usize,
    #[serde(default)]
    pub model: String,
}

#[derive(Debug, Clone)]
pub struct RemoteClient {
    name: String,
    base_url: String,
    max_length: Option<usize>,
    token: Option<String>,
    agent: ureq::Agent,
}

impl RemoteClient {
    pub fn new(base_url: impl Into<String>, timeout: Duration) -> Self {
        let base_url = base_url.into().trim_end_matches('/').to_owned();
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            name: format!("remote-{}", host_label(&base_url)),
            base_url,
            max_length: None,
            token: None,
            agent,
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_max_length(mut self, max_length: Option<usize>) -> Self {
        self.max_length = max_length;
        self
    }

    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.token = token.filter(|t| !t.is_empty());
        self
    }

    /// Reads the bearer token from [`TOKEN_ENV`] when set.
    pub fn with_env_token(self) -> Self {
        let token = std::env::var(TOKEN_ENV).ok();
        self.with_token(token)
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn post(&self, path: &str, body: Vec<u8>) -> Result<Value> {
        let url = format!("{}{path}", self.base_url);
        let mut request = self.agent.post(&url).content_type("application/json");
        if let Some(token) = &self.token {
            request = request.header("Authorization", format!("Bearer {token}"));
        }
        let mut response = request
            .send(&body[..])
            .map_err(|e| Error::backend(None, format!("POST {url}: {e}")))?;
        let status = response.status();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::backend(None, format!("POST {url}: reading body: {e}")))?;
        if !status.is_success() {
            return Err(Error::backend(
                None,
                format!("POST {url}: HTTP {}: {}", status.as_u16(), text.trim()),
            ));
        }
        serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("POST {url}: response is not valid JSON: {e}")))
    }

    pub fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse> {
        let value = self.post("/v1/logprobs", request.to_body())?;
        serde_json::from_value(value)
            .map_err(|e| Error::Data(format!("malformed logprobs response: {e}")))
    }

    pub fn embed(&self, texts: &[String]) -> Result<EmbedResponse> {
        let body = serde_json::to_vec(&EmbedRequest { texts }).expect("request serializes");
        let value = self.post("/v1/embed", body)?;
        let response: EmbedResponse = serde_json::from_value(value)
            .map_err(|e| Error::Data(format!("malformed embed response: {e}")))?;
        if response.vectors.len() != texts.len() {
            return Err(Error::Data(format!(
                "embed returned {} vectors for {} texts",
                response.vectors.len(),
                texts.len()
            )));
        }
        if let Some(v) = response.vectors.iter().find(|v| v.len() != response.dim) {
            return Err(Error::Data(format!(
                "embed vector of length {} does not match dim {}",
                v.len(),
                response.dim
            )));
        }
        Ok(response)
    }

    pub fn health(&self) -> Result<Value> {
        let url = format!("{}/v1/health", self.base_url);
        let mut response = self
            .agent
            .get(&url)
            .call()
            .map_err(|e| Error::backend(None, format!("GET {url}: {e}")))?;
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::backend(None, format!("GET {url}: {e}")))?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("GET {url}: {e}")))
    }
}

impl LogProbBackend for RemoteClient {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Remote
    }

    fn logprobs(&self, prompt: &str, completion: &str) -> Result<Completion> {
        if completion.is_empty() {
            return Err(Error::Data("completion must be non-empty".into()));
        }
        let response = self.score(&ScoreRequest {
            prompt: prompt.to_owned(),
            completion: completion.to_owned(),
            max_length: self.max_length,
        })?;
        Ok(Completion {
            logprobs: TokenLogProbs::new(response.tokens, response.token_logprobs)?,
            truncated: response.truncated,
        })
    }

    fn sequence_start(&self) -> String {
        "server default (see /v1/health)".into()
    }
}

fn host_label(url: &str) -> String {
    let rest = url.split_once("://").map_or(url, |(_, r)| r);
    rest.split('/').next().unwrap_or(rest).to_owned()
}
