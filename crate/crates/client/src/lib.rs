//! Blocking HTTP client for the optimizer service.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use instinct_core::api::{
    BaselineRequest, DistancesRequest, DistancesResponse, ErrorBody, GridRequest, GridResponse, Health,
    PrecomputeRequest, PrecomputeResponse, ProfileRequest, ProfileResponse, RankRequest, RankResponse, RunRequest,
    RunResponse,
};

pub const SERVER_URL_ENV: &str = "INSTINCT_SERVER_URL";

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("server returned {status}: {} ({})", .body.message, .body.error)]
    Api { status: u16, body: ErrorBody },

    #[error("request to {url} failed: {source}")]
    Transport {
        url: String,
        #[source]
        source: reqwest::Error,
    },

    #[error("unexpected response from {url}: {message}")]
    Decode { url: String, message: String },
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::blocking::Client,
}

impl Client {
    /// Runs can take minutes, so requests have no overall timeout.
    pub fn new(base_url: &str) -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(None)
            .connect_timeout(Duration::from_secs(10))
            .build()
            .map_err(|source| ClientError::Transport { url: base_url.into(), source })?;
        Ok(Client { base: base_url.trim_end_matches('/').to_string(), http })
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn decode<T: DeserializeOwned>(url: String, resp: reqwest::blocking::Response) -> Result<T> {
        let status = resp.status();
        let text = resp.text().map_err(|source| ClientError::Transport { url: url.clone(), source })?;
        if status.is_success() {
            return serde_json::from_str(&text).map_err(|e| ClientError::Decode { url, message: e.to_string() });
        }
        let body = serde_json::from_str(&text).unwrap_or(ErrorBody {
            error: "http".into(),
            message: text,
            retryable: status.is_server_error(),
        });
        Err(ClientError::Api { status: status.as_u16(), body })
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp> {
        let url = format!("{}{path}", self.base);
        let resp = self
            .http
            .post(&url)
            .json(body)
            .send()
            .map_err(|source| ClientError::Transport { url: url.clone(), source })?;
        Self::decode(url, resp)
    }

    pub fn health(&self) -> Result<Health> {
        let url = format!("{}/health", self.base);
        let resp = self.http.get(&url).send().map_err(|source| ClientError::Transport { url: url.clone(), source })?;
        Self::decode(url, resp)
    }

    pub fn run(&self, req: &RunRequest) -> Result<RunResponse> {
        self.post("/v1/run", req)
    }

    pub fn grid(&self, req: &GridRequest) -> Result<GridResponse> {
        self.post("/v1/grid", req)
    }

    pub fn baseline_random(&self, req: &BaselineRequest) -> Result<RunResponse> {
        self.post("/v1/baseline-random", req)
    }

    pub fn profile(&self, req: &ProfileRequest) -> Result<ProfileResponse> {
        self.post("/v1/profile", req)
    }

    pub fn rank(&self, req: &RankRequest) -> Result<RankResponse> {
        self.post("/v1/rank", req)
    }

    pub fn distances(&self, req: &DistancesRequest) -> Result<DistancesResponse> {
        self.post("/v1/distances", req)
    }

    pub fn precompute(&self, req: &PrecomputeRequest) -> Result<PrecomputeResponse> {
        self.post("/v1/precompute", req)
    }
}
