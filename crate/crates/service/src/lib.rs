//! HTTP/JSON front end for the optimizer.
//!
//! Compute-heavy handlers run on the blocking pool. Every failure is returned
//! as an [`ErrorBody`] with a status derived from the error kind.

pub mod mock;

use std::net::SocketAddr;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Serialize;

use instinct_core::api::{
    encode_bytes, BaselineRequest, DistancesRequest, DistancesResponse, ErrorBody, GridRequest, GridResponse, Health,
    PrecomputeRequest, PrecomputeResponse, ProfileRequest, ProfileResponse, RankRequest, RankResponse, RunRequest,
    RunResponse, TrialReport,
};
use instinct_core::domain::build_domain;
use instinct_core::featuremap::{pairwise_group_distances, precompute_all};
use instinct_core::harness::{self, average_rank, performance_profile, tau_grid, Cell, ExperimentConfig};
use instinct_core::Error;

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    /// Also serve a deterministic stand-in LLM under `/mock`.
    pub mock_llm: bool,
}

#[derive(Debug, Clone)]
struct AppState {
    mock: mock::MockLlm,
}

/// Error returned by handlers; renders as JSON.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            body: ErrorBody { error: "bad_request".into(), message: message.into(), retryable: false },
        }
    }
}

fn error_kind(err: &Error) -> (&'static str, StatusCode) {
    match err {
        Error::Config(_) => ("config", StatusCode::BAD_REQUEST),
        Error::Format(_) => ("format", StatusCode::BAD_REQUEST),
        Error::Json(_) => ("format", StatusCode::BAD_REQUEST),
        Error::Csv(_) => ("format", StatusCode::BAD_REQUEST),
        Error::NumericInput(_) => ("numeric_input", StatusCode::BAD_REQUEST),
        Error::BudgetExhausted(_) => ("budget_exhausted", StatusCode::UNPROCESSABLE_ENTITY),
        Error::InsufficientData(_) => ("insufficient_data", StatusCode::UNPROCESSABLE_ENTITY),
        Error::Transport { .. } => ("transport", StatusCode::BAD_GATEWAY),
        Error::EmbedFailed { source, .. } => match source.as_ref() {
            Error::Transport { .. } => ("embed_failed", StatusCode::BAD_GATEWAY),
            _ => ("embed_failed", StatusCode::INTERNAL_SERVER_ERROR),
        },
        Error::OracleContract(_) => ("oracle_contract", StatusCode::BAD_GATEWAY),
        Error::Divergence { .. } => ("divergence", StatusCode::INTERNAL_SERVER_ERROR),
        Error::InvariantViolation(_) => ("invariant_violation", StatusCode::INTERNAL_SERVER_ERROR),
        Error::Io(_) => ("io", StatusCode::INTERNAL_SERVER_ERROR),
    }
}

impl From<Error> for ApiError {
    fn from(err: Error) -> Self {
        let (kind, status) = error_kind(&err);
        let retryable =
            err.is_retryable() || matches!(&err, Error::EmbedFailed { source, .. } if source.is_retryable());
        ApiError { status, body: ErrorBody { error: kind.into(), message: err.to_string(), retryable } }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(status = %self.status, message = %self.body.message, "request failed");
        }
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Serialize + Send + 'static,
    F: FnOnce() -> instinct_core::Result<T> + Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(Ok(v)) => Ok(Json(v)),
        Ok(Err(e)) => Err(e.into()),
        Err(e) => Err(ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            body: ErrorBody { error: "panic".into(), message: e.to_string(), retryable: false },
        }),
    }
}

fn pick_cell(cfg: &ExperimentConfig, cell: Option<Cell>, trial: usize) -> instinct_core::Result<Cell> {
    cfg.validate()?;
    if trial >= cfg.trials {
        return Err(Error::Config(format!("trial {trial} out of range; config has {} trial(s)", cfg.trials)));
    }
    Ok(cell.unwrap_or(cfg.cells()[0]))
}

async fn health() -> Json<Health> {
    Json(Health { status: "ok".into(), version: env!("CARGO_PKG_VERSION").into() })
}

async fn run(body: Bytes) -> ApiResult<RunResponse> {
    let req: RunRequest = parse(&body)?;
    blocking(move || {
        let cell = pick_cell(&req.config, req.cell, req.trial)?;
        let seed = req.config.trial_seeds()[req.trial];
        let record = harness::run_cell(&req.config, cell, req.trial, seed)?;
        RunResponse::from_record(&record)
    })
    .await
}

async fn grid(body: Bytes) -> ApiResult<GridResponse> {
    let req: GridRequest = parse(&body)?;
    blocking(move || {
        req.config.validate()?;
        let reports = harness::run_experiment(&req.config)?;
        let trials = reports.iter().map(TrialReport::from_report).collect::<instinct_core::Result<_>>()?;
        Ok(GridResponse { trials })
    })
    .await
}

async fn baseline(body: Bytes) -> ApiResult<RunResponse> {
    let req: BaselineRequest = parse(&body)?;
    blocking(move || {
        let cell = pick_cell(&req.config, req.cell, req.trial)?;
        let record = harness::baseline_random(&req.config, req.mode, cell, req.trial)?;
        RunResponse::from_record(&record)
    })
    .await
}

async fn profile(body: Bytes) -> ApiResult<ProfileResponse> {
    let req: ProfileRequest = parse(&body)?;
    blocking(move || {
        let taus = req.taus.unwrap_or_else(|| tau_grid(1.0, 101));
        Ok(ProfileResponse { curves: performance_profile(&req.matrix, &taus)? })
    })
    .await
}

async fn rank(body: Bytes) -> ApiResult<RankResponse> {
    let req: RankRequest = parse(&body)?;
    blocking(move || Ok(RankResponse { ranks: average_rank(&req.matrix, req.ties)? })).await
}

async fn distances(body: Bytes) -> ApiResult<DistancesResponse> {
    let req: DistancesRequest = parse(&body)?;
    blocking(move || {
        let groups: Vec<(String, Vec<Vec<f64>>)> = req.groups.into_iter().map(|g| (g.label, g.vectors)).collect();
        Ok(DistancesResponse { groups: pairwise_group_distances(&groups)? })
    })
    .await
}

async fn precompute(body: Bytes) -> ApiResult<PrecomputeResponse> {
    let req: PrecomputeRequest = parse(&body)?;
    blocking(move || {
        if req.parallelism == 0 {
            return Err(Error::Config("parallelism must be at least 1".into()));
        }
        req.domain.validate()?;
        let domain = build_domain(&req.domain)?;
        let map = req.feature_map.build(&domain, req.seed)?;
        let started = std::time::Instant::now();
        let cache = precompute_all(map.as_ref(), &domain, req.parallelism)?;
        let elapsed_ms = started.elapsed().as_secs_f64() * 1e3;
        let mut buf = Vec::new();
        cache.write_to(&mut buf)?;
        Ok(PrecomputeResponse {
            map_id: cache.map_id().to_string(),
            points: cache.len(),
            feature_dim: cache.feature_dim(),
            elapsed_ms,
            cache: encode_bytes(&buf),
        })
    })
    .await
}

pub fn router(config: ServiceConfig) -> Router {
    let state = AppState { mock: mock::MockLlm::default() };
    let mut app = Router::new()
        .route("/health", get(health))
        .route("/v1/run", post(run))
        .route("/v1/grid", post(grid))
        .route("/v1/baseline-random", post(baseline))
        .route("/v1/profile", post(profile))
        .route("/v1/rank", post(rank))
        .route("/v1/distances", post(distances))
        .route("/v1/precompute", post(precompute));
    if config.mock_llm {
        app = app
            .route("/mock/embed", post(mock_embed))
            .route("/mock/generate", post(mock_generate))
            .route("/mock/complete", post(mock_complete));
    }
    app.with_state(state)
}

async fn mock_embed(State(s): State<AppState>, body: Bytes) -> ApiResult<mock::EmbedReply> {
    Ok(Json(s.mock.embed(parse(&body)?)))
}

async fn mock_generate(State(s): State<AppState>, body: Bytes) -> ApiResult<mock::GenerateReply> {
    Ok(Json(s.mock.generate(parse(&body)?)))
}

async fn mock_complete(State(s): State<AppState>, body: Bytes) -> ApiResult<mock::CompleteReply> {
    Ok(Json(s.mock.complete(parse(&body)?)))
}

/// A bound listener plus its resolved address; useful with port 0.
pub struct Bound {
    pub addr: SocketAddr,
    listener: tokio::net::TcpListener,
}

pub async fn bind(addr: SocketAddr) -> std::io::Result<Bound> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    Ok(Bound { addr: listener.local_addr()?, listener })
}

impl Bound {
    pub async fn serve(self, config: ServiceConfig) -> std::io::Result<()> {
        tracing::info!(addr = %self.addr, mock = config.mock_llm, "listening");
        axum::serve(self.listener, router(config)).await
    }

    pub async fn serve_until<F>(self, config: ServiceConfig, shutdown: F) -> std::io::Result<()>
    where
        F: std::future::Future<Output = ()> + Send + 'static,
    {
        tracing::info!(addr = %self.addr, mock = config.mock_llm, "listening");
        axum::serve(self.listener, router(config)).with_graceful_shutdown(shutdown).await
    }
}

/// Binds and serves until ctrl-c.
pub async fn serve(addr: SocketAddr, config: ServiceConfig) -> std::io::Result<()> {
    bind(addr)
        .await?
        .serve_until(config, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
