//! Request and response bodies of the HTTP service.

use std::path::Path;

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::domain::DomainConfig;
use crate::featuremap::{FeatureMapSpec, GroupDistances};
use crate::harness::{
    self, BaselineMode, Cell, CellReport, ExperimentConfig, GridReport, MethodRank, ProfileCurve, RunSummary,
    ScoreMatrix, TieMethod,
};
use crate::neuralucb::{LogRow, RunRecord};
use crate::Error;

pub fn encode_bytes(bytes: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

pub fn decode_bytes(text: &str) -> crate::Result<Vec<u8>> {
    base64::engine::general_purpose::STANDARD
        .decode(text)
        .map_err(|e| Error::Format(format!("invalid base64 payload: {e}")))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRequest {
    pub config: ExperimentConfig,
    /// Defaults to the first grid cell.
    #[serde(default)]
    pub cell: Option<Cell>,
    #[serde(default)]
    pub trial: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResponse {
    pub summary: RunSummary,
    pub rows: Vec<LogRow>,
    /// Surrogate checkpoint file, base64 encoded.
    #[serde(default)]
    pub checkpoint: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridRequest {
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial: usize,
    pub trial_seed: u64,
    pub cells: Vec<CellReport>,
    pub best_cell: Cell,
    pub best_score: f64,
    pub runs: Vec<RunResponse>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResponse {
    pub trials: Vec<TrialReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineRequest {
    pub config: ExperimentConfig,
    pub mode: BaselineMode,
    #[serde(default)]
    pub cell: Option<Cell>,
    #[serde(default)]
    pub trial: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileRequest {
    pub matrix: ScoreMatrix,
    /// Defaults to 101 evenly spaced values on `[0, 1]`.
    #[serde(default)]
    pub taus: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileResponse {
    pub curves: Vec<ProfileCurve>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankRequest {
    pub matrix: ScoreMatrix,
    #[serde(default)]
    pub ties: TieMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankResponse {
    pub ranks: Vec<MethodRank>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledGroup {
    pub label: String,
    pub vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistancesRequest {
    pub groups: Vec<LabeledGroup>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistancesResponse {
    pub groups: Vec<GroupDistances>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrecomputeRequest {
    pub domain: DomainConfig,
    #[serde(default)]
    pub feature_map: FeatureMapSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub parallelism: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecomputeResponse {
    pub map_id: String,
    pub points: usize,
    pub feature_dim: usize,
    pub elapsed_ms: f64,
    /// Feature cache file, base64 encoded.
    pub cache: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    #[serde(default)]
    pub retryable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
}

impl RunResponse {
    pub fn from_record(record: &RunRecord) -> crate::Result<Self> {
        let checkpoint = match &record.final_params {
            Some(p) => {
                let mut buf = Vec::new();
                p.write_to(&mut buf)?;
                Some(encode_bytes(&buf))
            }
            None => None,
        };
        Ok(RunResponse { summary: RunSummary::from(record), rows: record.rows.clone(), checkpoint })
    }
}

impl TrialReport {
    pub fn from_report(report: &GridReport) -> crate::Result<Self> {
        Ok(TrialReport {
            trial: report.trial,
            trial_seed: report.trial_seed,
            cells: report.cells.clone(),
            best_cell: report.best_cell,
            best_score: report.best_score,
            runs: report.records.iter().map(RunResponse::from_record).collect::<crate::Result<_>>()?,
        })
    }
}

impl RunResponse {
    /// Writes the same files as [`crate::harness::write_run_artifacts`].
    pub fn write_artifacts(&self, dir: &Path) -> crate::Result<()> {
        let ckpt = self.checkpoint.as_deref().map(decode_bytes).transpose()?;
        harness::write_run_files(&self.summary, &self.rows, ckpt.as_deref(), dir)
    }
}

impl TrialReport {
    /// The report without its runs, as persisted in `grid_report.json`.
    pub fn to_grid_report(&self) -> GridReport {
        GridReport {
            trial: self.trial,
            trial_seed: self.trial_seed,
            cells: self.cells.clone(),
            best_cell: self.best_cell,
            best_score: self.best_score,
            records: Vec::new(),
        }
    }
}

impl GridResponse {
    /// Writes the same files as [`crate::harness::write_grid_artifacts`].
    pub fn write_artifacts(&self, dir: &Path) -> crate::Result<()> {
        std::fs::create_dir_all(dir)?;
        for t in &self.trials {
            for run in &t.runs {
                run.write_artifacts(dir)?;
            }
        }
        let reports: Vec<GridReport> = self.trials.iter().map(TrialReport::to_grid_report).collect();
        std::fs::write(dir.join("grid_report.json"), serde_json::to_string_pretty(&reports)?)?;
        Ok(())
    }
}
