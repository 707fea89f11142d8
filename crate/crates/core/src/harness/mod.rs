//! Experiment configuration, grid search over `(d′, N_z)`, baselines and
//! on-disk artifacts.

pub mod analysis;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use analysis::{
    average_rank, best_so_far, performance_profile, tau_grid, MethodRank, ProfileCurve, ScoreMatrix, TieMethod,
};

use crate::domain::{build_domain, DomainConfig, DEFAULT_DOMAIN_SIZE, DEFAULT_TOKEN_EMBEDDING_DIM};
use crate::error::{Error, Result};
use crate::featuremap::{precompute_all, FeatureMapSpec};
use crate::neuralucb::{self, BanditConfig, Features, LogRow, RunRecord};
use crate::oracle::ObjectiveSpec;
use crate::seed::{self, stream};
use crate::surrogate::TrainConfig;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialMode {
    /// Every trial runs the full grid.
    #[default]
    PerTrial,
    /// The first trial runs the grid; later trials reuse its best cell.
    ReuseBestCell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub intrinsic_dims: Vec<usize>,
    pub n_tokens: Vec<usize>,
    pub token_embedding_dim: usize,
    pub size: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            intrinsic_dims: vec![10, 50, 100],
            n_tokens: vec![3, 5, 10],
            token_embedding_dim: DEFAULT_TOKEN_EMBEDDING_DIM,
            size: DEFAULT_DOMAIN_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub name: String,
    pub master_seed: u64,
    /// Number of seeded trials; trial seeds derive from the master seed.
    pub trials: usize,
    pub trial_mode: TrialMode,
    pub objective: ObjectiveSpec,
    pub feature_map: FeatureMapSpec,
    pub grid: GridConfig,
    /// `seed` is ignored here; each trial supplies its own.
    pub bandit: BanditConfig,
    pub train: TrainConfig,
    /// Embed the whole domain once before the run.
    pub precompute: bool,
    pub precompute_parallelism: usize,
    /// Write measured per-row wall times into the JSONL log. When off the
    /// field is 0 and logs are byte-reproducible; timings stay in the summary.
    pub log_wall_clock: bool,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "instinct".into(),
            master_seed: 0,
            trials: 1,
            trial_mode: TrialMode::PerTrial,
            objective: ObjectiveSpec::default(),
            feature_map: FeatureMapSpec::default(),
            grid: GridConfig::default(),
            bandit: BanditConfig::default(),
            train: TrainConfig::default(),
            precompute: true,
            precompute_parallelism: 1,
            log_wall_clock: false,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.intrinsic_dims.is_empty() || self.grid.n_tokens.is_empty() {
            return Err(Error::Config("grid needs at least one d′ and one N_z value".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.precompute_parallelism == 0 {
            return Err(Error::Config("precompute_parallelism must be at least 1".into()));
        }
        let seeds = self.trial_seeds();
        let distinct: std::collections::HashSet<_> = seeds.iter().collect();
        if distinct.len() != seeds.len() {
            return Err(Error::Config("trial seeds collide".into()));
        }
        for cell in self.cells() {
            self.domain_config(cell, 0).validate()?;
        }
        self.bandit.validate()?;
        self.train.validate()
    }

    pub fn trial_seeds(&self) -> Vec<u64> {
        (0..self.trials as u64).map(|t| seed::derive_indexed(self.master_seed, stream::TRIAL, t)).collect()
    }

    /// Grid cells in `(d′, N_z)` order as listed in the config.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &d in &self.grid.intrinsic_dims {
            for &n in &self.grid.n_tokens {
                out.push(Cell { intrinsic_dim: d, n_tokens: n });
            }
        }
        out
    }

    pub fn domain_config(&self, cell: Cell, trial_seed: u64) -> DomainConfig {
        DomainConfig {
            intrinsic_dim: cell.intrinsic_dim,
            n_tokens: cell.n_tokens,
            token_embedding_dim: self.grid.token_embedding_dim,
            size: self.grid.size,
            sobol_seed: seed::derive(trial_seed, stream::SOBOL),
            projection_seed: seed::derive(trial_seed, stream::PROJECTION),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub intrinsic_dim: usize,
    pub n_tokens: usize,
}

impl Cell {
    pub fn run_id(&self, trial: usize) -> String {
        format!("t{trial}-d{}-n{}", self.intrinsic_dim, self.n_tokens)
    }
}

/// Runs one `(d′, N_z)` cell for one trial.
pub fn run_cell(cfg: &ExperimentConfig, cell: Cell, trial: usize, trial_seed: u64) -> Result<RunRecord> {
    run_cell_with(cfg, cell, trial, trial_seed, &cfg.bandit)
}

fn run_cell_with(
    cfg: &ExperimentConfig,
    cell: Cell,
    trial: usize,
    trial_seed: u64,
    bandit: &BanditConfig,
) -> Result<RunRecord> {
    let domain_cfg = cfg.domain_config(cell, trial_seed);
    let domain = build_domain(&domain_cfg)?;
    let map = cfg.feature_map.build(&domain, seed::derive(trial_seed, stream::FEATURE_MAP))?;
    let bandit = BanditConfig { seed: trial_seed, ..bandit.clone() };
    // Baselines share the bandit's objective, so deceptive targets avoid the
    // bandit's initial points, not the baseline's.
    let init = neuralucb::initial_indices(domain.len(), &BanditConfig { seed: trial_seed, ..cfg.bandit.clone() })?;
    let oracle = cfg.objective.build_for(&domain, seed::derive(trial_seed, stream::OBJECTIVE), &init)?;
    let run_id = cell.run_id(trial);
    let started = std::time::Instant::now();
    let cache =
        if cfg.precompute { Some(precompute_all(map.as_ref(), &domain, cfg.precompute_parallelism)?) } else { None };
    let precompute_ms = started.elapsed().as_secs_f64() * 1e3;
    let features = match &cache {
        Some(c) => Features::Cached(c),
        None => Features::OnDemand(map.as_ref()),
    };
    let mut record = neuralucb::run(&run_id, &domain, features, oracle.as_ref(), &bandit, &cfg.train)?;
    record.timing.embed_ms += precompute_ms;
    record.timing.total_ms += precompute_ms;
    record.config = serde_json::json!({
        "experiment": cfg.name,
        "trial": trial,
        "trial_seed": trial_seed,
        "cell": cell,
        "domain": domain_cfg,
        "objective": cfg.objective,
        "feature_map": cfg.feature_map,
        "bandit": bandit,
        "train": cfg.train,
        "precompute": cfg.precompute,
    });
    if !cfg.log_wall_clock {
        record.strip_wall_clock();
    }
    Ok(record)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub cell: Cell,
    pub run_id: String,
    pub best_score: Option<f64>,
    pub complete: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub trial: usize,
    pub trial_seed: u64,
    pub cells: Vec<CellReport>,
    pub best_cell: Cell,
    pub best_score: f64,
    #[serde(skip)]
    pub records: Vec<RunRecord>,
}

impl GridReport {
    pub fn best_record(&self) -> &RunRecord {
        let id = self.best_cell.run_id(self.trial);
        self.records.iter().find(|r| r.run_id == id).expect("best cell has a record")
    }
}

/// Picks the best completed cell; ties go to smaller d′, then smaller N_z.
pub fn choose_best(cells: &[CellReport]) -> Option<(Cell, f64)> {
    cells.iter().filter(|c| c.complete).filter_map(|c| c.best_score.map(|s| (c.cell, s))).min_by(
        |(ca, sa), (cb, sb)| {
            sb.total_cmp(sa).then(ca.intrinsic_dim.cmp(&cb.intrinsic_dim)).then(ca.n_tokens.cmp(&cb.n_tokens))
        },
    )
}

/// One independent run per grid cell for a single trial.
pub fn grid_search(cfg: &ExperimentConfig, trial: usize, trial_seed: u64) -> Result<GridReport> {
    grid_over(cfg, &cfg.cells(), trial, trial_seed)
}

fn grid_over(cfg: &ExperimentConfig, cells: &[Cell], trial: usize, trial_seed: u64) -> Result<GridReport> {
    let mut reports = Vec::new();
    let mut records = Vec::new();
    for &cell in cells {
        let run_id = cell.run_id(trial);
        match run_cell(cfg, cell, trial, trial_seed) {
            Ok(rec) => {
                reports.push(CellReport {
                    cell,
                    run_id,
                    best_score: rec.best_score(),
                    complete: rec.complete,
                    error: rec.error.clone(),
                });
                records.push(rec);
            }
            Err(e) => {
                tracing::warn!(%run_id, error = %e, "grid cell failed");
                reports.push(CellReport {
                    cell,
                    run_id,
                    best_score: None,
                    complete: false,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    let (best_cell, best_score) = choose_best(&reports).ok_or_else(|| {
        let why: Vec<String> = reports.iter().filter_map(|c| c.error.clone()).collect();
        Error::InsufficientData(format!("every grid cell failed: {}", why.join("; ")))
    })?;
    Ok(GridReport { trial, trial_seed, cells: reports, best_cell, best_score, records })
}

/// Runs every trial according to the configured trial mode.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<GridReport>> {
    cfg.validate()?;
    let mut out: Vec<GridReport> = Vec::new();
    for (trial, seed) in cfg.trial_seeds().into_iter().enumerate() {
        let report = match (cfg.trial_mode, out.first()) {
            (TrialMode::ReuseBestCell, Some(first)) => grid_over(cfg, &[first.best_cell], trial, seed)?,
            _ => grid_search(cfg, trial, seed)?,
        };
        out.push(report);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    /// Best of the `n_init` random initial points only.
    InitOnly,
    /// Best of `n_init + n_queries` uniformly random points.
    RandomFull,
}

impl std::str::FromStr for BaselineMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "init-only" | "init_only" => Ok(BaselineMode::InitOnly),
            "random-full" | "random_full" => Ok(BaselineMode::RandomFull),
            other => Err(Error::Config(format!("unknown baseline mode {other:?}; expected init-only or random-full"))),
        }
    }
}

/// Random-selection baseline on one cell: a bandit run with no bandit phase.
pub fn baseline_random(cfg: &ExperimentConfig, mode: BaselineMode, cell: Cell, trial: usize) -> Result<RunRecord> {
    let seed = cfg.trial_seeds()[trial];
    let n_init = match mode {
        BaselineMode::InitOnly => cfg.bandit.n_init,
        BaselineMode::RandomFull => cfg.bandit.budget(),
    };
    let bandit = BanditConfig { n_init, n_queries: 0, ..cfg.bandit.clone() };
    run_cell_with(cfg, cell, trial, seed, &bandit)
}

/// Writes `<run_id>.jsonl`, `<run_id>.summary.json`, `<run_id>.best_so_far.csv`
/// and, when available, `<run_id>.ckpt` into `dir`.
pub fn write_run_artifacts(record: &RunRecord, dir: &Path) -> Result<()> {
    let ckpt = match &record.final_params {
        Some(p) => {
            let mut buf = Vec::new();
            p.write_to(&mut buf)?;
            Some(buf)
        }
        None => None,
    };
    write_run_files(&RunSummary::from(record), &record.rows, ckpt.as_deref(), dir)
}

pub fn write_run_files(summary: &RunSummary, rows: &[LogRow], checkpoint: Option<&[u8]>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let id = &summary.run_id;
    std::fs::write(dir.join(format!("{id}.jsonl")), neuralucb::rows_to_jsonl(rows)?)?;
    let mut value = serde_json::to_value(summary)?;
    if let Some(bytes) = checkpoint {
        let name = format!("{id}.ckpt");
        std::fs::write(dir.join(&name), bytes)?;
        value["checkpoint"] = serde_json::Value::String(name);
    }
    std::fs::write(dir.join(format!("{id}.summary.json")), serde_json::to_string_pretty(&value)?)?;
    if !rows.is_empty() {
        let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
        let f = std::fs::File::create(dir.join(format!("{id}.best_so_far.csv")))?;
        analysis::write_best_so_far_csv(&scores, f)?;
    }
    Ok(())
}

pub fn write_grid_artifacts(reports: &[GridReport], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for r in reports {
        for rec in &r.records {
            write_run_artifacts(rec, dir)?;
        }
    }
    std::fs::write(dir.join("grid_report.json"), serde_json::to_string_pretty(reports)?)?;
    Ok(())
}

/// The persisted summary of a run: config echo, best result, call count, timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub config: serde_json::Value,
    pub best_index: Option<usize>,
    pub best_score: Option<f64>,
    pub best_iter: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub best_instruction: Option<String>,
    pub oracle_calls: usize,
    pub complete: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    pub timing: neuralucb::Timing,
}

impl From<&RunRecord> for RunSummary {
    fn from(r: &RunRecord) -> Self {
        RunSummary {
            run_id: r.run_id.clone(),
            config: r.config.clone(),
            best_index: r.best.as_ref().map(|b| b.index),
            best_score: r.best.as_ref().map(|b| b.score),
            best_iter: r.best.as_ref().map(|b| b.iter),
            best_instruction: r.best.as_ref().and_then(|b| b.instruction.clone()),
            oracle_calls: r.oracle_calls,
            complete: r.complete,
            error: r.error.clone(),
            timing: r.timing.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(d: usize, n: usize, s: Option<f64>) -> CellReport {
        let cell = Cell { intrinsic_dim: d, n_tokens: n };
        CellReport { cell, run_id: cell.run_id(0), best_score: s, complete: s.is_some(), error: None }
    }

    #[test]
    fn best_cell_tie_break() {
        let cells =
            vec![report(50, 3, Some(0.8)), report(10, 5, Some(0.8)), report(10, 3, Some(0.7)), report(10, 10, None)];
        assert_eq!(choose_best(&cells), Some((Cell { intrinsic_dim: 10, n_tokens: 5 }, 0.8)));
        let cells = vec![report(10, 5, Some(0.8)), report(10, 3, Some(0.8))];
        assert_eq!(choose_best(&cells).unwrap().0, Cell { intrinsic_dim: 10, n_tokens: 3 });
        assert_eq!(choose_best(&[report(10, 3, None)]), None);
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(cfg.cells().len(), 9);
        assert_eq!(cfg.grid.size, 10_000);
        assert!(ExperimentConfig::from_json(r#"{"grid":{"intrinsic_dims":[]}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"bogus":1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"trials":0}"#).is_err());
        let seeds = ExperimentConfig { trials: 5, ..cfg }.trial_seeds();
        assert_eq!(seeds.iter().collect::<std::collections::HashSet<_>>().len(), 5);
    }
}
