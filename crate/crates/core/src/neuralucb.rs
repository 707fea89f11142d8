//! NeuralUCB over a discrete domain: diagonal precision, uncertainty,
//! acquisition, selection and the optimization loop.

use std::collections::HashSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::domain::{subsample, DiscreteDomain};
use crate::error::{ensure, Error, Result};
use crate::featuremap::{embed_indices, FeatureCache, FeatureMap, FeatureVector};
use crate::oracle::{EvalContext, Oracle};
use crate::seed::{self, RunSeeds};
use crate::surrogate::{train, SurrogateParams, TrainConfig};

/// Scores within this distance of `[0, 1]` are clamped instead of rejected.
pub const SCORE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub domain_index: usize,
    pub feature: FeatureVector,
    pub score: f64,
    pub iteration: usize,
}

/// Diagonal of `V = λI + Σ ∇m ∇mᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionDiag {
    diag: Vec<f64>,
    lambda: f64,
}

impl PrecisionDiag {
    pub fn new(params: usize, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
        }
        Ok(PrecisionDiag { diag: vec![lambda; params], lambda })
    }

    pub fn add_gradient(&mut self, g: &[f64]) -> Result<()> {
        ensure(g.len() == self.diag.len(), || {
            format!("gradient has {} entries, precision has {}", g.len(), self.diag.len())
        })?;
        for (d, gi) in self.diag.iter_mut().zip(g) {
            *d += gi * gi;
        }
        Ok(())
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecisionMode {
    /// Re-evaluate every historical gradient at the current parameters.
    #[default]
    Recompute,
    /// Accumulate each point's gradient once, at the parameters that selected it.
    Incremental,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BanditConfig {
    pub nu: f64,
    pub lambda: f64,
    pub n_init: usize,
    pub n_queries: usize,
    pub candidates_per_iter: usize,
    pub precision_mode: PrecisionMode,
    pub warm_start: bool,
    /// Master seed for the init, mlp_init and subsample streams.
    pub seed: u64,
    /// Concurrent oracle calls during the initial phase.
    pub init_parallelism: usize,
    /// Concurrent embeds when features are not pre-computed.
    pub embed_parallelism: usize,
}

impl Default for BanditConfig {
    fn default() -> Self {
        BanditConfig {
            nu: 1.0,
            lambda: 0.1,
            n_init: 40,
            n_queries: 125,
            candidates_per_iter: 1000,
            precision_mode: PrecisionMode::Recompute,
            warm_start: true,
            seed: 0,
            init_parallelism: 1,
            embed_parallelism: 1,
        }
    }
}

impl BanditConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.nu >= 0.0
            && self.lambda > 0.0
            && self.n_init >= 1
            && self.candidates_per_iter >= 1
            && self.init_parallelism >= 1
            && self.embed_parallelism >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(
                "bandit config needs nu >= 0, lambda > 0, n_init >= 1, candidates_per_iter >= 1, parallelism >= 1"
                    .into(),
            ))
        }
    }

    pub fn budget(&self) -> usize {
        self.n_init + self.n_queries
    }
}

/// `diag[p] = λ + Σ_τ g_τ[p]²` with every gradient taken at `theta`.
pub fn build_precision(theta: &SurrogateParams, history: &[Observation], lambda: f64) -> Result<PrecisionDiag> {
    let mut v = PrecisionDiag::new(theta.len(), lambda)?;
    for obs in history {
        v.add_gradient(&theta.param_gradient(obs.feature.values())?)?;
    }
    Ok(v)
}

fn sigma_from_gradient(v: &PrecisionDiag, g: &[f64]) -> f64 {
    g.iter().zip(&v.diag).map(|(gi, d)| gi * gi / d).sum::<f64>().sqrt()
}

/// `sqrt(Σ_p g_p² / V_pp)` with `g` the parameter gradient at `x`.
pub fn uncertainty(theta: &SurrogateParams, v: &PrecisionDiag, x: &[f64]) -> Result<f64> {
    ensure(theta.len() == v.diag.len(), || "precision layout does not match the surrogate".into())?;
    Ok(sigma_from_gradient(v, &theta.param_gradient(x)?))
}

/// `m(x) + nu * σ(x)`.
pub fn acquisition(theta: &SurrogateParams, v: &PrecisionDiag, x: &[f64], nu: f64) -> Result<f64> {
    Ok(score_candidate(theta, v, x, nu)?.acq)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub mean: f64,
    pub sigma: f64,
    pub acq: f64,
    pub gradient: Vec<f64>,
}

pub fn score_candidate(theta: &SurrogateParams, v: &PrecisionDiag, x: &[f64], nu: f64) -> Result<Scored> {
    ensure(theta.len() == v.diag.len(), || "precision layout does not match the surrogate".into())?;
    let (mean, gradient) = theta.forward_and_gradient(x)?;
    let sigma = sigma_from_gradient(v, &gradient);
    Ok(Scored { mean, sigma, acq: mean + nu * sigma, gradient })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub scored: Scored,
}

/// Argmax of the acquisition over `(domain index, feature)` pairs; ties go to
/// the lowest domain index.
pub fn select_from<'a>(
    theta: &SurrogateParams,
    v: &PrecisionDiag,
    candidates: impl IntoIterator<Item = (usize, &'a [f64])>,
    nu: f64,
) -> Result<Selection> {
    let mut best: Option<Selection> = None;
    for (index, x) in candidates {
        let scored = score_candidate(theta, v, x, nu)?;
        let better = match &best {
            None => true,
            Some(b) => scored.acq > b.scored.acq || (scored.acq == b.scored.acq && index < b.index),
        };
        if better {
            best = Some(Selection { index, scored });
        }
    }
    best.ok_or_else(|| Error::BudgetExhausted("no candidates to select from".into()))
}

pub fn select_next(
    theta: &SurrogateParams,
    v: &PrecisionDiag,
    cache: &FeatureCache,
    candidates: &[usize],
    nu: f64,
) -> Result<Selection> {
    let pairs = candidates
        .iter()
        .map(|&i| {
            cache
                .get(i)
                .map(|f| (i, f.values()))
                .ok_or_else(|| Error::InvariantViolation(format!("index {i} is outside the feature cache")))
        })
        .collect::<Result<Vec<_>>>()?;
    select_from(theta, v, pairs, nu)
}

/// Where the loop gets features from.
#[derive(Clone, Copy)]
pub enum Features<'a> {
    Cached(&'a FeatureCache),
    /// Embed candidates on demand every iteration.
    OnDemand(&'a dyn FeatureMap),
}

impl Features<'_> {
    fn fetch(&self, domain: &DiscreteDomain, indices: &[usize], parallelism: usize) -> Result<Vec<FeatureVector>> {
        match self {
            Features::Cached(cache) => indices
                .iter()
                .map(|&i| {
                    cache
                        .get(i)
                        .cloned()
                        .ok_or_else(|| Error::InvariantViolation(format!("index {i} is outside the feature cache")))
                })
                .collect(),
            Features::OnDemand(map) => embed_indices(*map, domain, indices, parallelism),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Init,
    Bandit,
}

/// One line of the run's JSONL log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iter: usize,
    pub phase: Phase,
    pub index: usize,
    pub score: f64,
    pub pred_mean: Option<f64>,
    pub sigma: Option<f64>,
    pub acq: Option<f64>,
    pub train_loss_final: Option<f64>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Best {
    pub index: usize,
    pub score: f64,
    pub iter: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub instruction: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_ms: f64,
    pub embed_ms: f64,
    pub train_ms: f64,
    pub oracle_ms: f64,
    /// Wall time of every logged row, in log order.
    pub row_ms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub config: serde_json::Value,
    pub rows: Vec<LogRow>,
    pub best: Option<Best>,
    pub oracle_calls: usize,
    pub complete: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    pub timing: Timing,
    #[serde(skip)]
    pub final_params: Option<SurrogateParams>,
}

impl RunRecord {
    pub fn scores(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.score).collect()
    }

    pub fn best_score(&self) -> Option<f64> {
        self.best.as_ref().map(|b| b.score)
    }

    pub fn log_jsonl(&self) -> Result<String> {
        rows_to_jsonl(&self.rows)
    }

    /// Zeroes per-row wall times so logs depend only on the inputs; the
    /// measured times stay in `timing.row_ms`.
    pub fn strip_wall_clock(&mut self) {
        for row in &mut self.rows {
            row.wall_ms = 0.0;
        }
    }
}

/// Rows as JSON lines, each terminated by `\n`.
pub fn rows_to_jsonl(rows: &[LogRow]) -> Result<String> {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row)?);
        out.push('\n');
    }
    Ok(out)
}

/// Clamps float noise at the edges of `[0, 1]`; anything else breaks the contract.
pub fn check_score(score: f64) -> Result<f64> {
    if !score.is_finite() {
        return Err(Error::OracleContract(format!("oracle returned non-finite score {score}")));
    }
    if (0.0..=1.0).contains(&score) {
        return Ok(score);
    }
    if (-SCORE_SLACK..=1.0 + SCORE_SLACK).contains(&score) {
        tracing::warn!(score, "clamping oracle score into [0, 1]");
        return Ok(score.clamp(0.0, 1.0));
    }
    Err(Error::OracleContract(format!("oracle returned {score}, outside [0, 1]")))
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

struct Loop<'a> {
    domain: &'a DiscreteDomain,
    features: Features<'a>,
    oracle: &'a dyn Oracle,
    cfg: &'a BanditConfig,
    train_cfg: &'a TrainConfig,
    record: RunRecord,
    history: Vec<Observation>,
    queried: HashSet<usize>,
}

impl Loop<'_> {
    fn evaluate(&mut self, iter: usize, index: usize) -> Result<(f64, Option<String>)> {
        let ctx = EvalContext { run_id: self.record.run_id.clone(), iteration: iter, domain_index: index };
        let t = Instant::now();
        let z = self.domain.point(index)?;
        let res = self.oracle.evaluate(&ctx, &z);
        self.record.timing.oracle_ms += ms(t);
        self.record.oracle_calls += 1;
        let eval = res?;
        Ok((check_score(eval.score)?, eval.instruction))
    }

    fn push(&mut self, row: LogRow, feature: FeatureVector, instruction: Option<String>) {
        let better = self.record.best.as_ref().is_none_or(|b| row.score > b.score);
        if better {
            self.record.best = Some(Best { index: row.index, score: row.score, iter: row.iter, instruction });
        }
        self.history.push(Observation { domain_index: row.index, feature, score: row.score, iteration: row.iter });
        self.queried.insert(row.index);
        self.record.timing.row_ms.push(row.wall_ms);
        self.record.rows.push(row);
    }

    fn init_phase(&mut self) -> Result<()> {
        let indices = initial_indices(self.domain.len(), self.cfg)?;
        let t = Instant::now();
        let feats = self.features.fetch(self.domain, &indices, self.cfg.embed_parallelism)?;
        self.record.timing.embed_ms += ms(t);

        let workers = self.cfg.init_parallelism.min(indices.len()).max(1);
        if workers == 1 {
            for (k, (&index, feature)) in indices.iter().zip(feats).enumerate() {
                let t = Instant::now();
                let (score, instruction) = self.evaluate(k, index)?;
                let row = init_row(k, index, score, ms(t));
                self.push(row, feature, instruction);
            }
            return Ok(());
        }
        // Concurrent calls; the history is assembled in subsample order afterwards.
        let (run_id, domain, oracle) = (self.record.run_id.clone(), self.domain, self.oracle);
        let chunk = indices.len().div_ceil(workers);
        let t_all = Instant::now();
        let results: Vec<(Result<(f64, Option<String>)>, f64)> = std::thread::scope(|s| {
            let handles: Vec<_> = indices
                .chunks(chunk)
                .enumerate()
                .map(|(c, part)| {
                    let run_id = &run_id;
                    s.spawn(move || {
                        part.iter()
                            .enumerate()
                            .map(|(j, &index)| {
                                let t = Instant::now();
                                let ctx = EvalContext {
                                    run_id: run_id.clone(),
                                    iteration: c * chunk + j,
                                    domain_index: index,
                                };
                                let r = domain
                                    .point(index)
                                    .and_then(|z| oracle.evaluate(&ctx, &z))
                                    .and_then(|e| Ok((check_score(e.score)?, e.instruction)));
                                (r, ms(t))
                            })
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("oracle worker panicked")).collect()
        });
        self.record.timing.oracle_ms += ms(t_all);
        self.record.oracle_calls += results.len();
        for (k, ((&index, feature), (res, wall))) in indices.iter().zip(feats).zip(results).enumerate() {
            let (score, instruction) = res?;
            self.push(init_row(k, index, score, wall), feature, instruction);
        }
        Ok(())
    }

    fn bandit_phase(&mut self) -> Result<()> {
        let seeds = RunSeeds::from_master(self.cfg.seed);
        let mut sub_rng = seed::rng(seeds.subsample);
        let dh = self.history[0].feature.dim();
        let theta0 = SurrogateParams::init(dh, self.train_cfg.hidden, self.train_cfg.activation, seeds.mlp_init)?;
        let mut theta = theta0.clone();
        let mut incremental: Option<PrecisionDiag> = None;

        for q in 0..self.cfg.n_queries {
            let t_iter = Instant::now();
            let iter = self.history.len();

            // step 1: fit the surrogate to everything observed so far
            let t = Instant::now();
            let start = if self.cfg.warm_start { &theta } else { &theta0 };
            let xs: Vec<&[f64]> = self.history.iter().map(|o| o.feature.values()).collect();
            let ys: Vec<f64> = self.history.iter().map(|o| o.score).collect();
            let outcome = train(start, &xs, &ys, self.train_cfg)?;
            theta = outcome.params.clone();
            self.record.timing.train_ms += ms(t);

            let v = match self.cfg.precision_mode {
                PrecisionMode::Recompute => build_precision(&theta, &self.history, self.cfg.lambda)?,
                PrecisionMode::Incremental => {
                    incremental.get_or_insert(build_precision(&theta, &self.history, self.cfg.lambda)?).clone()
                }
            };

            // step 2: choose among a fresh random subset of unqueried points
            let remaining = self.domain.len() - self.queried.len();
            if remaining == 0 {
                return Err(Error::BudgetExhausted(format!(
                    "domain exhausted after {} queries; {} more were requested",
                    iter,
                    self.cfg.n_queries - q
                )));
            }
            let k = self.cfg.candidates_per_iter.min(remaining);
            let candidates = subsample(self.domain.len(), k, &self.queried, &mut sub_rng)?;
            let t = Instant::now();
            let feats = self.features.fetch(self.domain, &candidates, self.cfg.embed_parallelism)?;
            self.record.timing.embed_ms += ms(t);
            let sel =
                select_from(&theta, &v, candidates.iter().copied().zip(feats.iter().map(|f| f.values())), self.cfg.nu)?;
            let pos = candidates.iter().position(|&c| c == sel.index).expect("selected index is a candidate");
            let feature = feats[pos].clone();
            if let Some(acc) = incremental.as_mut() {
                acc.add_gradient(&sel.scored.gradient)?;
            }

            // steps 3-6: evaluate and record
            let (score, instruction) = self.evaluate(iter, sel.index)?;
            let row = LogRow {
                iter,
                phase: Phase::Bandit,
                index: sel.index,
                score,
                pred_mean: Some(sel.scored.mean),
                sigma: Some(sel.scored.sigma),
                acq: Some(sel.scored.acq),
                train_loss_final: Some(outcome.final_loss()),
                wall_ms: ms(t_iter),
            };
            self.push(row, feature, instruction);
        }
        if self.cfg.n_queries > 0 {
            self.record.final_params = Some(theta);
        }
        Ok(())
    }
}

fn init_row(iter: usize, index: usize, score: f64, wall_ms: f64) -> LogRow {
    LogRow {
        iter,
        phase: Phase::Init,
        index,
        score,
        pred_mean: None,
        sigma: None,
        acq: None,
        train_loss_final: None,
        wall_ms,
    }
}

/// The phase-1 domain indices of a run, in ascending order. Evaluations and
/// history follow this order whatever the oracle parallelism.
pub fn initial_indices(domain_len: usize, cfg: &BanditConfig) -> Result<Vec<usize>> {
    let mut rng = seed::rng(RunSeeds::from_master(cfg.seed).init);
    let mut indices = subsample(domain_len, cfg.n_init, &HashSet::new(), &mut rng)?;
    indices.sort_unstable();
    Ok(indices)
}

/// Runs `n_init` random evaluations followed by `n_queries` NeuralUCB
/// iterations. Configuration problems are returned as errors; a failure
/// once the loop has started yields a record with `complete == false`.
pub fn run(
    run_id: &str,
    domain: &DiscreteDomain,
    features: Features<'_>,
    oracle: &dyn Oracle,
    cfg: &BanditConfig,
    train_cfg: &TrainConfig,
) -> Result<RunRecord> {
    cfg.validate()?;
    train_cfg.validate()?;
    if cfg.budget() > domain.len() {
        return Err(Error::BudgetExhausted(format!(
            "{} evaluations requested from a domain of {} points",
            cfg.budget(),
            domain.len()
        )));
    }
    if let Features::Cached(cache) = features {
        ensure(cache.len() == domain.len(), || {
            format!("feature cache has {} entries for a domain of {}", cache.len(), domain.len())
        })?;
    }
    let started = Instant::now();
    let mut lp = Loop {
        domain,
        features,
        oracle,
        cfg,
        train_cfg,
        record: RunRecord {
            run_id: run_id.to_string(),
            config: serde_json::json!({ "bandit": cfg, "train": train_cfg }),
            rows: Vec::with_capacity(cfg.budget()),
            best: None,
            oracle_calls: 0,
            complete: false,
            error: None,
            timing: Timing::default(),
            final_params: None,
        },
        history: Vec::with_capacity(cfg.budget()),
        queried: HashSet::new(),
    };
    let outcome = lp.init_phase().and_then(|_| lp.bandit_phase());
    let mut record = lp.record;
    record.timing.total_ms = ms(started);
    match outcome {
        Ok(()) => record.complete = true,
        Err(e) => {
            tracing::error!(run_id, error = %e, "run aborted");
            record.error = Some(e.to_string());
        }
    }
    Ok(record)
}
