//! Post-hoc analysis: best-so-far curves, performance profiles, average ranks.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_input, Error, Result};

/// Prefix maximum of a score sequence.
pub fn best_so_far(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::InsufficientData("best-so-far needs at least one score".into()));
    }
    let mut best = f64::NEG_INFINITY;
    Ok(scores
        .iter()
        .map(|&s| {
            best = best.max(s);
            best
        })
        .collect())
}

/// Final scores, tasks × methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub tasks: Vec<String>,
    pub methods: Vec<String>,
    /// `scores[task][method]`.
    pub scores: Vec<Vec<f64>>,
}

impl ScoreMatrix {
    pub fn new(tasks: Vec<String>, methods: Vec<String>, scores: Vec<Vec<f64>>) -> Result<Self> {
        let m = ScoreMatrix { tasks, methods, scores };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_input(!self.methods.is_empty() && !self.tasks.is_empty(), || "score matrix is empty".into())?;
        ensure_input(self.scores.len() == self.tasks.len(), || {
            format!("{} task names for {} score rows", self.tasks.len(), self.scores.len())
        })?;
        for (t, row) in self.tasks.iter().zip(&self.scores) {
            ensure_input(row.len() == self.methods.len(), || {
                format!("task {t:?} has {} scores for {} methods", row.len(), self.methods.len())
            })?;
            ensure_input(row.iter().all(|s| (0.0..=1.0).contains(s)), || {
                format!("task {t:?} has a score outside [0, 1]")
            })?;
        }
        Ok(())
    }

    /// CSV with a header of method names and the task name in the first column.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let header = rdr.headers()?.clone();
        ensure_input(header.len() >= 2, || "score matrix CSV needs a task column and at least one method".into())?;
        let methods = header.iter().skip(1).map(str::to_string).collect();
        let mut tasks = Vec::new();
        let mut scores = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            tasks.push(rec.get(0).unwrap_or_default().to_string());
            let row = rec
                .iter()
                .skip(1)
                .map(|v| v.parse::<f64>().map_err(|e| Error::Format(format!("bad score {v:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            scores.push(row);
        }
        Self::new(tasks, methods, scores)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["task".to_string()];
        header.extend(self.methods.iter().cloned());
        wtr.write_record(&header)?;
        for (t, row) in self.tasks.iter().zip(&self.scores) {
            let mut rec = vec![t.clone()];
            rec.extend(row.iter().map(|s| s.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    fn best(&self, task: usize) -> f64 {
        self.scores[task].iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileCurve {
    pub method: String,
    pub taus: Vec<f64>,
    pub rho: Vec<f64>,
}

/// `ρ_m(τ)`: share of tasks on which method `m` is within `τ` of the best.
pub fn performance_profile(matrix: &ScoreMatrix, taus: &[f64]) -> Result<Vec<ProfileCurve>> {
    matrix.validate()?;
    let n = matrix.tasks.len() as f64;
    let bests: Vec<f64> = (0..matrix.tasks.len()).map(|t| matrix.best(t)).collect();
    Ok(matrix
        .methods
        .iter()
        .enumerate()
        .map(|(m, name)| {
            let rho = taus
                .iter()
                .map(|&tau| {
                    let hits = bests.iter().zip(&matrix.scores).filter(|(b, row)| *b - row[m] <= tau).count();
                    hits as f64 / n
                })
                .collect();
            ProfileCurve { method: name.clone(), taus: taus.to_vec(), rho }
        })
        .collect())
}

/// `n` evenly spaced thresholds covering `[0, max]`.
pub fn tau_grid(max: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![0.0];
    }
    (0..n).map(|i| max * i as f64 / (n - 1) as f64).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieMethod {
    /// Tied methods all take the best rank of their block (1, 2, 2, 4).
    #[default]
    Min,
    /// Tied methods share the mean of their positions (1, 2.5, 2.5, 4).
    Mean,
}

impl std::str::FromStr for TieMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min" => Ok(TieMethod::Min),
            "mean" => Ok(TieMethod::Mean),
            other => Err(Error::Config(format!("unknown tie method {other:?}; expected min or mean"))),
        }
    }
}

/// Ranks by descending score within one task.
pub fn rank_row(row: &[f64], ties: TieMethod) -> Vec<f64> {
    row.iter()
        .map(|&s| {
            let above = row.iter().filter(|&&o| o > s).count();
            let tied = row.iter().filter(|&&o| o == s).count();
            match ties {
                TieMethod::Min => (above + 1) as f64,
                TieMethod::Mean => above as f64 + (tied as f64 + 1.0) / 2.0,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRank {
    pub method: String,
    pub average_rank: f64,
}

pub fn average_rank(matrix: &ScoreMatrix, ties: TieMethod) -> Result<Vec<MethodRank>> {
    matrix.validate()?;
    let mut sums = vec![0.0; matrix.methods.len()];
    for row in &matrix.scores {
        for (s, r) in sums.iter_mut().zip(rank_row(row, ties)) {
            *s += r;
        }
    }
    let n = matrix.tasks.len() as f64;
    Ok(matrix.methods.iter().zip(sums).map(|(m, s)| MethodRank { method: m.clone(), average_rank: s / n }).collect())
}

/// `iter,score,best_so_far`, one row per log entry.
pub fn write_best_so_far_csv<W: Write>(scores: &[f64], w: W) -> Result<()> {
    let best = best_so_far(scores)?;
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["iter", "score", "best_so_far"])?;
    for (i, (s, b)) in scores.iter().zip(&best).enumerate() {
        wtr.write_record([i.to_string(), s.to_string(), b.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// `method,tau,rho`, methods in matrix order, taus ascending.
pub fn write_profile_csv<W: Write>(curves: &[ProfileCurve], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["method", "tau", "rho"])?;
    for c in curves {
        for (t, r) in c.taus.iter().zip(&c.rho) {
            wtr.write_record([c.method.clone(), t.to_string(), r.to_string()])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_rank_csv<W: Write>(ranks: &[MethodRank], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["method", "average_rank"])?;
    for r in ranks {
        wtr.write_record([r.method.clone(), r.average_rank.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}
