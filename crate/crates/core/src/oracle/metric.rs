//! Text scoring metrics for instruction evaluation.
//!
//! All metrics compare normalized text: lowercased, trimmed, internal
//! whitespace collapsed to single spaces, and trailing periods removed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMetric {
    ExactMatch,
    F1Token,
    SetMatch,
    Contains,
}

impl std::str::FromStr for ScoreMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact_match" => Ok(ScoreMetric::ExactMatch),
            "f1_token" => Ok(ScoreMetric::F1Token),
            "set_match" => Ok(ScoreMetric::SetMatch),
            "contains" => Ok(ScoreMetric::Contains),
            other => Err(Error::Config(format!("unknown metric {other:?}"))),
        }
    }
}

pub fn normalize(text: &str) -> String {
    let lowered = text.to_lowercase();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed.trim_end_matches('.').trim_end().to_string()
}

fn f1_tokens(prediction: &str, target: &str) -> f64 {
    let pred = normalize(prediction);
    let gold = normalize(target);
    let pred: Vec<&str> = pred.split_whitespace().collect();
    let mut gold: Vec<&str> = gold.split_whitespace().collect();
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    let (np, ng) = (pred.len(), gold.len());
    let mut overlap = 0usize;
    for tok in pred {
        if let Some(pos) = gold.iter().position(|g| *g == tok) {
            gold.swap_remove(pos);
            overlap += 1;
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / np as f64;
    let recall = overlap as f64 / ng as f64;
    2.0 * precision * recall / (precision + recall)
}

fn items(text: &str) -> Vec<String> {
    let mut out: Vec<String> = text.split(',').map(normalize).filter(|s| !s.is_empty()).collect();
    out.sort();
    out
}

/// Scores one prediction against its target; always in `[0, 1]`.
pub fn score_text(metric: ScoreMetric, prediction: &str, target: &str) -> f64 {
    match metric {
        ScoreMetric::ExactMatch => f64::from(u8::from(normalize(prediction) == normalize(target))),
        ScoreMetric::F1Token => f1_tokens(prediction, target),
        ScoreMetric::SetMatch => f64::from(u8::from(items(prediction) == items(target))),
        ScoreMetric::Contains => f64::from(u8::from(normalize(prediction).contains(&normalize(target)))),
    }
}
