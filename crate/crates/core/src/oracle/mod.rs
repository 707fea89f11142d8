//! Objective evaluation: synthetic stand-ins and the remote LLM pipeline.

pub mod metric;
pub mod remote;
pub mod synthetic;

use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use metric::{normalize, score_text, ScoreMetric};
pub use remote::{
    evaluate_instruction, pipeline_eval, CompletionClient, ExemplarSet, GenerationClient, PipelineOracle,
    ValidationExample,
};
pub use synthetic::{Decoy, QuantizedSphere, SmoothKind, SmoothObjective};

use crate::domain::{DiscreteDomain, SoftPrompt};
use crate::error::{Error, Result};
use crate::featuremap::{Quantizer, RetryPolicy, API_TOKEN_ENV};
use crate::seed;

/// Identifies one oracle call; remote oracles derive idempotency keys from it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalContext {
    pub run_id: String,
    pub iteration: usize,
    pub domain_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub score: f64,
    pub instruction: Option<String>,
}

pub trait Oracle: Send + Sync {
    fn name(&self) -> String;
    fn evaluate(&self, ctx: &EvalContext, z: &SoftPrompt) -> Result<Evaluation>;
}

/// Offline objectives; pure functions of the soft prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticObjective {
    Quantized(QuantizedSphere),
    Smooth(SmoothObjective),
}

impl SyntheticObjective {
    pub fn score(&self, z: &SoftPrompt) -> Result<f64> {
        match self {
            SyntheticObjective::Quantized(q) => {
                if z.dim() < q.quantizer.coords() {
                    return Err(Error::InvariantViolation(format!(
                        "objective buckets {} coordinates, soft prompt has {}",
                        q.quantizer.coords(),
                        z.dim()
                    )));
                }
                Ok(q.score(z))
            }
            SyntheticObjective::Smooth(s) => s.score(z),
        }
    }
}

pub fn synthetic_eval(objective: &SyntheticObjective, z: &SoftPrompt) -> Result<f64> {
    objective.score(z)
}

impl Oracle for SyntheticObjective {
    fn name(&self) -> String {
        match self {
            SyntheticObjective::Quantized(_) => "quantized".into(),
            SyntheticObjective::Smooth(s) => match s.kind {
                SmoothKind::Ackley => "ackley".into(),
                SmoothKind::Levy => "levy".into(),
            },
        }
    }

    fn evaluate(&self, _: &EvalContext, z: &SoftPrompt) -> Result<Evaluation> {
        Ok(Evaluation { score: self.score(z)?, instruction: None })
    }
}

/// Objective selection as written in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveSpec {
    Quantized {
        #[serde(default = "default_coords")]
        coords: usize,
        #[serde(default = "default_buckets")]
        buckets: usize,
        #[serde(default = "default_width")]
        width: f64,
        /// Target bucket; drawn from a random domain point when absent.
        #[serde(default)]
        target: Option<Vec<usize>>,
        /// Draw the target only from buckets that no initial point occupies.
        #[serde(default)]
        deceptive: bool,
        #[serde(default)]
        decoy: Option<DecoySpec>,
    },
    Ackley {
        #[serde(default = "default_scale")]
        scale: f64,
        #[serde(default)]
        center: Center,
    },
    Levy {
        #[serde(default = "default_scale")]
        scale: f64,
        #[serde(default)]
        center: Center,
    },
    Remote {
        /// Falls back to `INSTINCT_GENERATE_URL`.
        #[serde(default)]
        generate_url: Option<String>,
        /// Falls back to `INSTINCT_COMPLETE_URL`.
        #[serde(default)]
        complete_url: Option<String>,
        /// Tab-separated validation set.
        dataset: PathBuf,
        /// Tab-separated exemplars; when absent the first `n_exemplars`
        /// dataset lines are used and removed from validation.
        #[serde(default)]
        exemplars: Option<PathBuf>,
        #[serde(default = "default_n_exemplars")]
        n_exemplars: usize,
        #[serde(default = "default_metric")]
        metric: ScoreMetric,
        #[serde(default)]
        retry: RetryPolicy,
    },
}

/// A secondary peak. Without a bucket it sits on the bucket of a seeded
/// initial point, so greedy search starts out next to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoySpec {
    #[serde(default)]
    pub bucket: Option<Vec<usize>>,
    pub height: f64,
    pub width: f64,
}

/// Where a smooth objective puts its optimum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Center {
    /// The all-zeros soft prompt.
    #[default]
    Origin,
    /// A domain point drawn from the objective seed, so the optimum is attainable.
    DomainPoint,
}

const MAX_TARGET_DRAWS: usize = 10_000;

fn default_coords() -> usize {
    8
}
fn default_buckets() -> usize {
    4
}
fn default_width() -> f64 {
    0.5
}
fn default_scale() -> f64 {
    1.0
}
fn default_n_exemplars() -> usize {
    remote::DEFAULT_EXEMPLARS
}
fn default_metric() -> ScoreMetric {
    ScoreMetric::ExactMatch
}

impl Default for ObjectiveSpec {
    fn default() -> Self {
        ObjectiveSpec::Quantized {
            coords: default_coords(),
            buckets: default_buckets(),
            width: default_width(),
            target: None,
            deceptive: false,
            decoy: None,
        }
    }
}

impl ObjectiveSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ObjectiveSpec::Quantized { .. } => "quantized",
            ObjectiveSpec::Ackley { .. } => "ackley",
            ObjectiveSpec::Levy { .. } => "levy",
            ObjectiveSpec::Remote { .. } => "remote",
        }
    }

    /// Default parameters for an oracle named on the command line. The remote
    /// oracle needs a dataset and therefore a config file.
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "quantized" => ObjectiveSpec::default(),
            "ackley" => ObjectiveSpec::Ackley { scale: default_scale(), center: Center::Origin },
            "levy" => ObjectiveSpec::Levy { scale: default_scale(), center: Center::Origin },
            "remote" => return Err(Error::Config("the remote oracle must be configured in the config file".into())),
            other => return Err(Error::Config(format!("unknown oracle {other:?}"))),
        })
    }

    /// Resolves random parts (targets, centers) from `seed` and the domain.
    pub fn synthetic(&self, domain: &DiscreteDomain, seed: u64) -> Result<Option<SyntheticObjective>> {
        self.synthetic_for(domain, seed, &[])
    }

    /// As [`Self::synthetic`]; `init` lists the run's initial domain indices,
    /// which a deceptive target avoids.
    pub fn synthetic_for(
        &self,
        domain: &DiscreteDomain,
        seed: u64,
        init: &[usize],
    ) -> Result<Option<SyntheticObjective>> {
        let mut rng = seed::rng(seed);
        let anchor = |rng: &mut rand_chacha::ChaCha8Rng| -> Result<SoftPrompt> {
            domain.point(rng.random_range(0..domain.len()))
        };
        Ok(Some(match self {
            ObjectiveSpec::Quantized { coords, buckets, width, target, deceptive, decoy } => {
                let quantizer = Quantizer::from_domain_quantiles(domain, *coords, *buckets)?;
                let target = match (target, deceptive) {
                    (Some(_), true) => {
                        return Err(Error::Config("a deceptive objective cannot also fix its target".into()))
                    }
                    (Some(t), false) => t.clone(),
                    (None, false) => quantizer.bucket(anchor(&mut rng)?.values()),
                    (None, true) => {
                        let taken = init
                            .iter()
                            .map(|&i| Ok(quantizer.bucket(domain.point(i)?.values())))
                            .collect::<Result<std::collections::HashSet<_>>>()?;
                        let mut found = None;
                        for _ in 0..MAX_TARGET_DRAWS {
                            let b = quantizer.bucket(anchor(&mut rng)?.values());
                            if !taken.contains(&b) {
                                found = Some(b);
                                break;
                            }
                        }
                        found.ok_or_else(|| {
                            Error::InsufficientData("no domain bucket lies outside the initial points' buckets".into())
                        })?
                    }
                };
                let sphere = QuantizedSphere::new(quantizer, target, *width)?;
                let sphere = match decoy {
                    Some(d) => {
                        let bucket = match &d.bucket {
                            Some(b) => b.clone(),
                            None if init.is_empty() => {
                                return Err(Error::Config("a decoy without a bucket needs initial points".into()))
                            }
                            None => {
                                sphere.quantizer.bucket(domain.point(init[rng.random_range(0..init.len())])?.values())
                            }
                        };
                        sphere.with_decoy(Decoy { bucket, height: d.height, width: d.width })?
                    }
                    None => sphere,
                };
                SyntheticObjective::Quantized(sphere)
            }
            ObjectiveSpec::Ackley { scale, center } | ObjectiveSpec::Levy { scale, center } => {
                let kind =
                    if matches!(self, ObjectiveSpec::Ackley { .. }) { SmoothKind::Ackley } else { SmoothKind::Levy };
                let c = match center {
                    Center::Origin => vec![0.0; domain.soft_prompt_dim()],
                    Center::DomainPoint => anchor(&mut rng)?.0,
                };
                SyntheticObjective::Smooth(SmoothObjective::new(kind, c, *scale)?)
            }
            ObjectiveSpec::Remote { .. } => return Ok(None),
        }))
    }

    pub fn build(&self, domain: &DiscreteDomain, seed: u64) -> Result<Box<dyn Oracle>> {
        self.build_for(domain, seed, &[])
    }

    pub fn build_for(&self, domain: &DiscreteDomain, seed: u64, init: &[usize]) -> Result<Box<dyn Oracle>> {
        if let Some(obj) = self.synthetic_for(domain, seed, init)? {
            return Ok(Box::new(obj));
        }
        let ObjectiveSpec::Remote { generate_url, complete_url, dataset, exemplars, n_exemplars, metric, retry } = self
        else {
            unreachable!("synthetic objectives handled above")
        };
        let url = |given: &Option<String>, env: &str| -> Result<String> {
            given
                .clone()
                .or_else(|| std::env::var(env).ok())
                .ok_or_else(|| Error::Config(format!("remote oracle needs a url or ${env}")))
        };
        let token = std::env::var(API_TOKEN_ENV).ok();
        let mut validation = remote::read_dataset(dataset)?;
        let exemplars = match exemplars {
            Some(path) => ExemplarSet::from_examples(&remote::read_dataset(path)?)?,
            None => {
                if validation.len() <= *n_exemplars {
                    return Err(Error::InsufficientData(format!(
                        "dataset has {} examples; {} exemplars plus at least one validation example are needed",
                        validation.len(),
                        n_exemplars
                    )));
                }
                let rest = validation.split_off(*n_exemplars);
                ExemplarSet::from_examples(&std::mem::replace(&mut validation, rest))?
            }
        };
        Ok(Box::new(PipelineOracle {
            generator: Box::new(remote::HttpGenerationClient::new(
                &url(generate_url, remote::GENERATE_URL_ENV)?,
                token.clone(),
                retry.clone(),
            )?),
            scorer: Box::new(remote::HttpCompletionClient::new(
                &url(complete_url, remote::COMPLETE_URL_ENV)?,
                token,
                retry.clone(),
            )?),
            exemplars,
            dataset: validation,
            metric: *metric,
        }))
    }
}
