//! Instruction pipeline against remote generation and completion endpoints.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metric::{score_text, ScoreMetric};
use super::{EvalContext, Evaluation, Oracle};
use crate::domain::SoftPrompt;
use crate::error::{Error, Result};
use crate::featuremap::{auth_headers, http_client, post_json, RetryPolicy};

pub const GENERATE_URL_ENV: &str = "INSTINCT_GENERATE_URL";
pub const COMPLETE_URL_ENV: &str = "INSTINCT_COMPLETE_URL";
pub const TEMPLATE_ID: &str = "v1";
pub const DEFAULT_EXEMPLARS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationExample {
    pub input: String,
    pub target: String,
}

impl ValidationExample {
    pub fn new(input: impl Into<String>, target: impl Into<String>) -> Result<Self> {
        let input = input.into();
        if input.trim().is_empty() {
            return Err(Error::Config("validation example has an empty input".into()));
        }
        Ok(ValidationExample { input, target: target.into() })
    }
}

/// Parses `input<TAB>target` lines. Blank lines are skipped.
pub fn parse_dataset(text: &str) -> Result<Vec<ValidationExample>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (input, target) = line
            .split_once('\t')
            .ok_or_else(|| Error::Format(format!("dataset line {} has no tab separator", n + 1)))?;
        out.push(ValidationExample::new(input, target)?);
    }
    Ok(out)
}

pub fn read_dataset(path: &Path) -> Result<Vec<ValidationExample>> {
    parse_dataset(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub input: String,
    pub output: String,
}

/// The demonstrations `E` shown to the generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExemplarSet(Vec<Exemplar>);

impl ExemplarSet {
    pub fn new(pairs: Vec<Exemplar>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Config("an exemplar set needs at least one pair".into()));
        }
        Ok(ExemplarSet(pairs))
    }

    pub fn from_examples(examples: &[ValidationExample]) -> Result<Self> {
        Self::new(examples.iter().map(|e| Exemplar { input: e.input.clone(), output: e.target.clone() }).collect())
    }

    pub fn pairs(&self) -> &[Exemplar] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Text part of the generation prompt; the soft prompt is prepended to its
/// embeddings on the generator side.
pub fn render_generation_prompt(exemplars: &ExemplarSet) -> String {
    let mut s = String::new();
    for e in exemplars.pairs() {
        s.push_str(&format!("Input: {}\nOutput: {}\n\n", e.input, e.output));
    }
    s.push_str("The instruction was to");
    s
}

pub fn render_evaluation_prompt(instruction: &str, input: &str) -> String {
    format!("Instruction: {instruction}\n\nInput: {input}\n\nOutput:")
}

/// Black-box LLM answering a fully rendered prompt.
pub trait CompletionClient: Send + Sync {
    fn complete(&self, prompt: &str, idempotency_key: &str) -> Result<String>;
}

/// White-box LLM turning a soft prompt and exemplars into an instruction.
pub trait GenerationClient: Send + Sync {
    fn generate(&self, z: &SoftPrompt, exemplars: &ExemplarSet, idempotency_key: &str) -> Result<String>;
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    soft_prompt: &'a [f64],
    exemplars: &'a [Exemplar],
    template_id: &'a str,
}

#[derive(Deserialize)]
struct GenerateResponse {
    instruction: String,
}

#[derive(Serialize)]
struct CompleteRequest<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct CompleteResponse {
    text: String,
}

fn headers(token: Option<&str>, key: &str) -> Vec<(&'static str, String)> {
    let mut h = auth_headers(token);
    h.push(("idempotency-key", key.to_string()));
    h
}

pub struct HttpGenerationClient {
    url: String,
    token: Option<String>,
    policy: RetryPolicy,
    client: reqwest::blocking::Client,
}

impl HttpGenerationClient {
    pub fn new(base_url: &str, token: Option<String>, policy: RetryPolicy) -> Result<Self> {
        Ok(HttpGenerationClient {
            url: format!("{}/generate", base_url.trim_end_matches('/')),
            token,
            client: http_client(&policy)?,
            policy,
        })
    }
}

impl GenerationClient for HttpGenerationClient {
    fn generate(&self, z: &SoftPrompt, exemplars: &ExemplarSet, key: &str) -> Result<String> {
        let body = GenerateRequest { soft_prompt: z.values(), exemplars: exemplars.pairs(), template_id: TEMPLATE_ID };
        let resp: GenerateResponse =
            post_json(&self.client, &self.url, &body, &headers(self.token.as_deref(), key), &self.policy)?;
        Ok(resp.instruction)
    }
}

pub struct HttpCompletionClient {
    url: String,
    token: Option<String>,
    policy: RetryPolicy,
    client: reqwest::blocking::Client,
}

impl HttpCompletionClient {
    pub fn new(base_url: &str, token: Option<String>, policy: RetryPolicy) -> Result<Self> {
        Ok(HttpCompletionClient {
            url: format!("{}/complete", base_url.trim_end_matches('/')),
            token,
            client: http_client(&policy)?,
            policy,
        })
    }
}

impl CompletionClient for HttpCompletionClient {
    fn complete(&self, prompt: &str, key: &str) -> Result<String> {
        let resp: CompleteResponse = post_json(
            &self.client,
            &self.url,
            &CompleteRequest { prompt },
            &headers(self.token.as_deref(), key),
            &self.policy,
        )?;
        Ok(resp.text)
    }
}

/// Mean validation score of one instruction. Examples are scored in index
/// order so the mean is bit-stable.
pub fn evaluate_instruction(
    client: &dyn CompletionClient,
    instruction: &str,
    dataset: &[ValidationExample],
    metric: ScoreMetric,
    key_prefix: &str,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::InsufficientData("validation set is empty".into()));
    }
    let mut total = 0.0;
    for (i, ex) in dataset.iter().enumerate() {
        let prompt = render_evaluation_prompt(instruction, &ex.input);
        let pred = client.complete(&prompt, &format!("{key_prefix}:{i}"))?;
        total += score_text(metric, &pred, &ex.target);
    }
    Ok(total / dataset.len() as f64)
}

/// Generates an instruction from `z` and scores it on the validation set.
pub fn pipeline_eval(
    generator: &dyn GenerationClient,
    scorer: &dyn CompletionClient,
    z: &SoftPrompt,
    exemplars: &ExemplarSet,
    dataset: &[ValidationExample],
    metric: ScoreMetric,
    key_prefix: &str,
) -> Result<(String, f64)> {
    let instruction = generator.generate(z, exemplars, &format!("{key_prefix}:gen"))?;
    let score = evaluate_instruction(scorer, instruction.trim(), dataset, metric, key_prefix)?;
    tracing::info!(%instruction, score, "pipeline evaluation");
    Ok((instruction, score))
}

pub struct PipelineOracle {
    pub generator: Box<dyn GenerationClient>,
    pub scorer: Box<dyn CompletionClient>,
    pub exemplars: ExemplarSet,
    pub dataset: Vec<ValidationExample>,
    pub metric: ScoreMetric,
}

impl Oracle for PipelineOracle {
    fn name(&self) -> String {
        "remote".into()
    }

    fn evaluate(&self, ctx: &EvalContext, z: &SoftPrompt) -> Result<Evaluation> {
        let key = format!("{}:{}", ctx.run_id, ctx.iteration);
        let (instruction, score) = pipeline_eval(
            self.generator.as_ref(),
            self.scorer.as_ref(),
            z,
            &self.exemplars,
            &self.dataset,
            self.metric,
            &key,
        )?;
        Ok(Evaluation { score, instruction: Some(instruction) })
    }
}
