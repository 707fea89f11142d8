//! Deterministic stand-in for the embedding, generation and completion
//! endpoints, for demos and tests without a real model.
//!
//! The generator maps the signs of the first two soft-prompt coordinates to one
//! of four instructions. The completer understands those four instructions and
//! answers anything else with an empty string.

use serde::{Deserialize, Serialize};

use instinct_core::oracle::remote::render_evaluation_prompt;

pub const MODEL_ID: &str = "mock-llm";

pub const INSTRUCTIONS: [&str; 4] = [
    "Repeat the input.",
    "Reverse the words of the input.",
    "Write the input in upper case.",
    "Output the first word.",
];

#[derive(Debug, Clone)]
pub struct MockLlm {
    /// Length of embeddings returned by `/embed`; the soft prompt is truncated
    /// or zero-padded to it.
    pub feature_dim: usize,
}

impl Default for MockLlm {
    fn default() -> Self {
        MockLlm { feature_dim: instinct_core::featuremap::DEFAULT_FEATURE_DIM }
    }
}

#[derive(Debug, Deserialize)]
pub struct EmbedCall {
    pub soft_prompt: Vec<f64>,
    #[serde(default)]
    pub n_tokens: usize,
}

#[derive(Debug, Serialize)]
pub struct EmbedReply {
    pub features: Vec<f64>,
    pub model_id: String,
}

#[derive(Debug, Deserialize)]
pub struct GenerateCall {
    pub soft_prompt: Vec<f64>,
    #[serde(default)]
    pub exemplars: Vec<serde_json::Value>,
    #[serde(default)]
    pub template_id: String,
}

#[derive(Debug, Serialize)]
pub struct GenerateReply {
    pub instruction: String,
}

#[derive(Debug, Deserialize)]
pub struct CompleteCall {
    pub prompt: String,
}

#[derive(Debug, Serialize)]
pub struct CompleteReply {
    pub text: String,
}

pub fn instruction_for(z: &[f64]) -> &'static str {
    let bit = |i: usize| usize::from(z.get(i).is_some_and(|v| *v > 0.0));
    INSTRUCTIONS[bit(0) * 2 + bit(1)]
}

/// What a model following `instruction` would answer for `input`.
pub fn answer(instruction: &str, input: &str) -> String {
    match INSTRUCTIONS.iter().position(|i| *i == instruction) {
        Some(0) => input.to_string(),
        Some(1) => input.split_whitespace().rev().collect::<Vec<_>>().join(" "),
        Some(2) => input.to_uppercase(),
        Some(3) => input.split_whitespace().next().unwrap_or("").to_string(),
        _ => String::new(),
    }
}

/// Inverts the evaluation template; `None` for prompts it did not produce.
fn parse_prompt(prompt: &str) -> Option<(&str, &str)> {
    let rest = prompt.strip_prefix("Instruction: ")?;
    let (instruction, rest) = rest.split_once("\n\nInput: ")?;
    let input = rest.strip_suffix("\n\nOutput:")?;
    debug_assert_eq!(render_evaluation_prompt(instruction, input), prompt);
    Some((instruction, input))
}

impl MockLlm {
    pub fn embed(&self, call: EmbedCall) -> EmbedReply {
        let mut features = call.soft_prompt;
        features.resize(self.feature_dim, 0.0);
        EmbedReply { features, model_id: MODEL_ID.into() }
    }

    pub fn generate(&self, call: GenerateCall) -> GenerateReply {
        GenerateReply { instruction: instruction_for(&call.soft_prompt).into() }
    }

    pub fn complete(&self, call: CompleteCall) -> CompleteReply {
        let text = match parse_prompt(&call.prompt) {
            Some((instruction, input)) => answer(instruction, input),
            None => String::new(),
        };
        CompleteReply { text }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn completes_rendered_prompts() {
        let llm = MockLlm::default();
        let ask = |ins: &str, x: &str| llm.complete(CompleteCall { prompt: render_evaluation_prompt(ins, x) }).text;
        assert_eq!(ask(INSTRUCTIONS[0], "a b c"), "a b c");
        assert_eq!(ask(INSTRUCTIONS[1], "a b c"), "c b a");
        assert_eq!(ask(INSTRUCTIONS[2], "a b"), "A B");
        assert_eq!(ask(INSTRUCTIONS[3], "a b"), "a");
        assert_eq!(ask("Something else.", "a b"), "");
        assert_eq!(llm.complete(CompleteCall { prompt: "free text".into() }).text, "");
    }

    #[test]
    fn instruction_follows_signs() {
        assert_eq!(instruction_for(&[-1.0, -1.0]), INSTRUCTIONS[0]);
        assert_eq!(instruction_for(&[-1.0, 1.0]), INSTRUCTIONS[1]);
        assert_eq!(instruction_for(&[1.0, -1.0]), INSTRUCTIONS[2]);
        assert_eq!(instruction_for(&[1.0, 1.0]), INSTRUCTIONS[3]);
        assert_eq!(instruction_for(&[]), INSTRUCTIONS[0]);
    }

    #[test]
    fn embed_resizes() {
        let llm = MockLlm { feature_dim: 3 };
        assert_eq!(llm.embed(EmbedCall { soft_prompt: vec![1.0], n_tokens: 1 }).features, vec![1.0, 0.0, 0.0]);
        assert_eq!(llm.embed(EmbedCall { soft_prompt: vec![1.0; 5], n_tokens: 1 }).features, vec![1.0; 3]);
    }
}
