//! Text-generation endpoint contract, its HTTP client, and deterministic
//! mock generators.

use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::split_sentences;
use crate::http::{EndpointConfig, HttpError, JsonClient};
use crate::tokenize::{TokenCounter, WhitespacePunctCounter};

pub const DEFAULT_MAX_NEW_TOKENS: usize = 256;
pub const DEFAULT_GEN_INFLIGHT: usize = 2;
pub const UNKNOWN_ANSWER: &str = "I do not know.";

#[derive(Debug, Error)]
pub enum GenError {
    #[error(transparent)]
    Http(#[from] HttpError),
    #[error("invalid generation request: {0}")]
    InvalidRequest(String),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_new_tokens: usize,
    pub temperature: f64,
    #[serde(rename = "stop")]
    pub stop_sequences: Vec<String>,
}

impl GenerationRequest {
    /// Greedy decoding with the default answer length.
    pub fn greedy(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            temperature: 0.0,
            stop_sequences: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        if self.max_new_tokens == 0 {
            return Err(GenError::InvalidRequest("max_new_tokens must be >= 1".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GenError::InvalidRequest("temperature must be >= 0".into()));
        }
        Ok(())
    }
}

/// Any text-generation endpoint: base model, fine-tuned model, or mock.
/// At temperature 0 the same request must yield the same text.
pub trait GenerationClient: Send + Sync {
    fn name(&self) -> &str;
    fn generate(&self, req: &GenerationRequest) -> Result<String, GenError>;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct GenerationStats {
    pub calls: u64,
    pub failures: u64,
    pub total_latency_ms: f64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Client for `POST /generate`.
#[derive(Debug)]
pub struct RemoteGenerator {
    client: JsonClient,
    name: String,
    stats: Mutex<GenerationStats>,
}

#[derive(Deserialize)]
struct GenerateResponse {
    text: String,
}

impl RemoteGenerator {
    pub fn new(endpoint: EndpointConfig) -> Result<Self, GenError> {
        let name = endpoint.url.clone();
        Ok(Self {
            client: JsonClient::new(endpoint)?,
            name,
            stats: Mutex::new(GenerationStats::default()),
        })
    }

    /// Latency and token counts (baseline counter) accumulated so far.
    pub fn stats(&self) -> GenerationStats {
        *self.stats.lock().unwrap_or_else(|p| p.into_inner())
    }
}

impl GenerationClient for RemoteGenerator {
    fn name(&self) -> &str {
        &self.name
    }

    fn generate(&self, req: &GenerationRequest) -> Result<String, GenError> {
        req.validate()?;
        let started = Instant::now();
        let result = self.client.post_json::<_, GenerateResponse>("/generate", req);
        let elapsed = started.elapsed().as_secs_f64() * 1000.0;
        let mut stats = self.stats.lock().unwrap_or_else(|p| p.into_inner());
        stats.calls += 1;
        stats.total_latency_ms += elapsed;
        stats.prompt_tokens += WhitespacePunctCounter.count(&req.prompt) as u64;
        match result {
            Ok(resp) => {
                stats.completion_tokens += WhitespacePunctCounter.count(&resp.text) as u64;
                Ok(resp.text)
            }
            Err(e) => {
                stats.failures += 1;
                Err(e.into())
            }
        }
    }
}

/// Text between a `Context:` line and the following blank line, if any.
pub fn context_block(prompt: &str) -> Option<&str> {
    let start = if prompt.starts_with("Context:\n") {
        "Context:\n".len()
    } else {
        prompt.find("\nContext:\n")? + "\nContext:\n".len()
    };
    let rest = &prompt[start..];
    let end = rest.find("\n\n").unwrap_or(rest.len());
    let block = rest[..end].trim();
    (!block.is_empty()).then_some(block)
}

/// Answers with the first sentence of the prompt's context block, or
/// [`UNKNOWN_ANSWER`] when there is none.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExtractiveGenerator;

impl GenerationClient for ExtractiveGenerator {
    fn name(&self) -> &str {
        "mock:extractive"
    }

    fn generate(&self, req: &GenerationRequest) -> Result<String, GenError> {
        req.validate()?;
        Ok(context_block(&req.prompt)
            .and_then(|ctx| split_sentences(ctx).into_iter().next())
            .unwrap_or_else(|| UNKNOWN_ANSWER.to_owned()))
    }
}

/// Returns the prompt verbatim.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoGenerator;

impl GenerationClient for EchoGenerator {
    fn name(&self) -> &str {
        "mock:echo"
    }

    fn generate(&self, req: &GenerationRequest) -> Result<String, GenError> {
        req.validate()?;
        Ok(req.prompt.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::par::map_bounded;

    #[test]
    fn extractive_rules() {
        let g = ExtractiveGenerator;
        let with = GenerationRequest::greedy("Context:\nS1. S2.\n\nQuestion: q?\nAnswer:");
        assert_eq!(g.generate(&with).unwrap(), "S1.");
        let without = GenerationRequest::greedy("Question: q?\nAnswer:");
        assert_eq!(g.generate(&without).unwrap(), UNKNOWN_ANSWER);
        let preamble = GenerationRequest::greedy("Be brief.\n\nContext:\nFirst one here.\nSecond.\n\nQuestion: q\nAnswer:");
        assert_eq!(g.generate(&preamble).unwrap(), "First one here.");
        assert_eq!(g.generate(&with).unwrap(), g.generate(&with).unwrap());
    }

    #[test]
    fn request_validation() {
        let mut req = GenerationRequest::greedy("p");
        req.max_new_tokens = 0;
        assert!(matches!(EchoGenerator.generate(&req), Err(GenError::InvalidRequest(_))));
        req.max_new_tokens = 1;
        req.temperature = -1.0;
        assert!(EchoGenerator.generate(&req).is_err());
    }

    #[test]
    fn concurrent_identical_requests_agree() {
        let req = GenerationRequest::greedy("Context:\nAlpha beta. Gamma.\n\nQuestion: x\nAnswer:");
        let reqs = vec![req; 64];
        let out = map_bounded(&reqs, 8, |r| ExtractiveGenerator.generate(r).unwrap());
        assert!(out.iter().all(|o| o == "Alpha beta."));
    }

    #[test]
    fn wire_format_uses_stop_key() {
        let json = serde_json::to_value(GenerationRequest::greedy("p")).unwrap();
        assert_eq!(json, serde_json::json!({"prompt": "p", "max_new_tokens": 256, "temperature": 0.0, "stop": []}));
    }
}
