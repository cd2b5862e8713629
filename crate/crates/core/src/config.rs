//! Flat `key = value` settings with a registry of known keys, plus
//! factories turning endpoint strings into clients.
//!
//! Precedence is explicit overrides, then the config file, then defaults.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::embed::{EmbedError, Embedder, HashingEmbedder, RemoteEmbedConfig, RemoteEmbedder};
use crate::generate::{EchoGenerator, ExtractiveGenerator, GenError, GenerationClient, RemoteGenerator};
use crate::http::{EndpointConfig, HttpError};
use crate::qagen::{QuestionGenClient, RemoteQuestionGenerator, WindowQuestionGenerator};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key `{key}`{}", line.map(|l| format!(" on line {l}")).unwrap_or_default())]
    UnknownKey { key: String, line: Option<usize> },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeySpec {
    pub key: &'static str,
    pub owner: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

const fn key(key: &'static str, owner: &'static str, default: &'static str, help: &'static str) -> KeySpec {
    KeySpec {
        key,
        owner,
        default,
        help,
    }
}

/// Every recognised key. An empty default means unset.
pub const REGISTRY: &[KeySpec] = &[
    key("corpus.paragraph_budget", "corpus", "256", "token budget per paragraph"),
    key("corpus.min_sentence_words", "corpus", "10", "shortest sentence kept for indexing"),
    key("corpus.max_sentence_words", "corpus", "30", "longest sentence kept for indexing"),
    key("qagen.endpoint", "qagen", "mock:0", "question generator: URL or mock[:seed]"),
    key("qagen.k", "qagen", "5", "questions requested per paragraph"),
    key("qagen.max_inflight", "qagen", "4", "concurrent question requests"),
    key("qagen.validation_ratio", "qagen", "0.2", "share of pairs held out for validation"),
    key("qagen.seed", "qagen", "0", "seed for the train/validation split"),
    key("qagen.timeout_ms", "qagen", "30000", "per-request timeout"),
    key("qagen.retries", "qagen", "2", "retries after a failed request"),
    key("embed.endpoint", "embed", "local:64", "embedder: URL or local[:dim]"),
    key("embed.batch_size", "embed", "64", "texts per embedding request"),
    key("embed.max_inflight", "embed", "4", "concurrent embedding requests"),
    key("embed.timeout_ms", "embed", "30000", "per-request timeout"),
    key("embed.retries", "embed", "2", "retries after a failed request"),
    key("retrieve.threshold", "retrieve", "0.5", "similarity threshold for `ask`"),
    key("retrieve.model_max_input", "retrieve", "4096", "model input limit in tokens"),
    key("retrieve.answer_reserve", "retrieve", "256", "tokens reserved for the answer"),
    key("retrieve.template", "retrieve", "", "prompt template file"),
    key("gen.endpoint", "generate", "mock:extractive", "generator: URL, mock:extractive or mock:echo"),
    key("gen.finetuned_endpoint", "generate", "", "optional second generator evaluated without retrieval"),
    key("gen.max_inflight", "generate", "2", "concurrent generation requests"),
    key("gen.timeout_ms", "generate", "60000", "per-request timeout"),
    key("gen.retries", "generate", "2", "retries after a failed request"),
    key("testgen.eps", "testgen", "", "clustering radius; estimated when unset"),
    key("testgen.min_pts", "testgen", "6", "points within the radius that make a core point"),
    key("testgen.max_clusters", "testgen", "15", "clusters kept after merging"),
    key("experiment.thresholds", "experiment", "0.0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0", "swept thresholds"),
    key("experiment.failure_budget", "experiment", "0.2", "share of failed questions that aborts an arm"),
    key("experiment.testset", "experiment", "", "test set file"),
    key("experiment.index_sentences", "experiment", "", "sentence index file"),
    key("experiment.index_questions", "experiment", "", "question index file"),
    key("experiment.output_dir", "experiment", "report", "report directory"),
    key("experiment.svg", "experiment", "true", "also render radar.svg"),
];

pub fn key_spec(key: &str) -> Option<&'static KeySpec> {
    REGISTRY.iter().find(|k| k.key == key)
}

/// Resolved settings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            values: REGISTRY
                .iter()
                .map(|k| (k.key.to_owned(), k.default.to_owned()))
                .collect(),
        }
    }
}

/// Parses `key = value` lines; `#` starts a comment line.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
        let k = k.trim();
        if key_spec(k).is_none() {
            return Err(ConfigError::UnknownKey {
                key: k.to_owned(),
                line: Some(i + 1),
            });
        }
        out.push((k.to_owned(), v.trim().to_owned()));
    }
    Ok(out)
}

impl Settings {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let mut s = Self::default();
        for (k, v) in parse_config(&std::fs::read_to_string(path)?)? {
            s.values.insert(k, v);
        }
        Ok(s)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), ConfigError> {
        if key_spec(key).is_none() {
            return Err(ConfigError::UnknownKey {
                key: key.to_owned(),
                line: None,
            });
        }
        self.values.insert(key.to_owned(), value.into());
        Ok(())
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map_or("", String::as_str)
    }

    /// `None` for an unset (empty) key.
    pub fn optional(&self, key: &str) -> Option<&str> {
        Some(self.raw(key)).filter(|v| !v.is_empty())
    }

    pub fn get<V: FromStr>(&self, key: &str) -> Result<V, ConfigError>
    where
        V::Err: std::fmt::Display,
    {
        let raw = self.raw(key);
        raw.parse().map_err(|e: V::Err| ConfigError::InvalidValue {
            key: key.to_owned(),
            value: raw.to_owned(),
            reason: e.to_string(),
        })
    }

    pub fn get_optional<V: FromStr>(&self, key: &str) -> Result<Option<V>, ConfigError>
    where
        V::Err: std::fmt::Display,
    {
        match self.optional(key) {
            None => Ok(None),
            Some(_) => self.get(key).map(Some),
        }
    }

    pub fn get_list(&self, key: &str) -> Result<Vec<f64>, ConfigError> {
        self.raw(key)
            .split(',')
            .map(|part| {
                part.trim().parse().map_err(|e: std::num::ParseFloatError| ConfigError::InvalidValue {
                    key: key.to_owned(),
                    value: self.raw(key).to_owned(),
                    reason: e.to_string(),
                })
            })
            .collect()
    }

    pub fn endpoint(&self, key: &str) -> Result<Endpoint, ConfigError> {
        self.raw(key).parse().map_err(|reason| ConfigError::InvalidValue {
            key: key.to_owned(),
            value: self.raw(key).to_owned(),
            reason,
        })
    }

    /// `timeout_ms` and `retries` under `prefix`.
    pub fn http(&self, prefix: &str, url: &str) -> Result<EndpointConfig, ConfigError> {
        Ok(EndpointConfig {
            url: url.to_owned(),
            timeout_ms: self.get(&format!("{prefix}.timeout_ms"))?,
            retries: self.get(&format!("{prefix}.retries"))?,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

/// Where a client gets its answers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Local { dim: usize },
    Mock { seed: u64 },
    MockExtractive,
    MockEcho,
    Url(String),
}

impl FromStr for Endpoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if s.starts_with("http://") || s.starts_with("https://") {
            return Ok(Endpoint::Url(s.to_owned()));
        }
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        match (head, arg) {
            ("local", None) => Ok(Endpoint::Local {
                dim: crate::embed::DEFAULT_LOCAL_DIM,
            }),
            ("local", Some(d)) => d
                .parse()
                .map(|dim| Endpoint::Local { dim })
                .map_err(|e| format!("bad dimension: {e}")),
            ("mock", None) => Ok(Endpoint::Mock { seed: 0 }),
            ("mock", Some("extractive")) => Ok(Endpoint::MockExtractive),
            ("mock", Some("echo")) => Ok(Endpoint::MockEcho),
            ("mock", Some(seed)) => seed
                .parse()
                .map(|seed| Endpoint::Mock { seed })
                .map_err(|e| format!("bad seed: {e}")),
            _ => Err("expected an http(s) URL, local[:dim] or mock[:...]".into()),
        }
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Http(#[from] HttpError),
    #[error("`{key}` cannot be {endpoint:?}")]
    Unsupported { key: String, endpoint: Endpoint },
}

pub fn make_embedder<T: Scalar>(s: &Settings) -> Result<Box<dyn Embedder<T>>, ClientError> {
    match s.endpoint("embed.endpoint")? {
        Endpoint::Local { dim } => Ok(Box::new(HashingEmbedder::<T>::new(dim)?)),
        Endpoint::Url(url) => {
            let config = RemoteEmbedConfig {
                endpoint: s.http("embed", &url)?,
                batch_size: s.get("embed.batch_size")?,
                max_inflight: s.get("embed.max_inflight")?,
            };
            Ok(Box::new(RemoteEmbedder::<T>::connect(config)?))
        }
        endpoint => Err(ClientError::Unsupported {
            key: "embed.endpoint".into(),
            endpoint,
        }),
    }
}

/// Builds the generator named by `key` (`gen.endpoint` or
/// `gen.finetuned_endpoint`).
pub fn make_generator(s: &Settings, key: &str) -> Result<Box<dyn GenerationClient>, ClientError> {
    match s.endpoint(key)? {
        Endpoint::MockExtractive => Ok(Box::new(ExtractiveGenerator)),
        Endpoint::MockEcho => Ok(Box::new(EchoGenerator)),
        Endpoint::Url(url) => Ok(Box::new(RemoteGenerator::new(s.http("gen", &url)?)?)),
        endpoint => Err(ClientError::Unsupported {
            key: key.into(),
            endpoint,
        }),
    }
}

pub fn make_question_generator(s: &Settings) -> Result<Box<dyn QuestionGenClient>, ClientError> {
    match s.endpoint("qagen.endpoint")? {
        Endpoint::Mock { seed } => Ok(Box::new(WindowQuestionGenerator::new(seed))),
        Endpoint::Url(url) => Ok(Box::new(RemoteQuestionGenerator::new(s.http("qagen", &url)?)?)),
        endpoint => Err(ClientError::Unsupported {
            key: "qagen.endpoint".into(),
            endpoint,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_keys_are_unique_and_owned_by_their_prefix() {
        let mut seen = std::collections::HashSet::new();
        for k in REGISTRY {
            assert!(seen.insert(k.key), "duplicate {}", k.key);
            let prefix = k.key.split('.').next().unwrap();
            let owner = if prefix == "gen" { "generate" } else { prefix };
            assert_eq!(owner, k.owner);
        }
    }

    #[test]
    fn file_parsing_and_errors() {
        let parsed = parse_config("# comment\n\nretrieve.threshold = 0.7\n").unwrap();
        assert_eq!(parsed, vec![("retrieve.threshold".into(), "0.7".into())]);
        assert!(matches!(
            parse_config("nope = 1"),
            Err(ConfigError::UnknownKey { line: Some(1), .. })
        ));
        assert!(matches!(parse_config("retrieve.threshold"), Err(ConfigError::Syntax { line: 1 })));
    }

    #[test]
    fn typed_access() {
        let mut s = Settings::default();
        assert_eq!(s.get::<usize>("retrieve.model_max_input").unwrap(), 4096);
        assert_eq!(s.get_list("experiment.thresholds").unwrap().len(), 11);
        assert_eq!(s.get_optional::<f64>("testgen.eps").unwrap(), None);
        s.set("testgen.eps", "0.25").unwrap();
        assert_eq!(s.get_optional::<f64>("testgen.eps").unwrap(), Some(0.25));
        s.set("qagen.k", "many").unwrap();
        assert!(s.get::<usize>("qagen.k").is_err());
        assert!(s.set("bogus", "1").is_err());
    }

    #[test]
    fn endpoint_forms() {
        assert_eq!("local".parse::<Endpoint>().unwrap(), Endpoint::Local { dim: 64 });
        assert_eq!("local:128".parse::<Endpoint>().unwrap(), Endpoint::Local { dim: 128 });
        assert_eq!("mock:7".parse::<Endpoint>().unwrap(), Endpoint::Mock { seed: 7 });
        assert_eq!("mock:echo".parse::<Endpoint>().unwrap(), Endpoint::MockEcho);
        assert_eq!(
            "http://h:1".parse::<Endpoint>().unwrap(),
            Endpoint::Url("http://h:1".into())
        );
        assert!("ftp://x".parse::<Endpoint>().is_err());
    }
}
