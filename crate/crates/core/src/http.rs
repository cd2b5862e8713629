//! Blocking JSON-over-HTTP client shared by the remote embedder, question
//! generator and generation clients.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

/// Requests may not be configured with a timeout shorter than this.
pub const TIMEOUT_FLOOR_MS: u64 = 10;

#[derive(Debug, Error)]
pub enum HttpError {
    #[error("invalid endpoint configuration: {0}")]
    Config(String),
    #[error("request to {url} timed out")]
    Timeout { url: String },
    #[error("{url} answered HTTP {status}")]
    Status { url: String, status: u16 },
    #[error("transport error talking to {url}: {message}")]
    Transport { url: String, message: String },
    #[error("malformed response from {url}: {message}")]
    Malformed { url: String, message: String },
}

impl HttpError {
    pub fn is_retryable(&self) -> bool {
        match self {
            HttpError::Timeout { .. } | HttpError::Transport { .. } => true,
            HttpError::Status { status, .. } => *status >= 500 || *status == 429,
            HttpError::Config(_) | HttpError::Malformed { .. } => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndpointConfig {
    pub url: String,
    pub timeout_ms: u64,
    /// Additional attempts after the first failure.
    pub retries: u32,
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            timeout_ms: 30_000,
            retries: 2,
        }
    }

    pub fn validate(&self) -> Result<(), HttpError> {
        if !(self.url.starts_with("http://") || self.url.starts_with("https://")) {
            return Err(HttpError::Config(format!(
                "endpoint `{}` is not an http(s) URL",
                self.url
            )));
        }
        if self.timeout_ms < TIMEOUT_FLOOR_MS {
            return Err(HttpError::Config(format!(
                "timeout {} ms is below the floor of {TIMEOUT_FLOOR_MS} ms",
                self.timeout_ms
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct JsonClient {
    config: EndpointConfig,
    agent: ureq::Agent,
}

impl JsonClient {
    pub fn new(config: EndpointConfig) -> Result<Self, HttpError> {
        config.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { config, agent })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    fn url_for(&self, path: &str) -> String {
        format!("{}{}", self.config.url.trim_end_matches('/'), path)
    }

    fn post_once<Req, Resp>(&self, url: &str, body: &Req) -> Result<Resp, HttpError>
    where
        Req: Serialize,
        Resp: DeserializeOwned,
    {
        let mut response = self
            .agent
            .post(url)
            .send_json(body)
            .map_err(|e| classify(url, e))?;
        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(HttpError::Status {
                url: url.to_owned(),
                status,
            });
        }
        response
            .body_mut()
            .read_json::<Resp>()
            .map_err(|e| match classify(url, e) {
                HttpError::Transport { url, message } => HttpError::Malformed { url, message },
                other => other,
            })
    }

    /// POSTs `body` to `path`, retrying retryable failures up to the
    /// configured count with exponential backoff.
    pub fn post_json<Req, Resp>(&self, path: &str, body: &Req) -> Result<Resp, HttpError>
    where
        Req: Serialize,
        Resp: DeserializeOwned,
    {
        let url = self.url_for(path);
        let mut attempt = 0u32;
        loop {
            match self.post_once(&url, body) {
                Ok(resp) => return Ok(resp),
                Err(err) if err.is_retryable() && attempt < self.config.retries => {
                    log::warn!("{err}; retrying ({}/{})", attempt + 1, self.config.retries);
                    std::thread::sleep(Duration::from_millis(20 << attempt.min(5)));
                    attempt += 1;
                }
                Err(err) => return Err(err),
            }
        }
    }
}

fn classify(url: &str, err: ureq::Error) -> HttpError {
    match err {
        ureq::Error::Timeout(_) => HttpError::Timeout {
            url: url.to_owned(),
        },
        ureq::Error::Json(e) => HttpError::Malformed {
            url: url.to_owned(),
            message: e.to_string(),
        },
        ureq::Error::Io(ref e) if e.kind() == std::io::ErrorKind::TimedOut => HttpError::Timeout {
            url: url.to_owned(),
        },
        other => HttpError::Transport {
            url: url.to_owned(),
            message: other.to_string(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_guards() {
        let mut cfg = EndpointConfig::new("http://localhost:1");
        assert!(cfg.validate().is_ok());
        cfg.timeout_ms = TIMEOUT_FLOOR_MS - 1;
        assert!(matches!(cfg.validate(), Err(HttpError::Config(_))));
        assert!(EndpointConfig::new("ftp://x").validate().is_err());
    }

    #[test]
    fn retryable_classes() {
        let s = |status| HttpError::Status { url: String::new(), status };
        assert!(s(503).is_retryable());
        assert!(s(429).is_retryable());
        assert!(!s(404).is_retryable());
        assert!(!HttpError::Malformed { url: String::new(), message: String::new() }.is_retryable());
    }
}
