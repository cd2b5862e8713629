//! Embedding vectors, the embedder contract, cosine similarity, and the
//! local hashing and remote HTTP embedders.

use std::marker::PhantomData;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::{EndpointConfig, HttpError, JsonClient};
use crate::par::map_bounded;
use crate::scalar::Scalar;

pub const DEFAULT_LOCAL_DIM: usize = 64;
pub const MIN_LOCAL_DIM: usize = 8;
pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const DEFAULT_EMBED_INFLIGHT: usize = 4;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("text {index} embeds to the zero vector")]
    ZeroVector { index: usize },
    #[error("cosine of a zero-norm vector")]
    ZeroNorm,
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("embedder changed mid-run: expected dim {expected}, got {got}")]
    EmbedderChanged { expected: usize, got: usize },
    #[error("embedder returned {received} vectors for {sent} texts")]
    CountMismatch { sent: usize, received: usize },
    #[error("embedding dimension {0} is too small")]
    InvalidDim(usize),
    #[error("non-finite value in returned vector {index}")]
    NonFinite { index: usize },
    #[error(transparent)]
    Http(#[from] HttpError),
}

impl EmbedError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, EmbedError::Http(e) if e.is_retryable())
    }
}

/// A dense embedding; its dimension is its length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector<T> {
    values: Vec<T>,
}

impl<T: Scalar> EmbeddingVector<T> {
    pub fn new(values: Vec<T>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn into_inner(self) -> Vec<T> {
        self.values
    }

    pub fn dot(&self, other: &Self) -> T {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a * b)
            .sum()
    }

    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, factor: T) -> Self {
        Self::new(self.values.iter().map(|&v| v * factor).collect())
    }

    /// Unit-length copy, or `None` for the zero vector.
    pub fn normalized(&self) -> Option<Self> {
        let norm = self.norm();
        (norm > T::zero()).then(|| self.scaled(norm.recip()))
    }
}

/// Cosine similarity `x·y / (‖x‖‖y‖)`, clamped into `[-1, 1]`.
pub fn cosine<T: Scalar>(x: &EmbeddingVector<T>, y: &EmbeddingVector<T>) -> Result<T, EmbedError> {
    if x.dim() != y.dim() {
        return Err(EmbedError::DimMismatch {
            left: x.dim(),
            right: y.dim(),
        });
    }
    let (nx, ny) = (x.norm(), y.norm());
    if nx <= T::zero() || ny <= T::zero() {
        return Err(EmbedError::ZeroNorm);
    }
    let c = x.dot(y) / (nx * ny);
    Ok(c.max(-T::one()).min(T::one()))
}

/// Maps texts to fixed-dimension vectors. Implementations are
/// deterministic and shareable across threads.
pub trait Embedder<T: Scalar>: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    /// One vector per input text, in input order.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector<T>>, EmbedError>;

    fn embed_one(&self, text: &str) -> Result<EmbeddingVector<T>, EmbedError> {
        let mut out = self.embed_batch(&[text.to_owned()])?;
        out.pop().ok_or(EmbedError::CountMismatch { sent: 1, received: 0 })
    }
}

/// 64-bit FNV-1a over the UTF-8 bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// Lowercased alphanumeric words of `text`.
pub fn hash_words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

/// Offline embedder: hashed bag of words, L2-normalized.
#[derive(Debug, Clone)]
pub struct HashingEmbedder<T> {
    dim: usize,
    name: String,
    _scalar: PhantomData<T>,
}

impl<T: Scalar> HashingEmbedder<T> {
    pub fn new(dim: usize) -> Result<Self, EmbedError> {
        if dim < MIN_LOCAL_DIM {
            return Err(EmbedError::InvalidDim(dim));
        }
        Ok(Self {
            dim,
            name: format!("local-fnv1a-{dim}"),
            _scalar: PhantomData,
        })
    }

    pub fn bucket(&self, word: &str) -> usize {
        (fnv1a64(word.as_bytes()) % self.dim as u64) as usize
    }

    fn embed_text(&self, index: usize, text: &str) -> Result<EmbeddingVector<T>, EmbedError> {
        let mut counts = vec![T::zero(); self.dim];
        for word in hash_words(text) {
            counts[self.bucket(&word)] += T::one();
        }
        EmbeddingVector::new(counts)
            .normalized()
            .ok_or(EmbedError::ZeroVector { index })
    }
}

impl<T: Scalar> Embedder<T> for HashingEmbedder<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector<T>>, EmbedError> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| self.embed_text(i, t))
            .collect()
    }
}

/// Deterministic local embedding of `texts` at `dim`.
pub fn embed_local_test<T: Scalar>(
    texts: &[String],
    dim: usize,
) -> Result<Vec<EmbeddingVector<T>>, EmbedError> {
    HashingEmbedder::<T>::new(dim)?.embed_batch(texts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteEmbedConfig {
    pub endpoint: EndpointConfig,
    pub batch_size: usize,
    pub max_inflight: usize,
}

impl RemoteEmbedConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            endpoint: EndpointConfig::new(url),
            batch_size: DEFAULT_BATCH_SIZE,
            max_inflight: DEFAULT_EMBED_INFLIGHT,
        }
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
    dim: usize,
    model: String,
}

/// Client for a `POST /embed` sentence-embedding service.
#[derive(Debug)]
pub struct RemoteEmbedder<T> {
    client: JsonClient,
    batch_size: usize,
    max_inflight: usize,
    dim: usize,
    model: String,
    _scalar: PhantomData<T>,
}

impl<T: Scalar> RemoteEmbedder<T> {
    /// Connects and issues one probe request to learn the model's name and
    /// dimension; later responses must agree with them.
    pub fn connect(config: RemoteEmbedConfig) -> Result<Self, EmbedError> {
        let client = JsonClient::new(config.endpoint)?;
        let probe: EmbedResponse = client.post_json(
            "/embed",
            &EmbedRequest {
                texts: &["dimension probe".to_owned()],
            },
        )?;
        if probe.vectors.len() != 1 {
            return Err(EmbedError::CountMismatch {
                sent: 1,
                received: probe.vectors.len(),
            });
        }
        if probe.dim == 0 || probe.vectors[0].len() != probe.dim {
            return Err(EmbedError::InvalidDim(probe.vectors[0].len()));
        }
        Ok(Self {
            client,
            batch_size: config.batch_size.max(1),
            max_inflight: config.max_inflight.max(1),
            dim: probe.dim,
            model: probe.model,
            _scalar: PhantomData,
        })
    }

    fn embed_chunk(&self, texts: &[String]) -> Result<Vec<EmbeddingVector<T>>, EmbedError> {
        let resp: EmbedResponse = self.client.post_json("/embed", &EmbedRequest { texts })?;
        if resp.vectors.len() != texts.len() {
            return Err(EmbedError::CountMismatch {
                sent: texts.len(),
                received: resp.vectors.len(),
            });
        }
        if resp.dim != self.dim {
            return Err(EmbedError::EmbedderChanged {
                expected: self.dim,
                got: resp.dim,
            });
        }
        resp.vectors
            .into_iter()
            .enumerate()
            .map(|(index, v)| {
                if v.len() != self.dim {
                    return Err(EmbedError::EmbedderChanged {
                        expected: self.dim,
                        got: v.len(),
                    });
                }
                let v = EmbeddingVector::new(v.into_iter().map(T::of).collect());
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(EmbedError::NonFinite { index })
                }
            })
            .collect()
    }
}

impl<T: Scalar> Embedder<T> for RemoteEmbedder<T> {
    fn name(&self) -> &str {
        &self.model
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector<T>>, EmbedError> {
        let chunks: Vec<&[String]> = texts.chunks(self.batch_size).collect();
        let results = map_bounded(&chunks, self.max_inflight, |chunk| self.embed_chunk(chunk));
        let mut out = Vec::with_capacity(texts.len());
        for chunk in results {
            out.extend(chunk?);
        }
        Ok(out)
    }
}
