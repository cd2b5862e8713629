//! Sentence-keyed and question-keyed vector indexes with exact cosine
//! search and a checksummed JSON-lines file format.

use std::fmt;
use std::io::Write;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Sentence;
use crate::embed::{cosine, EmbedError, Embedder, EmbeddingVector};
use crate::qagen::QADataset;
use crate::scalar::Scalar;

pub const FORMAT_NAME: &str = "ragmark-index";
pub const FORMAT_VERSION: u32 = 1;
/// Slack applied to the inclusive threshold test so that a perfect match
/// still passes at τ = 1 after rounding.
pub const SCORE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("nothing to index")]
    EmptyIndex,
    #[error("query has dim {query}, index has dim {index}")]
    DimMismatch { query: usize, index: usize },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("index I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("index checksum verification failed")]
    Checksum,
    #[error("unsupported index format version {0}")]
    Version(u32),
    #[error("corrupt index: {0}")]
    Corrupt(String),
    #[error("expected a {expected} index, found {found}")]
    KindMismatch { expected: IndexKind, found: IndexKind },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IndexKind {
    /// Keys are corpus sentences; the payload is the sentence.
    #[serde(rename = "ID_s")]
    Sentences,
    /// Keys are generated questions; the payload is the parent paragraph.
    #[serde(rename = "ID_q")]
    Questions,
}

impl IndexKind {
    pub fn label(self) -> &'static str {
        match self {
            IndexKind::Sentences => "ID_s",
            IndexKind::Questions => "ID_q",
        }
    }
}

impl fmt::Display for IndexKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry<T> {
    pub key_vector: EmbeddingVector<T>,
    pub key_text: String,
    pub payload_text: String,
    pub doc_id: String,
    pub paragraph_ordinal: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexedDataset<T> {
    pub kind: IndexKind,
    pub entries: Vec<IndexEntry<T>>,
    pub embedder_name: String,
    pub dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit<T> {
    pub score: T,
    /// Position in `IndexedDataset::entries`.
    pub entry: usize,
}

struct KeySource {
    key_text: String,
    payload_text: String,
    doc_id: String,
    paragraph_ordinal: usize,
}

/// Embeds keys; texts that embed to zero (or non-finite) vectors are
/// skipped with a warning.
fn embed_keys<T: Scalar>(
    sources: Vec<KeySource>,
    embedder: &dyn Embedder<T>,
) -> Result<Vec<IndexEntry<T>>, IndexError> {
    let texts: Vec<String> = sources.iter().map(|s| s.key_text.clone()).collect();
    let vectors: Vec<Option<EmbeddingVector<T>>> = match embedder.embed_batch(&texts) {
        Ok(vs) => vs.into_iter().map(Some).collect(),
        Err(EmbedError::ZeroVector { .. }) => texts
            .iter()
            .map(|t| match embedder.embed_one(t) {
                Ok(v) => Ok(Some(v)),
                Err(EmbedError::ZeroVector { .. }) => Ok(None),
                Err(e) => Err(e),
            })
            .collect::<Result<_, _>>()?,
        Err(e) => return Err(e.into()),
    };
    if vectors.len() != sources.len() {
        return Err(EmbedError::CountMismatch {
            sent: sources.len(),
            received: vectors.len(),
        }
        .into());
    }
    let mut entries = Vec::with_capacity(sources.len());
    for (source, vector) in sources.into_iter().zip(vectors) {
        match vector {
            Some(v) if v.is_finite() && v.norm() > T::zero() => entries.push(IndexEntry {
                key_vector: v,
                key_text: source.key_text,
                payload_text: source.payload_text,
                doc_id: source.doc_id,
                paragraph_ordinal: source.paragraph_ordinal,
            }),
            _ => log::warn!(
                "skipping key `{}`: embeds to a zero or non-finite vector",
                source.key_text
            ),
        }
    }
    if entries.is_empty() {
        return Err(IndexError::EmptyIndex);
    }
    Ok(entries)
}

/// One entry per sentence; key and payload are the sentence text.
pub fn build_sentence_index<T: Scalar>(
    sentences: &[Sentence],
    embedder: &dyn Embedder<T>,
) -> Result<IndexedDataset<T>, IndexError> {
    if sentences.is_empty() {
        return Err(IndexError::EmptyIndex);
    }
    let sources = sentences
        .iter()
        .map(|s| KeySource {
            key_text: s.text.clone(),
            payload_text: s.text.clone(),
            doc_id: s.doc_id.clone(),
            paragraph_ordinal: s.paragraph_ordinal,
        })
        .collect();
    Ok(IndexedDataset {
        kind: IndexKind::Sentences,
        entries: embed_keys(sources, embedder)?,
        embedder_name: embedder.name().to_owned(),
        dim: embedder.dim(),
    })
}

/// One entry per Q&A pair; the key is the question and the payload the
/// paragraph that answers it.
pub fn build_question_index<T: Scalar>(
    qa: &QADataset,
    embedder: &dyn Embedder<T>,
) -> Result<IndexedDataset<T>, IndexError> {
    if qa.pairs.is_empty() {
        return Err(IndexError::EmptyIndex);
    }
    let sources = qa
        .pairs
        .iter()
        .map(|p| KeySource {
            key_text: p.question.clone(),
            payload_text: p.answer_text.clone(),
            doc_id: p.doc_id.clone(),
            paragraph_ordinal: p.paragraph_ordinal,
        })
        .collect();
    Ok(IndexedDataset {
        kind: IndexKind::Questions,
        entries: embed_keys(sources, embedder)?,
        embedder_name: embedder.name().to_owned(),
        dim: embedder.dim(),
    })
}

/// Does `score` pass threshold `tau`? At τ ≤ 0 everything passes,
/// including negative scores.
pub fn passes<T: Scalar>(score: T, tau: T) -> bool {
    tau <= T::zero() || score >= tau - T::of(SCORE_TOLERANCE)
}

impl<T: Scalar> IndexedDataset<T> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn expect_kind(&self, expected: IndexKind) -> Result<(), IndexError> {
        if self.kind == expected {
            Ok(())
        } else {
            Err(IndexError::KindMismatch {
                expected,
                found: self.kind,
            })
        }
    }

    /// Exact scan: every entry whose cosine with `query` passes
    /// `threshold`, best first, ties in insertion order.
    pub fn search(
        &self,
        query: &EmbeddingVector<T>,
        threshold: T,
    ) -> Result<Vec<RetrievalHit<T>>, IndexError> {
        if query.dim() != self.dim {
            return Err(IndexError::DimMismatch {
                query: query.dim(),
                index: self.dim,
            });
        }
        let mut hits = Vec::new();
        for (entry, e) in self.entries.iter().enumerate() {
            let score = cosine(query, &e.key_vector)?;
            if passes(score, threshold) {
                hits.push(RetrievalHit { score, entry });
            }
        }
        // Stable: equal scores keep insertion order.
        hits.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(std::cmp::Ordering::Equal));
        Ok(hits)
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let mut body = Vec::new();
        let header = Header {
            format: FORMAT_NAME.to_owned(),
            format_version: FORMAT_VERSION,
            kind: self.kind,
            embedder_name: self.embedder_name.clone(),
            dim: self.dim,
            count: self.entries.len(),
            dtype: T::DTYPE.to_owned(),
        };
        serde_json::to_writer(&mut body, &header).map_err(std::io::Error::from)?;
        body.push(b'\n');
        for e in &self.entries {
            let mut bytes = Vec::with_capacity(e.key_vector.dim() * T::WIDTH);
            for &v in e.key_vector.as_slice() {
                v.write_le(&mut bytes);
            }
            let record = EntryRecord {
                key_text: e.key_text.clone(),
                payload_text: e.payload_text.clone(),
                doc_id: e.doc_id.clone(),
                paragraph_ordinal: e.paragraph_ordinal,
                vec_b64: B64.encode(&bytes),
            };
            serde_json::to_writer(&mut body, &record).map_err(std::io::Error::from)?;
            body.push(b'\n');
        }
        let trailer = Trailer {
            crc32: format!("{:08x}", crc32fast::hash(&body)),
        };
        serde_json::to_writer(&mut body, &trailer).map_err(std::io::Error::from)?;
        body.push(b'\n');
        let mut file = std::fs::File::create(path)?;
        file.write_all(&body)?;
        file.flush()?;
        Ok(())
    }

    /// Loads and verifies an index. The stored kind is returned as-is; use
    /// [`IndexedDataset::expect_kind`] to enforce one.
    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let bytes = std::fs::read(path)?;
        let content = bytes.strip_suffix(b"\n").ok_or(IndexError::Checksum)?;
        let split = content
            .iter()
            .rposition(|&b| b == b'\n')
            .ok_or(IndexError::Checksum)?;
        let (body, trailer_line) = (&bytes[..=split], &content[split + 1..]);
        let trailer: Trailer =
            serde_json::from_slice(trailer_line).map_err(|_| IndexError::Checksum)?;
        if trailer.crc32 != format!("{:08x}", crc32fast::hash(body)) {
            return Err(IndexError::Checksum);
        }

        let text = std::str::from_utf8(body).map_err(|e| IndexError::Corrupt(e.to_string()))?;
        let mut lines = text.lines();
        let header: Header = serde_json::from_str(lines.next().unwrap_or(""))
            .map_err(|e| IndexError::Corrupt(format!("header: {e}")))?;
        if header.format != FORMAT_NAME {
            return Err(IndexError::Corrupt(format!("unknown format `{}`", header.format)));
        }
        if header.format_version != FORMAT_VERSION {
            return Err(IndexError::Version(header.format_version));
        }
        let decode: fn(&[u8]) -> f64 = match header.dtype.as_str() {
            "f32" => |b| f64::from(f32::read_le(b)),
            "f64" => f64::read_le,
            other => return Err(IndexError::Corrupt(format!("unknown dtype `{other}`"))),
        };
        let width = if header.dtype == "f32" { 4 } else { 8 };

        let mut entries = Vec::with_capacity(header.count);
        for (i, line) in lines.enumerate() {
            let record: EntryRecord = serde_json::from_str(line)
                .map_err(|e| IndexError::Corrupt(format!("entry {i}: {e}")))?;
            let raw = B64
                .decode(record.vec_b64.as_bytes())
                .map_err(|e| IndexError::Corrupt(format!("entry {i}: {e}")))?;
            if raw.len() != header.dim * width {
                return Err(IndexError::Corrupt(format!(
                    "entry {i}: {} bytes for dim {}",
                    raw.len(),
                    header.dim
                )));
            }
            let values = raw.chunks_exact(width).map(|c| T::of(decode(c))).collect();
            entries.push(IndexEntry {
                key_vector: EmbeddingVector::new(values),
                key_text: record.key_text,
                payload_text: record.payload_text,
                doc_id: record.doc_id,
                paragraph_ordinal: record.paragraph_ordinal,
            });
        }
        if entries.len() != header.count {
            return Err(IndexError::Corrupt(format!(
                "header announces {} entries, found {}",
                header.count,
                entries.len()
            )));
        }
        Ok(Self {
            kind: header.kind,
            entries,
            embedder_name: header.embedder_name,
            dim: header.dim,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    format_version: u32,
    kind: IndexKind,
    embedder_name: String,
    dim: usize,
    count: usize,
    dtype: String,
}

#[derive(Serialize, Deserialize)]
struct EntryRecord {
    key_text: String,
    payload_text: String,
    doc_id: String,
    paragraph_ordinal: usize,
    vec_b64: String,
}

#[derive(Serialize, Deserialize)]
struct Trailer {
    crc32: String,
}
