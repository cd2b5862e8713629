//! Document ingestion, CORD-19 record filtering, and the paragraph and
//! sentence splitters.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::tokenize::CounterSet;

/// Default per-paragraph token budget.
pub const PARAGRAPH_BUDGET: usize = 256;
pub const MIN_BUDGET: usize = 16;
pub const MIN_SENTENCE_WORDS: usize = 10;
pub const MAX_SENTENCE_WORDS: usize = 30;

/// Bodies containing any of these are treated as LaTeX-bearing.
pub const LATEX_MARKERS: [&str; 5] = ["\\begin{", "\\end{", "$$", "\\cite{", "\\frac"];

/// Lowercased words that end with a period without ending a sentence.
const ABBREVIATIONS: &[&str] = &[
    "dr", "mr", "mrs", "ms", "prof", "st", "jr", "sr", "vs", "e.g", "i.e", "fig", "figs", "al",
    "inc", "ltd", "approx", "eq", "ref", "vol", "cf",
];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("document `{0}` has an empty body")]
    EmptyDocument(String),
    #[error("token budget {0} is below the minimum of {MIN_BUDGET}")]
    BudgetTooSmall(usize),
    #[error("no token counter registered")]
    NoCounters,
    #[error("invalid word range [{min}, {max}]")]
    InvalidWordRange { min: usize, max: usize },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing CORD-19 input: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub body: String,
    #[serde(default)]
    pub source_meta: BTreeMap<String, String>,
}

impl Document {
    pub fn new(id: impl Into<String>, body: impl Into<String>) -> Self {
        let id = id.into();
        Self {
            title: id.clone(),
            id,
            body: body.into(),
            source_meta: BTreeMap::new(),
        }
    }

    /// One document per UTF-8 file; the id is the file stem.
    pub fn from_text_file(path: &Path) -> Result<Self, CorpusError> {
        let body = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        Ok(Self::new(id, body))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paragraph {
    pub doc_id: String,
    pub ordinal: usize,
    pub text: String,
    pub token_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub doc_id: String,
    pub paragraph_ordinal: usize,
    pub ordinal: usize,
    pub text: String,
    pub word_count: usize,
}

/// Why a CORD-19 record was dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Malformed,
    MissingAbstract,
    NotPubmedCentral,
    MissingArxivId,
    LatexDetected,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rejection {
    pub index: usize,
    pub paper_id: Option<String>,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default)]
pub struct Cord19Outcome {
    pub documents: Vec<Document>,
    pub rejected: Vec<Rejection>,
}

/// Collapses every whitespace run to a single space and trims the ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Text of a CORD-19 field that is either a string or a list of
/// `{"text": ...}` objects (the shape of the published JSON parses).
fn field_text(value: Option<&Value>) -> Result<String, RejectReason> {
    match value {
        None | Some(Value::Null) => Ok(String::new()),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Array(items)) => {
            let mut parts = Vec::with_capacity(items.len());
            for item in items {
                match item {
                    Value::String(s) => parts.push(s.clone()),
                    Value::Object(obj) => match obj.get("text") {
                        Some(Value::String(s)) => parts.push(s.clone()),
                        _ => return Err(RejectReason::Malformed),
                    },
                    _ => return Err(RejectReason::Malformed),
                }
            }
            Ok(parts.join("\n\n"))
        }
        Some(_) => Err(RejectReason::Malformed),
    }
}

fn is_pubmed_central(tag: &str) -> bool {
    tag.split([';', ','])
        .map(|t| t.trim().to_lowercase())
        .any(|t| t == "pmc" || t == "pubmed central" || t == "pubmedcentral")
}

fn has_latex(body: &str) -> bool {
    LATEX_MARKERS.iter().any(|m| body.contains(m))
}

fn check_record(record: &Value) -> Result<Document, RejectReason> {
    let obj = record.as_object().ok_or(RejectReason::Malformed)?;
    let paper_id = match obj.get("paper_id") {
        Some(Value::String(s)) if !s.trim().is_empty() => s.clone(),
        _ => return Err(RejectReason::Malformed),
    };
    let abstract_text = field_text(obj.get("abstract"))?;
    let body = field_text(obj.get("body_text"))?;
    let repository = match obj.get("repository") {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(Value::Array(tags)) => tags
            .iter()
            .map(|t| t.as_str().map(str::to_owned).ok_or(RejectReason::Malformed))
            .collect::<Result<Vec<_>, _>>()?
            .join(";"),
        Some(_) => return Err(RejectReason::Malformed),
    };
    let arxiv_id = match obj.get("arxiv_id") {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.trim().to_owned(),
        Some(_) => return Err(RejectReason::Malformed),
    };

    if abstract_text.trim().is_empty() {
        return Err(RejectReason::MissingAbstract);
    }
    if !is_pubmed_central(&repository) {
        return Err(RejectReason::NotPubmedCentral);
    }
    if arxiv_id.is_empty() {
        return Err(RejectReason::MissingArxivId);
    }
    if has_latex(&body) {
        return Err(RejectReason::LatexDetected);
    }
    if normalize_whitespace(&body).is_empty() {
        return Err(RejectReason::Malformed);
    }

    let title = obj
        .get("title")
        .and_then(Value::as_str)
        .map(str::to_owned)
        .unwrap_or_else(|| paper_id.clone());
    let mut source_meta = BTreeMap::new();
    source_meta.insert("has_abstract".to_owned(), "true".to_owned());
    source_meta.insert("repository".to_owned(), repository);
    source_meta.insert("arxiv_id".to_owned(), arxiv_id);
    source_meta.insert("format".to_owned(), "cord19".to_owned());
    Ok(Document {
        id: paper_id,
        title,
        body,
        source_meta,
    })
}

/// Keeps records that have an abstract, belong to PubMed Central, carry an
/// arXiv id, and whose body has no LaTeX markers. Bad records are rejected
/// one by one; the batch never fails as a whole.
pub fn filter_cord19(records: &[Value]) -> Cord19Outcome {
    let mut outcome = Cord19Outcome::default();
    for (index, record) in records.iter().enumerate() {
        match check_record(record) {
            Ok(doc) => outcome.documents.push(doc),
            Err(reason) => {
                let paper_id = record
                    .get("paper_id")
                    .and_then(Value::as_str)
                    .map(str::to_owned);
                log::debug!("cord19 record {index} rejected: {reason:?}");
                outcome.rejected.push(Rejection {
                    index,
                    paper_id,
                    reason,
                });
            }
        }
    }
    outcome
}

/// Reads CORD-19-shaped records from either a JSON array or JSON lines.
pub fn read_cord19_records(path: &Path) -> Result<Vec<Value>, CorpusError> {
    let raw = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let trimmed = raw.trim_start();
    if trimmed.starts_with('[') {
        return Ok(serde_json::from_str(trimmed)?);
    }
    raw.lines()
        .filter(|l| !l.trim().is_empty())
        // Malformed lines become non-object values and are rejected per record.
        .map(|l| Ok(serde_json::from_str(l).unwrap_or(Value::Null)))
        .collect()
}

fn natural_paragraphs(body: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in body.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                out.push(normalize_whitespace(&current.join(" ")));
                current.clear();
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        out.push(normalize_whitespace(&current.join(" ")));
    }
    out
}

/// Cuts `piece` into chunks within `budget`, preferring whitespace cuts.
fn hard_split(piece: &str, counters: &CounterSet, budget: usize) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = piece.trim();
    while !rest.is_empty() && counters.max_count(rest) > budget {
        let mut cut = counters.truncate(rest, budget);
        let at_space = rest[cut.len()..].starts_with(char::is_whitespace);
        if !at_space {
            if let Some(ws) = cut.rfind(char::is_whitespace) {
                cut = cut[..ws].trim_end();
            }
        }
        if cut.is_empty() {
            // A single token the counters reject outright; emit one char.
            let ch = rest.chars().next().map_or(1, char::len_utf8);
            cut = &rest[..ch];
        }
        out.push(cut.to_owned());
        rest = rest[cut.len()..].trim_start();
    }
    if !rest.is_empty() {
        out.push(rest.to_owned());
    }
    out
}

/// Splits a document into paragraphs within `budget` tokens under every
/// registered counter.
///
/// Blank lines separate natural paragraphs. An oversize paragraph is
/// regrouped sentence by sentence; a sentence that alone exceeds the budget
/// is hard-split and the document gets a `hard_split` entry in its
/// `source_meta` listing the affected ordinals.
pub fn split_paragraphs(
    doc: &mut Document,
    counters: &CounterSet,
    budget: usize,
) -> Result<Vec<Paragraph>, CorpusError> {
    if budget < MIN_BUDGET {
        return Err(CorpusError::BudgetTooSmall(budget));
    }
    if counters.is_empty() {
        return Err(CorpusError::NoCounters);
    }
    let naturals = natural_paragraphs(&doc.body);
    if naturals.is_empty() {
        return Err(CorpusError::EmptyDocument(doc.id.clone()));
    }

    // (text, contains a hard-split piece)
    let mut chunks: Vec<(String, bool)> = Vec::new();
    for natural in naturals {
        if counters.max_count(&natural) <= budget {
            chunks.push((natural, false));
            continue;
        }
        let mut buffer = String::new();
        let mut buffer_hard = false;
        for sentence in split_sentences(&natural) {
            let pieces = if counters.max_count(&sentence) > budget {
                hard_split(&sentence, counters, budget)
                    .into_iter()
                    .map(|p| (p, true))
                    .collect()
            } else {
                vec![(sentence, false)]
            };
            for (piece, hard) in pieces {
                if buffer.is_empty() {
                    buffer = piece;
                    buffer_hard = hard;
                    continue;
                }
                let candidate = format!("{buffer} {piece}");
                if counters.max_count(&candidate) <= budget {
                    buffer = candidate;
                    buffer_hard |= hard;
                } else {
                    chunks.push((std::mem::replace(&mut buffer, piece), buffer_hard));
                    buffer_hard = hard;
                }
            }
        }
        if !buffer.is_empty() {
            chunks.push((buffer, buffer_hard));
        }
    }

    let mut hard_ordinals = Vec::new();
    let paragraphs = chunks
        .into_iter()
        .enumerate()
        .map(|(ordinal, (text, hard))| {
            if hard {
                hard_ordinals.push(ordinal.to_string());
            }
            Paragraph {
                doc_id: doc.id.clone(),
                ordinal,
                token_count: counters.max_count(&text),
                text,
            }
        })
        .collect();
    if !hard_ordinals.is_empty() {
        log::warn!(
            "document `{}`: hard-split oversize sentences in paragraphs {}",
            doc.id,
            hard_ordinals.join(",")
        );
        doc.source_meta
            .insert("hard_split".to_owned(), hard_ordinals.join(","));
    }
    Ok(paragraphs)
}

fn is_abbreviation(word: &str) -> bool {
    let word = word.trim_start_matches(|c: char| !c.is_alphanumeric());
    let lower = word.to_lowercase();
    if ABBREVIATIONS.contains(&lower.as_str()) {
        return true;
    }
    // Single-letter initials such as "J. Smith".
    let mut chars = word.chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if c.is_uppercase())
}

/// Rule-based sentence boundary detection.
///
/// A boundary follows a run of `.`, `!` or `?` (plus closing quotes and
/// brackets) when whitespace and then an uppercase letter or digit come
/// next. A period ending a known abbreviation or an initial is not a
/// boundary.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut sentences = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let (pos, ch) = chars[i];
        if !matches!(ch, '.' | '!' | '?') {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < chars.len() && matches!(chars[j].1, '.' | '!' | '?' | '"' | '\'' | ')' | ']') {
            j += 1;
        }
        let end = chars.get(j).map_or(text.len(), |c| c.0);
        if j >= chars.len() || !chars[j].1.is_whitespace() {
            i = j;
            continue;
        }
        let mut k = j;
        while k < chars.len() && chars[k].1.is_whitespace() {
            k += 1;
        }
        let next_ok = chars
            .get(k)
            .is_some_and(|c| c.1.is_uppercase() || c.1.is_ascii_digit());
        let guarded = ch == '.' && j == i + 1 && {
            let word_start = text[..pos]
                .rfind(char::is_whitespace)
                .map_or(0, |w| w + 1);
            is_abbreviation(&text[word_start..pos])
        };
        if next_ok && !guarded {
            let sentence = text[start..end].trim();
            if !sentence.is_empty() {
                sentences.push(sentence.to_owned());
            }
            start = end;
        }
        i = j;
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        sentences.push(tail.to_owned());
    }
    sentences
}

/// Sentences of every paragraph, numbered within their paragraph.
pub fn sentences_of(paragraphs: &[Paragraph]) -> Vec<Sentence> {
    paragraphs
        .iter()
        .flat_map(|p| {
            split_sentences(&p.text)
                .into_iter()
                .enumerate()
                .map(move |(ordinal, text)| Sentence {
                    doc_id: p.doc_id.clone(),
                    paragraph_ordinal: p.ordinal,
                    ordinal,
                    word_count: word_count(&text),
                    text,
                })
        })
        .collect()
}

/// Keeps sentences whose word count lies in the closed range
/// `[min_words, max_words]`.
pub fn filter_sentences(
    sentences: &[Sentence],
    min_words: usize,
    max_words: usize,
) -> Result<Vec<Sentence>, CorpusError> {
    if min_words > max_words {
        return Err(CorpusError::InvalidWordRange {
            min: min_words,
            max: max_words,
        });
    }
    Ok(sentences
        .iter()
        .filter(|s| (min_words..=max_words).contains(&s.word_count))
        .cloned()
        .collect())
}
