//! Answer-quality metrics: BLEU, ROUGE-L, METEOR, and the sentence-level
//! max-match cosine score (CS).

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::split_sentences;
use crate::embed::{cosine, EmbedError, Embedder};
use crate::scalar::Scalar;

pub const DEFAULT_BLEU_ORDER: usize = 4;
/// Precision assigned to an n-gram order with no matches.
pub const BLEU_EPSILON: f64 = 1e-9;
const STEM_SUFFIXES: [&str; 5] = ["ing", "ed", "es", "ly", "s"];
const MIN_STEM_LEN: usize = 3;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("reference text has no sentences")]
    EmptyReference,
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Lowercased words; whitespace and punctuation both separate, punctuation
/// is dropped.
pub fn metric_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_default() += 1;
        }
    }
    counts
}

/// Sentence BLEU against a single reference with epsilon smoothing and
/// brevity penalty. An order with no candidate n-grams is floored like an
/// order with no matches.
pub fn bleu(candidate: &str, reference: &str, max_n: usize) -> f64 {
    let cand = metric_tokens(candidate);
    let refs = metric_tokens(reference);
    if cand.is_empty() || max_n == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for n in 1..=max_n {
        let cand_counts = ngram_counts(&cand, n);
        let ref_counts = ngram_counts(&refs, n);
        let total = cand.len().saturating_sub(n - 1);
        let matched: usize = cand_counts
            .iter()
            .map(|(gram, &c)| c.min(ref_counts.get(gram).copied().unwrap_or(0)))
            .sum();
        let precision = if matched == 0 || total == 0 {
            BLEU_EPSILON
        } else {
            matched as f64 / total as f64
        };
        log_sum += precision.ln();
        lo = lo.min(precision);
        hi = hi.max(precision);
    }
    let (c, r) = (cand.len() as f64, refs.len() as f64);
    let brevity = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    // A geometric mean lies between its extremes; clamping removes
    // exp/ln round-off.
    brevity * (log_sum / max_n as f64).exp().clamp(lo, hi)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScores {
    pub rouge_l_f1: f64,
    pub rouge_1_recall: f64,
}

pub fn rouge_scores(candidate: &str, reference: &str) -> RougeScores {
    let cand = metric_tokens(candidate);
    let refs = metric_tokens(reference);
    if cand.is_empty() || refs.is_empty() {
        return RougeScores {
            rouge_l_f1: 0.0,
            rouge_1_recall: 0.0,
        };
    }
    let lcs = lcs_len(&cand, &refs) as f64;
    let rouge_l_f1 = if lcs == 0.0 {
        0.0
    } else {
        let p = lcs / cand.len() as f64;
        let r = lcs / refs.len() as f64;
        2.0 * p * r / (p + r)
    };
    let cand_counts = ngram_counts(&cand, 1);
    let overlap: usize = ngram_counts(&refs, 1)
        .iter()
        .map(|(g, &c)| c.min(cand_counts.get(g).copied().unwrap_or(0)))
        .sum();
    RougeScores {
        rouge_l_f1,
        rouge_1_recall: overlap as f64 / refs.len() as f64,
    }
}

/// Headline ROUGE: ROUGE-L F1 over tokens.
pub fn rouge(candidate: &str, reference: &str) -> f64 {
    rouge_scores(candidate, reference).rouge_l_f1
}

/// Suffix-stripping stemmer used by the METEOR stem stage.
pub fn stem(word: &str) -> &str {
    for suffix in STEM_SUFFIXES {
        if let Some(base) = word.strip_suffix(suffix) {
            if base.chars().count() >= MIN_STEM_LEN {
                return base;
            }
        }
    }
    word
}

/// Aligns unmatched candidate tokens to unmatched reference tokens with
/// equal keys, preferring the position that continues the previous
/// candidate token's alignment.
fn align_stage(
    cand: &[&str],
    refs: &[&str],
    cand_match: &mut [Option<usize>],
    ref_used: &mut [bool],
) {
    for i in 0..cand.len() {
        if cand_match[i].is_some() {
            continue;
        }
        let follow = i
            .checked_sub(1)
            .and_then(|p| cand_match[p])
            .map(|j| j + 1)
            .filter(|&j| j < refs.len() && !ref_used[j] && refs[j] == cand[i]);
        let chosen = follow.or_else(|| (0..refs.len()).find(|&j| !ref_used[j] && refs[j] == cand[i]));
        if let Some(j) = chosen {
            cand_match[i] = Some(j);
            ref_used[j] = true;
        }
    }
}

/// METEOR with exact then stem matching (no synonym stage).
pub fn meteor(candidate: &str, reference: &str) -> f64 {
    let cand = metric_tokens(candidate);
    let refs = metric_tokens(reference);
    if cand.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let mut cand_match = vec![None; cand.len()];
    let mut ref_used = vec![false; refs.len()];
    let exact_c: Vec<&str> = cand.iter().map(String::as_str).collect();
    let exact_r: Vec<&str> = refs.iter().map(String::as_str).collect();
    align_stage(&exact_c, &exact_r, &mut cand_match, &mut ref_used);
    let stem_c: Vec<&str> = exact_c.iter().map(|w| stem(w)).collect();
    let stem_r: Vec<&str> = exact_r.iter().map(|w| stem(w)).collect();
    align_stage(&stem_c, &stem_r, &mut cand_match, &mut ref_used);

    let pairs: Vec<(usize, usize)> = cand_match
        .iter()
        .enumerate()
        .filter_map(|(i, m)| m.map(|j| (i, j)))
        .collect();
    let m = pairs.len();
    if m == 0 {
        return 0.0;
    }
    let chunks = 1 + pairs
        .windows(2)
        .filter(|w| w[1].0 != w[0].0 + 1 || w[1].1 != w[0].1 + 1)
        .count();
    let p = m as f64 / cand.len() as f64;
    let r = m as f64 / refs.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    f_mean * (1.0 - penalty)
}

/// Cosines between every generated sentence and every reference sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct CsMatrix<T> {
    pub g_sentences: Vec<String>,
    pub r_sentences: Vec<String>,
    /// `values[i][j]` = cosine(embed(g_i), embed(r_j)).
    pub values: Vec<Vec<T>>,
}

impl<T: Scalar> CsMatrix<T> {
    /// Mean over generated sentences of their best reference match.
    pub fn score(&self) -> T {
        if self.values.is_empty() {
            return T::zero();
        }
        let total: T = self
            .values
            .iter()
            .map(|row| row.iter().copied().fold(T::neg_infinity(), T::max))
            .sum();
        total / T::of(self.values.len() as f64)
    }
}

/// Sentences that carry at least one word.
fn scorable_sentences(text: &str) -> Vec<String> {
    split_sentences(text)
        .into_iter()
        .filter(|s| s.chars().any(char::is_alphanumeric))
        .collect()
}

pub fn cs_matrix<T: Scalar>(
    generated: &str,
    reference: &str,
    embedder: &dyn Embedder<T>,
) -> Result<CsMatrix<T>, MetricError> {
    let r_sentences = scorable_sentences(reference);
    if r_sentences.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let g_sentences = scorable_sentences(generated);
    if g_sentences.is_empty() {
        return Ok(CsMatrix {
            g_sentences,
            r_sentences,
            values: Vec::new(),
        });
    }
    let g_vecs = embedder.embed_batch(&g_sentences)?;
    let r_vecs = embedder.embed_batch(&r_sentences)?;
    let values = g_vecs
        .iter()
        .map(|g| r_vecs.iter().map(|r| cosine(g, r)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CsMatrix {
        g_sentences,
        r_sentences,
        values,
    })
}

/// CS score of `generated` against `reference`; 0 (with a warning) when the
/// generated text has no sentences.
pub fn cs_score<T: Scalar>(
    generated: &str,
    reference: &str,
    embedder: &dyn Embedder<T>,
) -> Result<T, MetricError> {
    let matrix = cs_matrix(generated, reference, embedder)?;
    if matrix.g_sentences.is_empty() {
        log::warn!("generated text has no sentences; CS = 0");
    }
    Ok(matrix.score())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub question_id: String,
    pub rouge: f64,
    pub meteor: f64,
    pub bleu: f64,
    pub cs: f64,
}

impl ScoreRow {
    pub fn zero(question_id: impl Into<String>) -> Self {
        Self {
            question_id: question_id.into(),
            rouge: 0.0,
            meteor: 0.0,
            bleu: 0.0,
            cs: 0.0,
        }
    }
}

/// All four scores for one answer. Never fails: an empty answer gives a
/// zero row and a CS failure gives CS = 0, both with a warning.
pub fn score_row<T: Scalar>(
    question_id: &str,
    generated: &str,
    reference: &str,
    embedder: &dyn Embedder<T>,
) -> ScoreRow {
    if generated.trim().is_empty() {
        log::warn!("{question_id}: empty generated text, scoring as zero");
        return ScoreRow::zero(question_id);
    }
    let cs = match cs_score(generated, reference, embedder) {
        Ok(v) => v.as_f64(),
        Err(e) => {
            log::warn!("{question_id}: CS unavailable ({e}), scoring CS as zero");
            0.0
        }
    };
    ScoreRow {
        question_id: question_id.to_owned(),
        rouge: rouge(generated, reference),
        meteor: meteor(generated, reference),
        bleu: bleu(generated, reference, DEFAULT_BLEU_ORDER),
        cs,
    }
}

pub fn write_scores_csv(path: &Path, rows: &[ScoreRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<ScoreRow>, csv::Error> {
    csv::Reader::from_path(path)?.deserialize().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashingEmbedder;

    #[test]
    fn bleu_examples() {
        assert_eq!(bleu("The quick brown fox", "the quick brown fox", 4), 1.0);
        assert!(bleu("alpha beta", "gamma delta", 4) <= 1e-9);
        assert!((bleu("the cat sat", "the cat sat down", 3) - 0.71653).abs() < 1e-5);
        assert_eq!(bleu("", "x", 4), 0.0);
        assert_eq!(bleu("A b c d.  ", "a B c D", 4), bleu("a b c d", "a b c d", 4));
    }

    #[test]
    fn rouge_examples() {
        assert_eq!(rouge("a b c", "a b c"), 1.0);
        assert_eq!(rouge("a b", "c d"), 0.0);
        assert!((rouge("a b c d", "a c d e") - 0.75).abs() < 1e-12);
        assert_eq!(rouge("", "a"), 0.0);
        let s = rouge_scores("a a b", "a b b c");
        assert!((s.rouge_1_recall - 0.5).abs() < 1e-12);
    }

    #[test]
    fn meteor_examples() {
        let six = "one two three four five six";
        let expected = 1.0 - 0.5 * (1.0f64 / 6.0).powi(3);
        assert!((meteor(six, six) - expected).abs() < 1e-12);
        assert!((meteor(six, six) - 0.997_685_2).abs() < 1e-6);
        assert_eq!(meteor("alpha", "beta"), 0.0);
        assert!((meteor("sat cat the", "the cat sat") - 0.5).abs() < 1e-12);
        assert_eq!(meteor("", ""), 0.0);
    }

    #[test]
    fn meteor_stem_stage() {
        assert_eq!(stem("walking"), "walk");
        assert_eq!(stem("cats"), "cat");
        assert_eq!(stem("is"), "is");
        assert_eq!(stem("quickly"), "quick");
        // "walked" only matches "walking" through the stem stage.
        let m = meteor("they walked home", "they walking home");
        assert!((m - (1.0 - 0.5 / 27.0)).abs() < 1e-12);
    }

    #[test]
    fn cs_examples() {
        let e = HashingEmbedder::<f64>::new(4096).unwrap();
        let text = "Delta epsilon zeta. Alpha beta gamma.";
        assert!((cs_score(text, text, &e).unwrap() - 1.0).abs() < 1e-6);
        let refs = "First thing here. Delta epsilon zeta. Other stuff there.";
        assert!((cs_score("Delta epsilon zeta.", refs, &e).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cs_score("...", refs, &e).unwrap(), 0.0);
        assert!(matches!(cs_score("Some text.", " ", &e), Err(MetricError::EmptyReference)));
    }

    #[test]
    fn score_row_identity_and_empty() {
        let e = HashingEmbedder::<f64>::new(256).unwrap();
        let text = "one two three four five six";
        let row = score_row("q1", text, text, &e);
        assert_eq!(row.rouge, 1.0);
        assert_eq!(row.bleu, 1.0);
        assert!((row.meteor - 0.997_685_2).abs() < 1e-6);
        assert!((row.cs - 1.0).abs() < 1e-9);
        assert_eq!(score_row("q2", "  ", text, &e), ScoreRow::zero("q2"));
    }
}
