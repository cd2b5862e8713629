//! Q&A dataset construction: question generation per paragraph with
//! deduplication, dataset assembly, and the association-preserving
//! train/validation split.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Paragraph;
use crate::embed::fnv1a64;
use crate::http::{EndpointConfig, HttpError, JsonClient};
use crate::par::map_bounded;

pub const QUESTIONS_PER_PARAGRAPH: usize = 5;
pub const DEFAULT_QG_INFLIGHT: usize = 4;
pub const DEFAULT_VALIDATION_RATIO: f64 = 0.20;
/// Stands in for a paragraph on which the generator produced nothing usable.
pub const FALLBACK_QUESTION: &str = "What does the following passage describe?";

#[derive(Debug, Error)]
pub enum QaGenError {
    #[error("question generator failed for {doc_id}#{ordinal}: {source}")]
    Client {
        doc_id: String,
        ordinal: usize,
        #[source]
        source: QgError,
    },
    #[error("k must be at least 1")]
    InvalidK,
    #[error("no paragraphs given")]
    NoParagraphs,
    #[error("question generation failed for every paragraph")]
    AllSkipped,
    #[error("split ratio {0} is outside (0, 1)")]
    InvalidRatio(f64),
    #[error("no paragraph has two or more questions")]
    NoEligiblePairs,
}

impl QaGenError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, QaGenError::Client { source, .. } if source.is_retryable())
    }
}

#[derive(Debug, Error)]
pub enum QgError {
    #[error(transparent)]
    Http(#[from] HttpError),
    #[error("{0}")]
    Other(String),
}

impl QgError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, QgError::Http(e) if e.is_retryable())
    }
}

/// A generated question bound to the paragraph that answers it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAPair {
    pub question: String,
    pub doc_id: String,
    pub paragraph_ordinal: usize,
    pub answer_text: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub synthetic: bool,
}

impl QAPair {
    pub fn paragraph_key(&self) -> (&str, usize) {
        (&self.doc_id, self.paragraph_ordinal)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QADataset {
    pub name: String,
    pub pairs: Vec<QAPair>,
}

impl QADataset {
    pub fn new(name: impl Into<String>, pairs: Vec<QAPair>) -> Self {
        Self {
            name: name.into(),
            pairs,
        }
    }

    /// (distinct paragraphs, questions)
    pub fn counts(&self) -> (usize, usize) {
        let paragraphs: HashSet<_> = self.pairs.iter().map(QAPair::paragraph_key).collect();
        (paragraphs.len(), self.pairs.len())
    }
}

/// Produces up to `k` questions about a passage.
pub trait QuestionGenClient: Send + Sync {
    fn generate(&self, text: &str, k: usize) -> Result<Vec<String>, QgError>;
}

#[derive(Serialize)]
struct QgRequest<'a> {
    text: &'a str,
    k: usize,
}

#[derive(Deserialize)]
struct QgResponse {
    questions: Vec<String>,
}

/// Client for a `POST /generate_questions` service.
#[derive(Debug, Clone)]
pub struct RemoteQuestionGenerator {
    client: JsonClient,
}

impl RemoteQuestionGenerator {
    pub fn new(endpoint: EndpointConfig) -> Result<Self, HttpError> {
        Ok(Self {
            client: JsonClient::new(endpoint)?,
        })
    }
}

impl QuestionGenClient for RemoteQuestionGenerator {
    fn generate(&self, text: &str, k: usize) -> Result<Vec<String>, QgError> {
        let resp: QgResponse = self
            .client
            .post_json("/generate_questions", &QgRequest { text, k })?;
        Ok(resp.questions)
    }
}

/// Offline generator: each question quotes a six-word window of the
/// passage, window offsets drawn from the seed and the passage hash.
#[derive(Debug, Clone, Copy)]
pub struct WindowQuestionGenerator {
    pub seed: u64,
}

impl WindowQuestionGenerator {
    const WINDOW: usize = 6;

    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

impl QuestionGenClient for WindowQuestionGenerator {
    fn generate(&self, text: &str, k: usize) -> Result<Vec<String>, QgError> {
        let words: Vec<String> = text
            .split_whitespace()
            .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
            .filter(|w| !w.is_empty())
            .collect();
        if words.is_empty() {
            return Ok(Vec::new());
        }
        let width = Self::WINDOW.min(words.len());
        let windows = words.len() - width + 1;
        let base = fnv1a64(text.as_bytes()) ^ self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        Ok((0..k as u64)
            .map(|i| {
                let offset = (base.wrapping_add(i.wrapping_mul(3)) % windows as u64) as usize;
                format!("What about {}?", words[offset..offset + width].join(" "))
            })
            .collect())
    }
}

/// Dedup key: lowercase, whitespace collapsed, terminal `?` removed.
pub fn normalize_question(q: &str) -> String {
    let collapsed = q.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    collapsed.trim_end_matches('?').trim_end().to_owned()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedQuestions {
    pub questions: Vec<String>,
    /// Set when the fallback question replaced an empty generation.
    pub synthetic: bool,
}

/// Deduplicated questions for one passage, at most `k` and at least one.
pub fn questions_for_text(
    text: &str,
    client: &dyn QuestionGenClient,
    k: usize,
) -> Result<GeneratedQuestions, QgError> {
    let raw = client.generate(text, k)?;
    let mut seen = HashSet::new();
    let mut questions = Vec::new();
    for q in raw {
        let key = normalize_question(&q);
        if key.is_empty() || !seen.insert(key) {
            continue;
        }
        questions.push(q.trim().to_owned());
        if questions.len() == k {
            break;
        }
    }
    if questions.is_empty() {
        return Ok(GeneratedQuestions {
            questions: vec![FALLBACK_QUESTION.to_owned()],
            synthetic: true,
        });
    }
    Ok(GeneratedQuestions {
        questions,
        synthetic: false,
    })
}

pub fn generate_questions(
    paragraph: &Paragraph,
    client: &dyn QuestionGenClient,
    k: usize,
) -> Result<GeneratedQuestions, QaGenError> {
    if k == 0 {
        return Err(QaGenError::InvalidK);
    }
    questions_for_text(&paragraph.text, client, k).map_err(|source| QaGenError::Client {
        doc_id: paragraph.doc_id.clone(),
        ordinal: paragraph.ordinal,
        source,
    })
}

#[derive(Debug, Clone)]
pub struct QaBuild {
    pub dataset: QADataset,
    /// (doc_id, ordinal, reason) of paragraphs whose generation failed.
    pub skipped: Vec<(String, usize, String)>,
}

/// Generates questions for every paragraph with at most `max_inflight`
/// concurrent client calls; output is ordered like the input.
pub fn build_qa_dataset(
    name: &str,
    paragraphs: &[Paragraph],
    client: &dyn QuestionGenClient,
    k: usize,
    max_inflight: usize,
) -> Result<QaBuild, QaGenError> {
    if paragraphs.is_empty() {
        return Err(QaGenError::NoParagraphs);
    }
    if k == 0 {
        return Err(QaGenError::InvalidK);
    }
    let results = map_bounded(paragraphs, max_inflight, |p| generate_questions(p, client, k));
    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    for (paragraph, result) in paragraphs.iter().zip(results) {
        match result {
            Ok(generated) => pairs.extend(generated.questions.into_iter().map(|question| QAPair {
                question,
                doc_id: paragraph.doc_id.clone(),
                paragraph_ordinal: paragraph.ordinal,
                answer_text: paragraph.text.clone(),
                synthetic: generated.synthetic,
            })),
            Err(err) => {
                log::warn!("skipping paragraph: {err}");
                skipped.push((paragraph.doc_id.clone(), paragraph.ordinal, err.to_string()));
            }
        }
    }
    if skipped.len() == paragraphs.len() {
        return Err(QaGenError::AllSkipped);
    }
    Ok(QaBuild {
        dataset: QADataset::new(name, pairs),
        skipped,
    })
}

#[derive(Debug, Clone)]
pub struct TrainValidation {
    pub train: QADataset,
    pub validation: QADataset,
    /// The eligible pool was smaller than the requested validation size.
    pub pool_exhausted: bool,
}

/// Moves `round(ratio × |pairs|)` pairs into validation, drawn uniformly
/// (seeded) from paragraphs that own two or more questions, never taking a
/// paragraph's last remaining question out of train.
pub fn split_train_validation(
    ds: &QADataset,
    ratio: f64,
    seed: u64,
) -> Result<TrainValidation, QaGenError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(QaGenError::InvalidRatio(ratio));
    }
    let mut group_of = Vec::with_capacity(ds.pairs.len());
    let mut sizes: BTreeMap<(&str, usize), usize> = BTreeMap::new();
    for pair in &ds.pairs {
        *sizes.entry(pair.paragraph_key()).or_default() += 1;
        group_of.push(pair.paragraph_key());
    }
    let mut candidates: Vec<usize> = (0..ds.pairs.len())
        .filter(|&i| sizes[&group_of[i]] >= 2)
        .collect();
    if candidates.is_empty() {
        return Err(QaGenError::NoEligiblePairs);
    }
    let pool: usize = sizes.values().filter(|&&n| n >= 2).map(|n| n - 1).sum();
    let target = (ratio * ds.pairs.len() as f64).round() as usize;
    let pool_exhausted = target > pool;
    if pool_exhausted {
        log::warn!(
            "{}: eligible pool of {pool} pairs is smaller than the requested {target}; using all of it",
            ds.name
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    candidates.shuffle(&mut rng);
    let mut remaining = sizes.clone();
    let mut selected = vec![false; ds.pairs.len()];
    let mut taken = 0;
    for i in candidates {
        if taken == target.min(pool) {
            break;
        }
        let left = remaining.get_mut(&group_of[i]).expect("group was counted");
        if *left >= 2 {
            *left -= 1;
            selected[i] = true;
            taken += 1;
        }
    }

    let (mut train, mut validation) = (Vec::new(), Vec::new());
    for (pair, &is_val) in ds.pairs.iter().zip(&selected) {
        if is_val {
            validation.push(pair.clone());
        } else {
            train.push(pair.clone());
        }
    }
    Ok(TrainValidation {
        train: QADataset::new(format!("{}-train", ds.name), train),
        validation: QADataset::new(format!("{}-validation", ds.name), validation),
        pool_exhausted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    struct Fixed(Vec<&'static str>);
    impl QuestionGenClient for Fixed {
        fn generate(&self, _: &str, _: usize) -> Result<Vec<String>, QgError> {
            Ok(self.0.iter().map(|s| s.to_string()).collect())
        }
    }

    /// Returns the number of distinct questions named by the paragraph text.
    struct ByText;
    impl QuestionGenClient for ByText {
        fn generate(&self, text: &str, k: usize) -> Result<Vec<String>, QgError> {
            let n: usize = text.parse().map_err(|_| QgError::Other("bad".into()))?;
            Ok((0..k).map(|i| format!("Question {}?", i % n)).collect())
        }
    }

    fn para(doc: &str, ordinal: usize, text: &str) -> Paragraph {
        Paragraph {
            doc_id: doc.into(),
            ordinal,
            text: text.into(),
            token_count: 1,
        }
    }

    #[test]
    fn dedup_by_normalized_form() {
        let p = para("d", 0, "text");
        let out = generate_questions(&p, &Fixed(vec!["Q1", "q1 ", "Q2"]), 5).unwrap();
        assert_eq!(out.questions, vec!["Q1", "Q2"]);
        assert!(!out.synthetic);

        let out = generate_questions(&p, &Fixed(vec!["A?", "B", "C", "D", "E"]), 5).unwrap();
        assert_eq!(out.questions.len(), 5);

        let out = generate_questions(&p, &Fixed(vec!["What  is IT?", "what is it"]), 5).unwrap();
        assert_eq!(out.questions, vec!["What  is IT?"]);
    }

    #[test]
    fn empty_generation_falls_back() {
        let p = para("d", 0, "text");
        let out = generate_questions(&p, &Fixed(vec![]), 5).unwrap();
        assert_eq!(out.questions, vec![FALLBACK_QUESTION]);
        assert!(out.synthetic);
        let out = generate_questions(&p, &Fixed(vec!["  ", "?"]), 5).unwrap();
        assert!(out.synthetic);
        assert!(matches!(generate_questions(&p, &Fixed(vec![]), 0), Err(QaGenError::InvalidK)));
    }

    #[test]
    fn dataset_counts_sum_mock_yields() {
        let paras = vec![para("d", 0, "5"), para("d", 1, "3"), para("d", 2, "1")];
        let build = build_qa_dataset("t", &paras, &ByText, 5, 4).unwrap();
        assert_eq!(build.dataset.counts(), (3, 9));
        assert!(build.skipped.is_empty());

        let one = build_qa_dataset("t", &paras[..1], &ByText, 5, 1).unwrap();
        let (p, q) = one.dataset.counts();
        assert_eq!(p, 1);
        assert!((1..=5).contains(&q));
    }

    #[test]
    fn failures_skip_paragraphs_until_all_fail() {
        let paras = vec![para("d", 0, "2"), para("d", 1, "oops")];
        let build = build_qa_dataset("t", &paras, &ByText, 5, 2).unwrap();
        assert_eq!(build.dataset.counts(), (1, 2));
        assert_eq!(build.skipped.len(), 1);
        assert_eq!(build.skipped[0].1, 1);
        assert!(matches!(
            build_qa_dataset("t", &paras[1..], &ByText, 5, 2),
            Err(QaGenError::AllSkipped)
        ));
        assert!(matches!(build_qa_dataset("t", &[], &ByText, 5, 2), Err(QaGenError::NoParagraphs)));
    }

    #[test]
    fn window_generator_is_deterministic() {
        let g = WindowQuestionGenerator::new(7);
        let text = "Maize yields depend on nitrogen timing and soil moisture across seasons.";
        let a = g.generate(text, 5).unwrap();
        assert_eq!(a, g.generate(text, 5).unwrap());
        assert_eq!(a.len(), 5);
        assert!(a.iter().all(|q| q.starts_with("What about ") && q.ends_with('?')));
        assert!(g.generate("", 5).unwrap().is_empty());
    }

    fn pairs_over(groups: &[usize]) -> QADataset {
        let pairs = groups
            .iter()
            .enumerate()
            .flat_map(|(p, &n)| {
                (0..n).map(move |q| QAPair {
                    question: format!("p{p} q{q}"),
                    doc_id: "doc".into(),
                    paragraph_ordinal: p,
                    answer_text: format!("paragraph {p}"),
                    synthetic: false,
                })
            })
            .collect();
        QADataset::new("ds", pairs)
    }

    fn check_split(ds: &QADataset, split: &TrainValidation) {
        let mut all: Vec<_> = split.train.pairs.iter().chain(&split.validation.pairs).cloned().collect();
        all.sort_by(|a, b| a.question.cmp(&b.question));
        let mut orig = ds.pairs.clone();
        orig.sort_by(|a, b| a.question.cmp(&b.question));
        assert_eq!(all, orig, "train and validation partition the input");
        let train_keys: HashSet<_> = split.train.pairs.iter().map(QAPair::paragraph_key).collect();
        for v in &split.validation.pairs {
            assert!(train_keys.contains(&v.paragraph_key()));
        }
    }

    #[test]
    fn split_small_fixture() {
        let ds = pairs_over(&[2, 2, 2, 2, 2]);
        for seed in 0..20 {
            let split = split_train_validation(&ds, 0.2, seed).unwrap();
            assert_eq!(split.validation.pairs.len(), 2);
            let distinct: HashSet<_> = split.validation.pairs.iter().map(|p| p.paragraph_ordinal).collect();
            assert_eq!(distinct.len(), 2);
            assert!(!split.pool_exhausted);
            check_split(&ds, &split);
        }
        let a = split_train_validation(&ds, 0.2, 11).unwrap();
        let b = split_train_validation(&ds, 0.2, 11).unwrap();
        assert_eq!(a.validation, b.validation);
    }

    #[test]
    fn split_errors_and_short_pool() {
        let ones = pairs_over(&[1, 1, 1]);
        assert!(matches!(split_train_validation(&ones, 0.2, 1), Err(QaGenError::NoEligiblePairs)));
        assert!(matches!(split_train_validation(&ones, 1.0, 1), Err(QaGenError::InvalidRatio(_))));
        assert!(matches!(split_train_validation(&ones, 0.0, 1), Err(QaGenError::InvalidRatio(_))));

        // Pool of 1 eligible pair out of 12, 20% requests 2.
        let ds = pairs_over(&[2, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1]);
        let split = split_train_validation(&ds, 0.2, 3).unwrap();
        assert!(split.pool_exhausted);
        assert_eq!(split.validation.pairs.len(), 1);
        check_split(&ds, &split);
    }

    #[test]
    fn split_ratio_on_table_shaped_data() {
        // Paragraph sizes cycle through 1..=5 questions, 28790 / 7058 ≈ 4.08 per paragraph.
        let sizes: Vec<usize> = (0..1000).map(|i| [5, 4, 5, 3, 4, 5, 2, 5, 4, 4][i % 10]).collect();
        let ds = pairs_over(&sizes);
        let split = split_train_validation(&ds, 0.2, 42).unwrap();
        let n = ds.pairs.len() as f64;
        let frac = split.validation.pairs.len() as f64 / n;
        assert!((frac - 0.2).abs() <= 1.0 / n);
        check_split(&ds, &split);
        let per_paragraph: HashMap<_, usize> = split.train.pairs.iter().fold(HashMap::new(), |mut m, p| {
            *m.entry(p.paragraph_ordinal).or_default() += 1;
            m
        });
        assert_eq!(per_paragraph.len(), 1000);
    }
}
