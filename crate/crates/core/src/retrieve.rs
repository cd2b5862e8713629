//! The retrieval-augmented answering path: embed the question, search the
//! index, pack passing payloads into a token-bounded context, render the
//! prompt, and generate.

use std::collections::HashSet;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::embed::{EmbedError, Embedder};
use crate::generate::{GenError, GenerationClient, GenerationRequest};
use crate::index::{IndexError, IndexKind, IndexedDataset, RetrievalHit};
use crate::scalar::Scalar;
use crate::tokenize::TokenCounter;

pub const DEFAULT_MODEL_MAX_INPUT: usize = 4096;
pub const DEFAULT_ANSWER_RESERVE: usize = 256;
pub const DEFAULT_TEMPLATE: &str = "Context:\n{context}\n\nQuestion: {question}\nAnswer:";

#[derive(Debug, Error)]
pub enum RetrieveError {
    #[error("embedding the question: {0}")]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("prompt needs {needed} tokens but the model accepts {limit}")]
    PromptTooLong { needed: usize, limit: usize },
    #[error("invalid prompt template: {0}")]
    Template(String),
    #[error("generation failed (context of {context_tokens} tokens retained): {source}")]
    Generation {
        context_text: String,
        context_tokens: usize,
        #[source]
        source: GenError,
    },
}

/// Model input limits used to size the context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Budgets {
    pub model_max_input: usize,
    /// Tokens kept free for the generated answer.
    pub answer_reserve: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Self {
            model_max_input: DEFAULT_MODEL_MAX_INPUT,
            answer_reserve: DEFAULT_ANSWER_RESERVE,
        }
    }
}

/// Prompt template with `{context}` and `{question}` placeholders. When the
/// context is empty the blank-line-delimited block holding `{context}` is
/// dropped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    with_context: String,
    without_context: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::new(DEFAULT_TEMPLATE).expect("default template is valid")
    }
}

impl PromptTemplate {
    pub fn new(text: &str) -> Result<Self, RetrieveError> {
        if text.matches("{context}").count() != 1 || text.matches("{question}").count() != 1 {
            return Err(RetrieveError::Template(
                "template needs exactly one {context} and one {question}".into(),
            ));
        }
        let blocks: Vec<&str> = text.split("\n\n").collect();
        let without: Vec<&str> = blocks
            .iter()
            .copied()
            .filter(|b| !b.contains("{context}"))
            .collect();
        let without_context = without.join("\n\n");
        if !without_context.contains("{question}") {
            return Err(RetrieveError::Template(
                "{question} must not share a block with {context}".into(),
            ));
        }
        Ok(Self {
            with_context: text.to_owned(),
            without_context,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, RetrieveError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RetrieveError::Template(format!("{}: {e}", path.display())))?;
        Self::new(&text)
    }

    pub fn render(&self, context: &str, question: &str) -> String {
        if context.is_empty() {
            self.without_context.replace("{question}", question)
        } else {
            self.with_context
                .replace("{context}", context)
                .replace("{question}", question)
        }
    }

    /// Tokens the template itself contributes when a context is present.
    pub fn overhead(&self, counter: &dyn TokenCounter) -> usize {
        counter.count(
            &self
                .with_context
                .replace("{context}", "")
                .replace("{question}", ""),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PackedContext<T> {
    pub text: String,
    /// Hits whose payloads made it in, in packing order.
    pub included: Vec<RetrievalHit<T>>,
    pub truncated: bool,
    pub token_count: usize,
}

impl<T> PackedContext<T> {
    pub fn empty() -> Self {
        Self {
            text: String::new(),
            included: Vec::new(),
            truncated: false,
            token_count: 0,
        }
    }
}

/// Joins hit payloads with newlines, best first, until `budget` tokens.
///
/// Each join is charged one token on top of the payload counts, which keeps
/// the result within budget for any counter honouring the concatenation
/// bound. The first payload that does not fit is cut to the remaining
/// budget and packing stops. Repeated payloads are packed once.
pub fn pack_context<T: Scalar>(
    hits: &[RetrievalHit<T>],
    ds: &IndexedDataset<T>,
    counter: &dyn TokenCounter,
    budget: usize,
) -> PackedContext<T> {
    let mut parts: Vec<&str> = Vec::new();
    let mut included = Vec::new();
    let mut seen = HashSet::new();
    let mut used = 0usize;
    let mut truncated = false;
    for hit in hits {
        let payload = ds.entries[hit.entry].payload_text.as_str();
        if !seen.insert(payload) {
            continue;
        }
        let sep = usize::from(!parts.is_empty());
        let cost = counter.count(payload);
        if used + sep + cost <= budget {
            parts.push(payload);
            included.push(*hit);
            used += sep + cost;
            continue;
        }
        truncated = true;
        let room = budget.saturating_sub(used + sep);
        let cut = counter.truncate(payload, room);
        if room > 0 && !cut.is_empty() {
            parts.push(cut);
            included.push(*hit);
        }
        break;
    }
    let mut text = parts.join("\n");
    if counter.count(&text) > budget {
        text = counter.truncate(&text, budget).to_owned();
        truncated = true;
    }
    PackedContext {
        token_count: counter.count(&text),
        text,
        included,
        truncated,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RagAnswer<T> {
    pub question: String,
    pub context: PackedContext<T>,
    pub prompt: String,
    pub generated_text: String,
    pub threshold: T,
    pub dataset_kind: Option<IndexKind>,
}

/// Everything the answering path needs besides the question itself.
pub struct RagPipeline<'a, T> {
    pub index: &'a IndexedDataset<T>,
    pub embedder: &'a dyn Embedder<T>,
    pub generator: &'a dyn GenerationClient,
    pub counter: &'a dyn TokenCounter,
    pub budgets: Budgets,
    pub template: PromptTemplate,
}

/// Prompt without any context block.
pub fn context_free_prompt(
    question: &str,
    template: &PromptTemplate,
    counter: &dyn TokenCounter,
    budgets: Budgets,
) -> Result<String, RetrieveError> {
    let prompt = template.render("", question);
    let needed = counter.count(&prompt) + budgets.answer_reserve;
    if needed > budgets.model_max_input {
        return Err(RetrieveError::PromptTooLong {
            needed,
            limit: budgets.model_max_input,
        });
    }
    Ok(prompt)
}

pub fn generation_request(prompt: String, budgets: Budgets) -> GenerationRequest {
    GenerationRequest {
        max_new_tokens: budgets.answer_reserve.max(1),
        ..GenerationRequest::greedy(prompt)
    }
}

impl<'a, T: Scalar> RagPipeline<'a, T> {
    /// Context budget left after the template, the question and the answer
    /// reserve.
    pub fn context_budget(&self, question: &str) -> usize {
        self.budgets
            .model_max_input
            .saturating_sub(self.template.overhead(self.counter))
            .saturating_sub(self.counter.count(question))
            .saturating_sub(self.budgets.answer_reserve)
    }

    /// Retrieval and packing without generation.
    pub fn build_prompt(
        &self,
        question: &str,
        threshold: T,
    ) -> Result<(PackedContext<T>, String), RetrieveError> {
        let query = self.embedder.embed_one(question)?;
        let hits = self.index.search(&query, threshold)?;
        let limit = self.budgets.model_max_input;
        let mut budget = self.context_budget(question);
        loop {
            let context = if budget == 0 {
                PackedContext {
                    truncated: !hits.is_empty(),
                    ..PackedContext::empty()
                }
            } else {
                pack_context(&hits, self.index, self.counter, budget)
            };
            let prompt = self.template.render(&context.text, question);
            let needed = self.counter.count(&prompt) + self.budgets.answer_reserve;
            if needed <= limit {
                return Ok((context, prompt));
            }
            if context.text.is_empty() {
                return Err(RetrieveError::PromptTooLong { needed, limit });
            }
            // Rendering cost more than the accounting predicted; shrink.
            budget = context.token_count.saturating_sub(needed - limit);
        }
    }

    pub fn answer(&self, question: &str, threshold: T) -> Result<RagAnswer<T>, RetrieveError> {
        let (context, prompt) = self.build_prompt(question, threshold)?;
        let request = generation_request(prompt.clone(), self.budgets);
        let generated_text =
            self.generator
                .generate(&request)
                .map_err(|source| RetrieveError::Generation {
                    context_text: context.text.clone(),
                    context_tokens: context.token_count,
                    source,
                })?;
        Ok(RagAnswer {
            question: question.to_owned(),
            context,
            prompt,
            generated_text,
            threshold,
            dataset_kind: Some(self.index.kind),
        })
    }
}
