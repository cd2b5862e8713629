//! Token counting contract and the baseline whitespace/punctuation counter.

use std::sync::Arc;

/// Counts tokens of a text under some model vocabulary.
///
/// Implementations must be deterministic, return 0 for the empty string,
/// and satisfy `count(a + " " + b) <= count(a) + count(b) + 1`. Prefix
/// monotonicity (`count` never decreases as a prefix grows) is assumed by
/// the default [`TokenCounter::truncate`].
pub trait TokenCounter: Send + Sync {
    fn name(&self) -> &str;

    fn count(&self, text: &str) -> usize;

    /// Longest prefix of `text` holding at most `max_tokens` tokens,
    /// trailing whitespace removed.
    fn truncate<'a>(&self, text: &'a str, max_tokens: usize) -> &'a str {
        if self.count(text) <= max_tokens {
            return text.trim_end();
        }
        let cuts: Vec<usize> = text
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(text.len()))
            .collect();
        let (mut lo, mut hi) = (0usize, cuts.len() - 1);
        while lo < hi {
            let mid = (lo + hi).div_ceil(2);
            if self.count(&text[..cuts[mid]]) <= max_tokens {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        text[..cuts[lo]].trim_end()
    }
}

/// Splits on whitespace; a run of alphanumeric characters is one token and
/// every other non-whitespace character is a token of its own.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespacePunctCounter;

impl WhitespacePunctCounter {
    /// Byte spans of every token, in order.
    pub fn spans(text: &str) -> Vec<(usize, usize)> {
        let mut spans = Vec::new();
        let mut word_start: Option<usize> = None;
        for (i, ch) in text.char_indices() {
            if ch.is_alphanumeric() {
                if word_start.is_none() {
                    word_start = Some(i);
                }
                continue;
            }
            if let Some(start) = word_start.take() {
                spans.push((start, i));
            }
            if !ch.is_whitespace() {
                spans.push((i, i + ch.len_utf8()));
            }
        }
        if let Some(start) = word_start {
            spans.push((start, text.len()));
        }
        spans
    }
}

impl TokenCounter for WhitespacePunctCounter {
    fn name(&self) -> &str {
        "whitespace-punct"
    }

    fn count(&self, text: &str) -> usize {
        Self::spans(text).len()
    }

    fn truncate<'a>(&self, text: &'a str, max_tokens: usize) -> &'a str {
        let spans = Self::spans(text);
        if spans.len() <= max_tokens {
            return text.trim_end();
        }
        if max_tokens == 0 {
            return "";
        }
        &text[..spans[max_tokens - 1].1]
    }
}

/// The set of registered counters; budgets are enforced against the
/// maximum over all of them.
#[derive(Clone)]
pub struct CounterSet {
    counters: Vec<Arc<dyn TokenCounter>>,
}

impl CounterSet {
    pub fn new(counters: Vec<Arc<dyn TokenCounter>>) -> Self {
        Self { counters }
    }

    pub fn baseline() -> Self {
        Self::new(vec![Arc::new(WhitespacePunctCounter)])
    }

    pub fn is_empty(&self) -> bool {
        self.counters.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.counters.iter().map(|c| c.name()).collect()
    }

    pub fn max_count(&self, text: &str) -> usize {
        self.counters.iter().map(|c| c.count(text)).max().unwrap_or(0)
    }

    /// Longest prefix whose count is within `max_tokens` under every counter.
    pub fn truncate<'a>(&self, text: &'a str, max_tokens: usize) -> &'a str {
        let mut cut = text.trim_end();
        loop {
            let before = cut.len();
            for counter in &self.counters {
                cut = counter.truncate(cut, max_tokens);
            }
            if cut.len() == before || self.max_count(cut) <= max_tokens {
                return cut;
            }
        }
    }
}

impl std::fmt::Debug for CounterSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.names()).finish()
    }
}
