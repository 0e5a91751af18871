//! Deterministic in-process provider for tests and dry runs.

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use sha2::{Digest, Sha256};

use super::{estimate_tokens, CompletionRequest, Provider, ProviderError, ProviderReply};
use crate::corpus::QueryExample;
use crate::partitioner::{extract_keyword_labels, CLASSIFICATION_HEADER};

pub const DEFAULT_MOCK_DIMENSION: usize = 64;

type Responder = Arc<dyn Fn(&str) -> String + Send + Sync>;

#[derive(Clone)]
pub enum MockBehavior {
    /// Same reply to every prompt.
    Constant(String),
    /// Answers with the gold SQL of whichever known question the prompt ends
    /// with; answers classification prompts with the gold keyword group.
    EchoGold(HashMap<String, String>),
    Script(Responder),
}

impl fmt::Debug for MockBehavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MockBehavior::Constant(s) => f.debug_tuple("Constant").field(s).finish(),
            MockBehavior::EchoGold(m) => write!(f, "EchoGold({} questions)", m.len()),
            MockBehavior::Script(_) => f.write_str("Script"),
        }
    }
}

impl MockBehavior {
    pub fn echo_gold<'a>(examples: impl IntoIterator<Item = &'a QueryExample>) -> Self {
        MockBehavior::EchoGold(
            examples
                .into_iter()
                .map(|ex| (ex.prompt_question(), ex.gold_sql.clone()))
                .collect(),
        )
    }

    pub fn script(f: impl Fn(&str) -> String + Send + Sync + 'static) -> Self {
        MockBehavior::Script(Arc::new(f))
    }
}

/// The text after the last `## Query:` marker, without a trailing step cue.
pub(crate) fn target_question(prompt: &str) -> Option<&str> {
    let idx = prompt.rfind("## Query:")?;
    let rest = prompt[idx + "## Query:".len()..].trim();
    Some(rest.strip_suffix("Let's think step by step.").unwrap_or(rest).trim())
}

#[derive(Debug)]
pub struct MockProvider {
    behavior: MockBehavior,
    dimension: usize,
    completion_calls: AtomicUsize,
    embedding_calls: AtomicUsize,
    failures_pending: AtomicUsize,
}

impl MockProvider {
    pub fn new(behavior: MockBehavior) -> Self {
        MockProvider {
            behavior,
            dimension: DEFAULT_MOCK_DIMENSION,
            completion_calls: AtomicUsize::new(0),
            embedding_calls: AtomicUsize::new(0),
            failures_pending: AtomicUsize::new(0),
        }
    }

    pub fn with_dimension(mut self, dimension: usize) -> Self {
        self.dimension = dimension.max(1);
        self
    }

    /// The next `n` calls fail with a transient error.
    pub fn fail_next(&self, n: usize) {
        self.failures_pending.store(n, Ordering::SeqCst);
    }

    pub fn completion_calls(&self) -> usize {
        self.completion_calls.load(Ordering::SeqCst)
    }

    pub fn embedding_calls(&self) -> usize {
        self.embedding_calls.load(Ordering::SeqCst)
    }

    fn injected_failure(&self) -> bool {
        self.failures_pending
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok()
    }

    fn respond(&self, prompt: &str) -> String {
        match &self.behavior {
            MockBehavior::Constant(s) => s.clone(),
            MockBehavior::Script(f) => f(prompt),
            MockBehavior::EchoGold(gold) => {
                let Some(sql) = target_question(prompt).and_then(|q| gold.get(q)) else {
                    return "I cannot answer this question.".into();
                };
                if prompt.starts_with(CLASSIFICATION_HEADER) {
                    let group = extract_keyword_labels(sql)
                        .map(|l| l.primary.title())
                        .unwrap_or("Simple");
                    format!("Reason: derived from the reference query.\nType: {group} problems")
                } else {
                    format!("Let's think step by step.\n<1> Mock reasoning.\nSQL query: {sql}")
                }
            }
        }
    }
}

impl Provider for MockProvider {
    fn name(&self) -> String {
        format!("mock:{:?}", self.behavior)
    }

    fn complete(&self, request: &CompletionRequest) -> Result<ProviderReply, ProviderError> {
        self.completion_calls.fetch_add(1, Ordering::SeqCst);
        if self.injected_failure() {
            return Err(ProviderError::Transient("injected failure".into()));
        }
        let text = self.respond(&request.prompt);
        Ok(ProviderReply {
            prompt_tokens: Some(estimate_tokens(&request.prompt)),
            output_tokens: Some(estimate_tokens(&text)),
            latency: Some(0.0),
            text,
        })
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        self.embedding_calls.fetch_add(1, Ordering::SeqCst);
        if self.injected_failure() {
            return Err(ProviderError::Transient("injected failure".into()));
        }
        Ok(texts
            .iter()
            .map(|t| mock_embedding(t, self.dimension))
            .collect())
    }
}

/// Unit vector derived from `sha256(text)`: block `j` is
/// `sha256(seed || j as u32 LE)`, read as little-endian `u64` words mapped to
/// `[-1, 1]`.
pub fn mock_embedding(text: &str, dimension: usize) -> Vec<f64> {
    let seed = Sha256::digest(text.as_bytes());
    let mut values = Vec::with_capacity(dimension);
    let mut block = 0u32;
    while values.len() < dimension {
        let mut h = Sha256::new();
        h.update(seed);
        h.update(block.to_le_bytes());
        let bytes = h.finalize();
        for chunk in bytes.chunks_exact(8) {
            if values.len() == dimension {
                break;
            }
            let word = u64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            values.push(word as f64 / u64::MAX as f64 * 2.0 - 1.0);
        }
        block += 1;
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    values.iter().map(|v| v / norm).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_question_strips_cue() {
        let p = "...## Query:\nfirst\n...\n## Query:\nHow many?\nLet's think step by step.\n";
        assert_eq!(target_question(p), Some("How many?"));
        assert_eq!(target_question("nothing"), None);
    }

    #[test]
    fn echo_gold_answers_known_questions() {
        let ex = QueryExample::new("1", "d", "How many?", "SELECT count(*) FROM t");
        let m = MockProvider::new(MockBehavior::echo_gold([&ex]));
        let reply = m.respond("## Tables:\n...\n## Query:\nHow many?\n");
        assert!(reply.ends_with("SQL query: SELECT count(*) FROM t"));
        assert!(m.respond("## Query:\nunknown").contains("cannot"));
        let qgp = format!("{CLASSIFICATION_HEADER} ...\n## Query:\nHow many?\n");
        assert!(m.respond(&qgp).ends_with("Type: Simple problems"));
    }

    #[test]
    fn mock_embedding_is_unit_and_stable() {
        let a = mock_embedding("hello", 64);
        assert_eq!(a.len(), 64);
        let norm: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert_eq!(a, mock_embedding("hello", 64));
        assert_ne!(a, mock_embedding("hello!", 64));
        // a longer vector extends the same stream before normalization
        let long = mock_embedding("hello", 100);
        let ratio = long[0] / a[0];
        assert!((long[5] / a[5] - ratio).abs() < 1e-9);
    }
}
