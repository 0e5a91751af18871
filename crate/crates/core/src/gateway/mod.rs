//! Chat-completion and embedding access behind one handle: budget checks,
//! persistent caching, retry with exponential backoff, a bound on in-flight
//! provider calls, and token accounting.

mod cache;
mod http;
mod mock;

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};
use std::thread;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{digest_hex, CachedCompletion, ResponseCache};
pub use http::OpenAiProvider;
pub use mock::{mock_embedding, MockBehavior, MockProvider, DEFAULT_MOCK_DIMENSION};

/// Fraction of the context window held back because token counts are estimated.
pub const SAFETY_MARGIN: f64 = 0.10;

/// `ceil(chars / 4)`.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// Tokens a request may actually use out of `context_limit` after the safety margin.
pub fn usable_context(context_limit: usize) -> usize {
    context_limit - (context_limit as f64 * SAFETY_MARGIN).ceil() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_output_tokens: usize,
    pub context_limit: usize,
}

impl CompletionRequest {
    pub fn cache_key(&self) -> String {
        digest_hex(&[
            &self.model,
            &self.prompt,
            &format!("{:?}", self.temperature),
            &self.max_output_tokens.to_string(),
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub prompt_tokens: usize,
    pub output_tokens: usize,
    pub from_cache: bool,
    /// Seconds.
    pub latency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        EmbeddingVector { values }
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("transient provider failure: {0}")]
    Transient(String),
    #[error("provider failure: {0}")]
    Fatal(String),
    #[error("API key missing")]
    AuthMissing,
}

/// What a provider hands back for one completion; absent counts are estimated.
#[derive(Debug, Clone, Default)]
pub struct ProviderReply {
    pub text: String,
    pub prompt_tokens: Option<usize>,
    pub output_tokens: Option<usize>,
    /// Providers that simulate time report it here; otherwise wall clock is used.
    pub latency: Option<f64>,
}

pub trait Provider: Send + Sync {
    fn name(&self) -> String;
    fn complete(&self, request: &CompletionRequest) -> Result<ProviderReply, ProviderError>;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError>;
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("prompt needs ~{estimated} tokens plus {max_output} output, over the usable {usable} of a {limit}-token context")]
    ContextBudgetExceeded {
        estimated: usize,
        max_output: usize,
        usable: usize,
        limit: usize,
    },
    #[error("provider still failing after {attempts} attempts: {last_error}")]
    ProviderExhausted { attempts: usize, last_error: String },
    #[error("API key missing")]
    AuthMissing,
    #[error("embedding dimension {got} differs from pinned {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("provider returned an all-zero embedding")]
    ZeroEmbedding,
    #[error("embedding request with no texts")]
    EmptyBatch,
    #[error("provider error: {0}")]
    Provider(String),
    #[error("cache I/O: {0}")]
    Cache(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub parallelism: usize,
    pub max_retries: usize,
    pub backoff_base: Duration,
    pub embedding_model: String,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            parallelism: 4,
            max_retries: 3,
            backoff_base: Duration::from_millis(500),
            embedding_model: "text-embedding-ada-002".into(),
        }
    }
}

/// Counting semaphore.
struct Limiter {
    permits: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(n: usize) -> Self {
        Limiter {
            permits: Mutex::new(n.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut p = self.permits.lock();
        while *p == 0 {
            self.freed.wait(&mut p);
        }
        *p -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock() += 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayStats {
    pub completion_requests: usize,
    pub completion_cache_hits: usize,
    pub provider_completion_calls: usize,
    pub embedding_texts: usize,
    pub provider_embedding_calls: usize,
    pub prompt_tokens: usize,
    pub output_tokens: usize,
}

#[derive(Default)]
struct Counters {
    completion_requests: AtomicUsize,
    completion_cache_hits: AtomicUsize,
    provider_completion_calls: AtomicUsize,
    embedding_texts: AtomicUsize,
    provider_embedding_calls: AtomicUsize,
    prompt_tokens: AtomicUsize,
    output_tokens: AtomicUsize,
}

/// Shareable across threads.
pub struct Gateway {
    provider: Arc<dyn Provider>,
    cache: Option<ResponseCache>,
    config: GatewayConfig,
    limiter: Limiter,
    dimension: OnceLock<usize>,
    counters: Counters,
}

impl Gateway {
    pub fn new(provider: Arc<dyn Provider>, config: GatewayConfig) -> Self {
        Gateway {
            limiter: Limiter::new(config.parallelism),
            provider,
            cache: None,
            config,
            dimension: OnceLock::new(),
            counters: Counters::default(),
        }
    }

    pub fn with_cache_file(mut self, path: &Path) -> Result<Self, GatewayError> {
        self.cache = Some(ResponseCache::open(path)?);
        Ok(self)
    }

    pub fn cache(&self) -> Option<&ResponseCache> {
        self.cache.as_ref()
    }

    pub fn provider_name(&self) -> String {
        self.provider.name()
    }

    pub fn embedding_dimension(&self) -> Option<usize> {
        self.dimension.get().copied()
    }

    pub fn stats(&self) -> GatewayStats {
        let c = &self.counters;
        GatewayStats {
            completion_requests: c.completion_requests.load(Ordering::SeqCst),
            completion_cache_hits: c.completion_cache_hits.load(Ordering::SeqCst),
            provider_completion_calls: c.provider_completion_calls.load(Ordering::SeqCst),
            embedding_texts: c.embedding_texts.load(Ordering::SeqCst),
            provider_embedding_calls: c.provider_embedding_calls.load(Ordering::SeqCst),
            prompt_tokens: c.prompt_tokens.load(Ordering::SeqCst),
            output_tokens: c.output_tokens.load(Ordering::SeqCst),
        }
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<Completion, GatewayError> {
        let estimated = estimate_tokens(&request.prompt);
        let usable = usable_context(request.context_limit);
        if estimated + request.max_output_tokens > usable {
            return Err(GatewayError::ContextBudgetExceeded {
                estimated,
                max_output: request.max_output_tokens,
                usable,
                limit: request.context_limit,
            });
        }
        self.counters.completion_requests.fetch_add(1, Ordering::SeqCst);
        let key = request.cache_key();
        let started = Instant::now();
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get_completion(&key)) {
            self.counters.completion_cache_hits.fetch_add(1, Ordering::SeqCst);
            self.account(hit.prompt_tokens, hit.output_tokens);
            return Ok(Completion {
                text: hit.text,
                prompt_tokens: hit.prompt_tokens,
                output_tokens: hit.output_tokens,
                from_cache: true,
                latency: started.elapsed().as_secs_f64(),
            });
        }

        let reply = self.with_retries(|| {
            self.counters
                .provider_completion_calls
                .fetch_add(1, Ordering::SeqCst);
            self.provider.complete(request)
        })?;
        let completion = CachedCompletion {
            prompt_tokens: reply.prompt_tokens.unwrap_or(estimated),
            output_tokens: reply
                .output_tokens
                .unwrap_or_else(|| estimate_tokens(&reply.text)),
            latency: reply
                .latency
                .unwrap_or_else(|| started.elapsed().as_secs_f64()),
            text: reply.text,
        };
        if let Some(cache) = &self.cache {
            cache.put_completion(&key, &request.model, request.prompt.len(), &completion)?;
        }
        self.account(completion.prompt_tokens, completion.output_tokens);
        Ok(Completion {
            text: completion.text,
            prompt_tokens: completion.prompt_tokens,
            output_tokens: completion.output_tokens,
            from_cache: false,
            latency: completion.latency,
        })
    }

    fn account(&self, prompt: usize, output: usize) {
        self.counters.prompt_tokens.fetch_add(prompt, Ordering::SeqCst);
        self.counters.output_tokens.fetch_add(output, Ordering::SeqCst);
    }

    /// Runs `call` under a concurrency permit, retrying transient failures.
    fn with_retries<T>(
        &self,
        mut call: impl FnMut() -> Result<T, ProviderError>,
    ) -> Result<T, GatewayError> {
        let attempts = self.config.max_retries + 1;
        let mut last_error = String::new();
        for attempt in 0..attempts {
            let outcome = {
                let _permit = self.limiter.acquire();
                call()
            };
            match outcome {
                Ok(v) => return Ok(v),
                Err(ProviderError::Transient(msg)) => {
                    tracing::debug!(attempt, %msg, "transient provider failure");
                    last_error = msg;
                    if attempt + 1 < attempts {
                        thread::sleep(self.config.backoff_base * 2u32.saturating_pow(attempt as u32));
                    }
                }
                Err(ProviderError::Fatal(msg)) => return Err(GatewayError::Provider(msg)),
                Err(ProviderError::AuthMissing) => return Err(GatewayError::AuthMissing),
            }
        }
        Err(GatewayError::ProviderExhausted {
            attempts,
            last_error,
        })
    }

    /// One vector per input, in order. Identical texts share one vector.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::EmptyBatch);
        }
        self.counters
            .embedding_texts
            .fetch_add(texts.len(), Ordering::SeqCst);
        let model = &self.config.embedding_model;
        let keys: Vec<String> = texts
            .iter()
            .map(|t| digest_hex(&["embed", model, t]))
            .collect();

        let mut found: std::collections::HashMap<String, Vec<f64>> = Default::default();
        let mut missing: Vec<(String, String)> = Vec::new();
        for (key, text) in keys.iter().zip(texts) {
            if found.contains_key(key) || missing.iter().any(|(k, _)| k == key) {
                continue;
            }
            match self.cache.as_ref().and_then(|c| c.get_embedding(key)) {
                Some(v) => {
                    found.insert(key.clone(), v);
                }
                None => missing.push((key.clone(), text.clone())),
            }
        }

        if !missing.is_empty() {
            let batch: Vec<String> = missing.iter().map(|(_, t)| t.clone()).collect();
            let vectors = self.with_retries(|| {
                self.counters
                    .provider_embedding_calls
                    .fetch_add(1, Ordering::SeqCst);
                self.provider.embed(&batch)
            })?;
            if vectors.len() != batch.len() {
                return Err(GatewayError::Provider(format!(
                    "asked for {} embeddings, got {}",
                    batch.len(),
                    vectors.len()
                )));
            }
            for ((key, _), values) in missing.into_iter().zip(vectors) {
                let pinned = *self.dimension.get_or_init(|| values.len());
                if values.len() != pinned {
                    return Err(GatewayError::DimensionMismatch {
                        expected: pinned,
                        got: values.len(),
                    });
                }
                if values.iter().all(|v| *v == 0.0) {
                    return Err(GatewayError::ZeroEmbedding);
                }
                if let Some(cache) = &self.cache {
                    cache.put_embedding(&key, model, &values)?;
                }
                found.insert(key, values);
            }
        }

        keys.iter()
            .map(|k| {
                let values = found[k].clone();
                let pinned = *self.dimension.get_or_init(|| values.len());
                if values.len() != pinned {
                    return Err(GatewayError::DimensionMismatch {
                        expected: pinned,
                        got: values.len(),
                    });
                }
                Ok(EmbeddingVector::new(values))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    fn request(prompt: &str) -> CompletionRequest {
        CompletionRequest {
            model: "mock".into(),
            prompt: prompt.into(),
            temperature: 0.0,
            max_output_tokens: 64,
            context_limit: 4096,
        }
    }

    fn fast_config() -> GatewayConfig {
        GatewayConfig {
            parallelism: 2,
            max_retries: 2,
            backoff_base: Duration::from_millis(1),
            embedding_model: "mock-embed".into(),
        }
    }

    #[test]
    fn token_estimate() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("abcdefgh"), 2);
        assert_eq!(estimate_tokens("abcdefghi"), 3);
        let (a, b) = ("hello world", "xyz");
        let joined = format!("{a}{b}");
        assert!(estimate_tokens(&joined) >= estimate_tokens(a).max(estimate_tokens(b)));
    }

    #[test]
    fn usable_context_keeps_margin() {
        assert_eq!(usable_context(4096), 4096 - 410);
        assert_eq!(usable_context(2048), 2048 - 205);
    }

    #[test]
    fn scripted_reply_and_cache_hit() {
        let dir = tempfile::tempdir().unwrap();
        let provider = Arc::new(MockProvider::new(MockBehavior::Constant("R".into())));
        let gw = Gateway::new(provider.clone(), fast_config())
            .with_cache_file(&dir.path().join("c.jsonl"))
            .unwrap();
        let first = gw.complete(&request("p")).unwrap();
        assert_eq!(first.text, "R");
        assert!(!first.from_cache);
        let second = gw.complete(&request("p")).unwrap();
        assert!(second.from_cache);
        assert_eq!(second.text, first.text);
        assert_eq!(provider.completion_calls(), 1);
        assert_eq!(gw.stats().completion_requests, 2);
        assert_eq!(gw.stats().completion_cache_hits, 1);
    }

    #[test]
    fn cache_survives_restart() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let text = {
            let gw = Gateway::new(
                Arc::new(MockProvider::new(MockBehavior::Constant("cold".into()))),
                fast_config(),
            )
            .with_cache_file(&path)
            .unwrap();
            gw.complete(&request("q")).unwrap().text
        };
        // a different provider behind the same cache never gets asked
        let provider = Arc::new(MockProvider::new(MockBehavior::Constant("other".into())));
        let gw = Gateway::new(provider.clone(), fast_config())
            .with_cache_file(&path)
            .unwrap();
        let again = gw.complete(&request("q")).unwrap();
        assert!(again.from_cache);
        assert_eq!(again.text, text);
        assert_eq!(provider.completion_calls(), 0);
    }

    #[test]
    fn over_budget_is_rejected_before_provider() {
        let provider = Arc::new(MockProvider::new(MockBehavior::Constant("R".into())));
        let gw = Gateway::new(provider.clone(), fast_config());
        let big = "x".repeat(4 * 4096);
        assert!(matches!(
            gw.complete(&request(&big)),
            Err(GatewayError::ContextBudgetExceeded { limit: 4096, .. })
        ));
        assert_eq!(provider.completion_calls(), 0);
    }

    #[test]
    fn transient_failures_are_retried_then_exhausted() {
        let provider = Arc::new(MockProvider::new(MockBehavior::Constant("ok".into())));
        provider.fail_next(2);
        let gw = Gateway::new(provider.clone(), fast_config());
        assert_eq!(gw.complete(&request("a")).unwrap().text, "ok");
        assert_eq!(provider.completion_calls(), 3);

        provider.fail_next(10);
        match gw.complete(&request("b")) {
            Err(GatewayError::ProviderExhausted { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn embeddings_are_ordered_and_deduplicated() {
        let provider = Arc::new(MockProvider::new(MockBehavior::Constant(String::new())));
        let gw = Gateway::new(provider, fast_config());
        let v = gw
            .embed(&["a".to_string(), "b".to_string(), "a".to_string()])
            .unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v[0].dimension(), DEFAULT_MOCK_DIMENSION);
        assert_eq!(v[0].dimension(), v[1].dimension());
        assert_eq!(v[0], v[2]);
        assert_ne!(v[0], v[1]);
        assert!(matches!(gw.embed(&[]), Err(GatewayError::EmptyBatch)));
    }

    struct RaggedProvider;
    impl Provider for RaggedProvider {
        fn name(&self) -> String {
            "ragged".into()
        }
        fn complete(&self, _: &CompletionRequest) -> Result<ProviderReply, ProviderError> {
            Err(ProviderError::Fatal("no".into()))
        }
        fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
            Ok(texts.iter().map(|t| vec![1.0; t.len()]).collect())
        }
    }

    #[test]
    fn inconsistent_dimensions_are_rejected() {
        let gw = Gateway::new(Arc::new(RaggedProvider), fast_config());
        assert!(matches!(
            gw.embed(&["ab".to_string(), "abc".to_string()]),
            Err(GatewayError::DimensionMismatch { expected: 2, got: 3 })
        ));
    }

    struct CountingProvider {
        in_flight: AtomicUsize,
        peak: AtomicUsize,
    }
    impl Provider for CountingProvider {
        fn name(&self) -> String {
            "counting".into()
        }
        fn complete(&self, _: &CompletionRequest) -> Result<ProviderReply, ProviderError> {
            let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            thread::sleep(Duration::from_millis(5));
            self.in_flight.fetch_sub(1, Ordering::SeqCst);
            Ok(ProviderReply {
                text: "x".into(),
                ..Default::default()
            })
        }
        fn embed(&self, _: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
            unreachable!()
        }
    }

    #[test]
    fn in_flight_calls_respect_parallelism() {
        let provider = Arc::new(CountingProvider {
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        });
        let gw = Gateway::new(provider.clone(), fast_config());
        thread::scope(|s| {
            for i in 0..16 {
                let gw = &gw;
                s.spawn(move || gw.complete(&request(&format!("p{i}"))).unwrap());
            }
        });
        let peak = provider.peak.load(Ordering::SeqCst);
        assert!(peak <= 2, "peak {peak}");
        assert!(peak >= 1);
    }
}
