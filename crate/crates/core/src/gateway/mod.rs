//! LLM access: pluggable backends, a prompt cache, retries, and per-query
//! token, cost, and latency accounting.

mod baseline;
mod clock;
mod http;
mod mock;

use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex};

use lru::LruCache;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::planner::QueryPlan;

pub use baseline::{
    chunk_records, extraction_prompt, run_llm_only, sample_indices, shorten_keys, synthesis_prompt,
    BaselineError, CHUNK_TOKENS, MAX_CHUNKS,
};
pub use clock::{Clock, ManualClock, SystemClock};
pub use http::HttpBackend;
pub use mock::{LatencyModel, MockBackend, MockMode, RateLimitSim};

/// USD per million input tokens.
pub const INPUT_USD_PER_MTOK: f64 = 0.05;
/// USD per million output tokens.
pub const OUTPUT_USD_PER_MTOK: f64 = 0.08;
pub const CACHE_CAPACITY: usize = 1024;

/// Planning-time token estimate: one token per four characters, rounded up.
pub fn reference_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

pub fn cost_usd(input_tokens: u64, output_tokens: u64) -> f64 {
    input_tokens as f64 * INPUT_USD_PER_MTOK / 1e6 + output_tokens as f64 * OUTPUT_USD_PER_MTOK / 1e6
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>, temperature: f64, max_tokens: u32) -> Self {
        Self {
            prompt: prompt.into(),
            temperature,
            max_tokens,
        }
    }

    /// Stable textual form; the cache key is derived from it.
    fn canonical(&self) -> String {
        format!(
            "t={:?}\u{1f}m={}\u{1f}{}",
            self.temperature, self.max_tokens, self.prompt
        )
    }
}

/// What a backend reports for one successful call.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendResponse {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    /// Worth retrying: timeouts, connection resets, 5xx.
    #[error("transient backend failure: {0}")]
    Transient(String),
    #[error("rate limited, retry after {retry_after_ms} ms")]
    RateLimited { retry_after_ms: u64 },
    #[error("backend failure: {0}")]
    Fatal(String),
}

pub trait Backend: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<BackendResponse, BackendError>;

    fn name(&self) -> &str;
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("max_tokens must be positive")]
    ZeroMaxTokens,
    #[error("{backend} failed after {attempts} attempts: {source}")]
    Backend {
        backend: String,
        attempts: u32,
        #[source]
        source: BackendError,
    },
}

/// Result of one logical completion, possibly served from cache.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    /// Billed tokens; zero when served from cache.
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// Elapsed time excluding rate-limit waits.
    pub wall_latency_ms: u64,
    pub rate_limit_wait_ms: u64,
    /// Backend requests issued, retries included; zero on a cache hit.
    pub api_calls: u32,
    pub cached: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RetryPolicy {
    /// Additional attempts after the first for transient failures.
    pub max_retries: u32,
    pub base_backoff_ms: u64,
    /// Rate-limit signals are waited out separately, up to this many times.
    pub max_rate_limit_waits: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 2,
            base_backoff_ms: 250,
            max_rate_limit_waits: 16,
        }
    }
}

impl RetryPolicy {
    fn backoff_ms(&self, retry: u32) -> u64 {
        self.base_backoff_ms.saturating_mul(1 << retry.min(16))
    }
}

struct CacheEntry {
    canonical: String,
    text: String,
}

/// Front door to a backend. Safe to share across threads.
pub struct Gateway {
    backend: Arc<dyn Backend>,
    clock: Arc<dyn Clock>,
    retry: RetryPolicy,
    cache: Mutex<LruCache<u64, CacheEntry>>,
}

fn cache_key(canonical: &str) -> u64 {
    let digest = Sha256::digest(canonical.as_bytes());
    u64::from_be_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self::with_clock(backend, Arc::new(SystemClock::new()))
    }

    pub fn with_clock(backend: Arc<dyn Backend>, clock: Arc<dyn Clock>) -> Self {
        Self {
            backend,
            clock,
            retry: RetryPolicy::default(),
            cache: Mutex::new(LruCache::new(
                NonZeroUsize::new(CACHE_CAPACITY).expect("capacity is positive"),
            )),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn cached_entries(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    pub fn complete(&self, request: &GenerationRequest) -> Result<Completion, GatewayError> {
        if request.prompt.trim().is_empty() {
            return Err(GatewayError::EmptyPrompt);
        }
        if request.max_tokens == 0 {
            return Err(GatewayError::ZeroMaxTokens);
        }
        let canonical = request.canonical();
        let key = cache_key(&canonical);
        if let Some(entry) = self.cache.lock().expect("cache lock").get(&key) {
            // The full request is kept next to the hash so a collision can
            // never serve another prompt's answer.
            if entry.canonical == canonical {
                return Ok(Completion {
                    text: entry.text.clone(),
                    input_tokens: 0,
                    output_tokens: 0,
                    wall_latency_ms: 0,
                    rate_limit_wait_ms: 0,
                    api_calls: 0,
                    cached: true,
                });
            }
        }

        let started = self.clock.now_ms();
        let mut waited = 0u64;
        let mut attempts = 0u32;
        let mut retries = 0u32;
        let mut rate_limits = 0u32;
        let response = loop {
            attempts += 1;
            match self.backend.generate(request) {
                Ok(r) => break r,
                Err(BackendError::RateLimited { retry_after_ms })
                    if rate_limits < self.retry.max_rate_limit_waits =>
                {
                    rate_limits += 1;
                    tracing::debug!(retry_after_ms, "rate limited");
                    self.clock.sleep_ms(retry_after_ms);
                    waited += retry_after_ms;
                }
                Err(BackendError::Transient(msg)) if retries < self.retry.max_retries => {
                    let pause = self.retry.backoff_ms(retries);
                    retries += 1;
                    tracing::warn!(%msg, pause, "transient backend failure, retrying");
                    self.clock.sleep_ms(pause);
                }
                Err(source) => {
                    return Err(GatewayError::Backend {
                        backend: self.backend.name().to_owned(),
                        attempts,
                        source,
                    })
                }
            }
        };
        let elapsed = self.clock.now_ms().saturating_sub(started);

        self.cache.lock().expect("cache lock").put(
            key,
            CacheEntry {
                canonical,
                text: response.text.clone(),
            },
        );
        Ok(Completion {
            text: response.text,
            input_tokens: response.input_tokens,
            output_tokens: response.output_tokens,
            wall_latency_ms: elapsed.saturating_sub(waited),
            rate_limit_wait_ms: waited,
            api_calls: attempts,
            cached: false,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// One call over a planner-built context.
    Grounded,
    /// Raw records in chunks, then a synthesis call.
    LlmOnly,
}

/// Totals across every call made for one query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UsageReport {
    pub strategy: Strategy,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub total_tokens: u64,
    pub api_calls: u32,
    pub latency_ms: u64,
    pub rate_limit_wait_ms: u64,
    pub cost_usd: f64,
    pub temperature: f64,
    pub max_tokens: u32,
    pub cached: bool,
}

impl UsageReport {
    pub fn new(strategy: Strategy, temperature: f64, max_tokens: u32) -> Self {
        Self {
            strategy,
            input_tokens: 0,
            output_tokens: 0,
            total_tokens: 0,
            api_calls: 0,
            latency_ms: 0,
            rate_limit_wait_ms: 0,
            cost_usd: 0.0,
            temperature,
            max_tokens,
            cached: false,
        }
    }

    /// Folds one completion into the totals. `cached` stays true only while
    /// every call so far was a cache hit.
    pub fn record(&mut self, c: &Completion) {
        let first = self.api_calls == 0 && self.total_tokens == 0 && !self.cached;
        self.input_tokens += c.input_tokens;
        self.output_tokens += c.output_tokens;
        self.total_tokens = self.input_tokens + self.output_tokens;
        self.api_calls += c.api_calls;
        self.latency_ms += c.wall_latency_ms;
        self.rate_limit_wait_ms += c.rate_limit_wait_ms;
        self.cost_usd = cost_usd(self.input_tokens, self.output_tokens);
        self.cached = if first { c.cached } else { self.cached && c.cached };
    }
}

/// Answers a planned query with a single completion.
pub fn run_grounded(plan: &QueryPlan, gateway: &Gateway) -> Result<(Completion, UsageReport), GatewayError> {
    let request = GenerationRequest::new(plan.prompt_text.clone(), plan.temperature, plan.max_tokens);
    let completion = gateway.complete(&request)?;
    let mut usage = UsageReport::new(Strategy::Grounded, plan.temperature, plan.max_tokens);
    usage.record(&completion);
    Ok((completion, usage))
}
