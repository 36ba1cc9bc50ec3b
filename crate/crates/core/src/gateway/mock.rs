//! Deterministic offline backend.
//!
//! The honest mode restates the prompt's context block, so every fact in the
//! answer is sourced; the corrupting mode appends an invented count at an
//! invented place. Together they give validation a pass and a fail fixture.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{reference_tokens, Backend, BackendError, BackendResponse, Clock, GenerationRequest};
use crate::numbers::{contains_close, extract_numbers};

const OPENERS: [&str; 3] = [
    "Based on the provided context:",
    "Here is what the data shows:",
    "Summary of the available facts:",
];

const CONTEXT_HEADER: &str = "### Context";
const INVENTED_PLACE: &str = "Maple Street";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockMode {
    #[default]
    Honest,
    Corrupting,
}

/// Simulated service time, charged to the backend's clock.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub base_ms: f64,
    pub per_input_token_ms: f64,
    pub per_output_token_ms: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            base_ms: 250.0,
            per_input_token_ms: 0.1,
            per_output_token_ms: 12.0,
        }
    }
}

impl LatencyModel {
    pub fn cost_ms(&self, input_tokens: u64, output_tokens: u64) -> u64 {
        (self.base_ms
            + self.per_input_token_ms * input_tokens as f64
            + self.per_output_token_ms * output_tokens as f64)
            .round() as u64
    }
}

/// Sliding one-minute request and token budget, as enforced by hosted APIs.
#[derive(Debug)]
pub struct RateLimitSim {
    pub requests_per_min: usize,
    pub tokens_per_min: u64,
    window: Mutex<VecDeque<(u64, u64)>>,
}

const MINUTE_MS: u64 = 60_000;

impl RateLimitSim {
    pub fn new(requests_per_min: usize, tokens_per_min: u64) -> Self {
        Self {
            requests_per_min,
            tokens_per_min,
            window: Mutex::new(VecDeque::new()),
        }
    }

    /// Budget of the free hosted tier used for baseline comparisons.
    pub fn hosted_free_tier() -> Self {
        Self::new(30, 6_000)
    }

    /// Admits a request of `tokens` at `now`, or says how long to wait.
    fn admit(&self, now: u64, tokens: u64) -> Result<(), u64> {
        let mut w = self.window.lock().expect("rate window lock");
        while w.front().is_some_and(|(t, _)| now >= t + MINUTE_MS) {
            w.pop_front();
        }
        let used: u64 = w.iter().map(|(_, n)| n).sum();
        // A single oversized request is admitted into an empty window rather
        // than starved forever.
        let fits = w.len() < self.requests_per_min && (used + tokens <= self.tokens_per_min || w.is_empty());
        if fits {
            w.push_back((now, tokens));
            Ok(())
        } else {
            let oldest = w.front().map(|(t, _)| *t).unwrap_or(now);
            Err((oldest + MINUTE_MS - now).max(1))
        }
    }
}

pub struct MockBackend {
    seed: u64,
    mode: MockMode,
    timing: Option<(Arc<dyn Clock>, LatencyModel)>,
    rate_limit: Option<RateLimitSim>,
}

impl MockBackend {
    pub fn new(seed: u64, mode: MockMode) -> Self {
        Self {
            seed,
            mode,
            timing: None,
            rate_limit: None,
        }
    }

    pub fn honest(seed: u64) -> Self {
        Self::new(seed, MockMode::Honest)
    }

    pub fn corrupting(seed: u64) -> Self {
        Self::new(seed, MockMode::Corrupting)
    }

    /// Charges simulated service time to `clock` on every call.
    pub fn with_latency(mut self, clock: Arc<dyn Clock>, model: LatencyModel) -> Self {
        self.timing = Some((clock, model));
        self
    }

    /// Requires a clock from [`MockBackend::with_latency`]; without one the
    /// window never advances.
    pub fn with_rate_limit(mut self, sim: RateLimitSim) -> Self {
        self.rate_limit = Some(sim);
        self
    }

    pub fn mode(&self) -> MockMode {
        self.mode
    }

    fn opener(&self, prompt: &str) -> &'static str {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(prompt.as_bytes());
        OPENERS[h.finalize()[0] as usize % OPENERS.len()]
    }

    fn now(&self) -> u64 {
        self.timing.as_ref().map_or(0, |(c, _)| c.now_ms())
    }
}

/// Lines of the prompt's context block, with runs of raw JSON records
/// collapsed into a one-line tally.
fn context_lines(prompt: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut records = 0usize;
    let mut inside = false;
    let flush = |records: &mut usize, out: &mut Vec<String>| {
        if *records > 0 {
            out.push(format!("Reviewed {records} records."));
            *records = 0;
        }
    };
    for line in prompt.lines() {
        if line.trim() == CONTEXT_HEADER {
            inside = true;
            continue;
        }
        if !inside {
            continue;
        }
        if line.starts_with("### ") {
            break;
        }
        if line.trim_start().starts_with('{') {
            records += 1;
            continue;
        }
        flush(&mut records, &mut out);
        if !line.trim().is_empty() {
            out.push(line.to_owned());
        }
    }
    flush(&mut records, &mut out);
    out
}

/// Joins whole lines while the result stays within `max_chars` characters.
fn fit_lines(lines: &[String], max_chars: usize) -> String {
    let mut text = String::new();
    for line in lines {
        let extra = line.chars().count() + usize::from(!text.is_empty());
        if text.chars().count() + extra > max_chars {
            break;
        }
        if !text.is_empty() {
            text.push('\n');
        }
        text.push_str(line);
    }
    if text.is_empty() {
        if let Some(first) = lines.first() {
            text = first.chars().take(max_chars).collect();
        }
    }
    text
}

fn invented_count(prompt: &str) -> u64 {
    let known = extract_numbers(prompt);
    let mut n = 17;
    while contains_close(&known, n as f64, 1e-6) {
        n += 1;
    }
    n
}

impl Backend for MockBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<BackendResponse, BackendError> {
        let input_tokens = reference_tokens(&request.prompt) as u64;
        if let Some(sim) = &self.rate_limit {
            sim.admit(self.now(), input_tokens)
                .map_err(|retry_after_ms| BackendError::RateLimited { retry_after_ms })?;
        }

        let budget = request.max_tokens as usize * 4;
        let mut lines = vec![self.opener(&request.prompt).to_owned()];
        lines.extend(context_lines(&request.prompt));
        let text = match self.mode {
            MockMode::Honest => fit_lines(&lines, budget),
            MockMode::Corrupting => {
                let tail = format!(
                    "In addition, {} events were recorded near {INVENTED_PLACE}.",
                    invented_count(&request.prompt)
                );
                let room = budget.saturating_sub(tail.chars().count() + 1);
                let head = fit_lines(&lines, room);
                if head.is_empty() {
                    tail.chars().take(budget).collect()
                } else {
                    format!("{head}\n{tail}")
                }
            }
        };
        let output_tokens = reference_tokens(&text) as u64;
        if let Some((clock, model)) = &self.timing {
            clock.sleep_ms(model.cost_ms(input_tokens, output_tokens));
        }
        Ok(BackendResponse {
            text,
            input_tokens,
            output_tokens,
        })
    }

    fn name(&self) -> &str {
        match self.mode {
            MockMode::Honest => "mock",
            MockMode::Corrupting => "mock-corrupting",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ManualClock;
    use proptest::prelude::*;

    const PROMPT: &str = "Preface.\n\n### Context\nTotal events: 2,450\n- Location A: 15 events, instability 0.87\n\n### Instructions\n- Be brief.\n\n### Question\nWhere?\n";

    #[test]
    fn honest_output_restates_context_only() {
        let r = MockBackend::honest(7)
            .generate(&GenerationRequest::new(PROMPT, 0.7, 500))
            .unwrap();
        let body: Vec<&str> = r.text.lines().skip(1).collect();
        assert_eq!(body, ["Total events: 2,450", "- Location A: 15 events, instability 0.87"]);
        assert!(OPENERS.contains(&r.text.lines().next().unwrap()));
        assert_eq!(r.input_tokens, reference_tokens(PROMPT) as u64);
        assert_eq!(r.output_tokens, reference_tokens(&r.text) as u64);
    }

    #[test]
    fn corrupting_output_adds_an_unsourced_count_and_place() {
        let r = MockBackend::corrupting(7)
            .generate(&GenerationRequest::new(PROMPT, 0.7, 500))
            .unwrap();
        assert!(r.text.ends_with("In addition, 17 events were recorded near Maple Street."));
        let with_17 = PROMPT.replace("15 events", "17 events");
        let r = MockBackend::corrupting(7)
            .generate(&GenerationRequest::new(with_17, 0.7, 500))
            .unwrap();
        assert!(r.text.contains(" 18 events"));
    }

    #[test]
    fn record_runs_collapse() {
        let prompt = "### Context\n{\"a\":1}\n{\"a\":2}\nnote\n{\"a\":3}\n### Question\nq";
        assert_eq!(
            context_lines(prompt),
            ["Reviewed 2 records.", "note", "Reviewed 1 records."]
        );
    }

    #[test]
    fn rate_limit_window_blocks_then_releases() {
        let sim = RateLimitSim::new(2, 6_000);
        assert!(sim.admit(0, 3_000).is_ok());
        assert!(sim.admit(10, 3_000).is_ok());
        assert_eq!(sim.admit(20, 1), Err(59_980));
        assert!(sim.admit(60_000, 1).is_ok());
        let sim = RateLimitSim::new(30, 6_000);
        assert!(sim.admit(0, 9_000).is_ok(), "oversized request admitted into empty window");
        assert!(sim.admit(1, 1).is_err());
    }

    #[test]
    fn latency_is_charged_to_the_clock() {
        let clock = Arc::new(ManualClock::new(0));
        let m = MockBackend::honest(1).with_latency(clock.clone(), LatencyModel::default());
        let r = m.generate(&GenerationRequest::new(PROMPT, 0.7, 500)).unwrap();
        assert_eq!(clock.now_ms(), LatencyModel::default().cost_ms(r.input_tokens, r.output_tokens));
    }

    proptest! {
        #[test]
        fn output_is_pure_and_within_budget(
            lines in proptest::collection::vec("[A-Za-z0-9 ,.:-]{0,80}", 0..30),
            max_tokens in 1u32..60,
            seed in any::<u64>(),
            corrupt in any::<bool>(),
        ) {
            let prompt = format!("P\n### Context\n{}\n### Question\nq", lines.join("\n"));
            let mode = if corrupt { MockMode::Corrupting } else { MockMode::Honest };
            let req = GenerationRequest::new(prompt, 0.5, max_tokens);
            let a = MockBackend::new(seed, mode).generate(&req).unwrap();
            let b = MockBackend::new(seed, mode).generate(&req).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(a.output_tokens <= max_tokens as u64);
        }
    }
}
