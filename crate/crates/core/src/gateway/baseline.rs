//! The LLM-only comparison strategy: hand the model raw records in
//! fixed-size chunks, then ask it to synthesize the per-chunk findings.

use serde_json::{Map, Value};
use thiserror::Error;

use super::{Completion, Gateway, GatewayError, GenerationRequest, Strategy, UsageReport};
use crate::planner::IntentCategory;

/// Target chunk size in reference tokens.
pub const CHUNK_TOKENS: usize = 3000;
/// At most this many chunks are sent; larger datasets are sampled.
pub const MAX_CHUNKS: usize = 5;

const KEY_ALIASES: [(&str, &str); 12] = [
    ("vehicle_id", "vid"),
    ("window_start", "ws"),
    ("window_secs", "wd"),
    ("mag_mean", "mm"),
    ("mag_variance", "mv"),
    ("gps_quality", "gq"),
    ("sample_count", "n"),
    ("fix_quality", "fq"),
    ("timestamp", "t"),
    ("anchor", "loc"),
    ("latitude", "lat"),
    ("longitude", "lon"),
];

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("dataset is empty")]
    EmptyDataset,
    /// Usage up to the failing call is kept so spend is never under-reported.
    #[error("baseline call failed after {} calls: {source}", partial.api_calls)]
    Gateway {
        #[source]
        source: GatewayError,
        partial: Box<UsageReport>,
    },
}

fn shorten_value(v: Value) -> Value {
    match v {
        Value::Object(map) => Value::Object(
            map.into_iter()
                .map(|(k, v)| {
                    let k = KEY_ALIASES
                        .iter()
                        .find(|(long, _)| *long == k)
                        .map_or(k, |(_, short)| (*short).to_owned());
                    (k, shorten_value(v))
                })
                .collect::<Map<_, _>>(),
        ),
        Value::Array(items) => Value::Array(items.into_iter().map(shorten_value).collect()),
        other => other,
    }
}

/// Rewrites a JSON record with compact key names. Lines that are not JSON
/// pass through trimmed.
pub fn shorten_keys(line: &str) -> String {
    match serde_json::from_str::<Value>(line) {
        Ok(v) => shorten_value(v).to_string(),
        Err(_) => line.trim().to_owned(),
    }
}

/// Greedy partition of `records` into newline-joined chunks of at most
/// `max_tokens` reference tokens. A record larger than the budget gets a
/// chunk of its own.
pub fn chunk_records(records: &[String], max_tokens: usize) -> Vec<String> {
    let mut chunks = Vec::new();
    let mut current = String::new();
    for r in records {
        if !current.is_empty() {
            let joined = current.chars().count() + 1 + r.chars().count();
            if joined.div_ceil(4) > max_tokens {
                chunks.push(std::mem::take(&mut current));
            } else {
                current.push('\n');
            }
        }
        current.push_str(r);
    }
    if !current.is_empty() {
        chunks.push(current);
    }
    chunks
}

/// Evenly spaced picks: all chunks when there are few, else `⌊i·n/k⌋`.
pub fn sample_indices(n: usize, k: usize) -> Vec<usize> {
    if n <= k {
        (0..n).collect()
    } else {
        (0..k).map(|i| i * n / k).collect()
    }
}

pub fn extraction_prompt(query: &str, chunk: &str, part: usize, parts: usize) -> String {
    format!(
        "You are reviewing raw telemetry summaries from a vehicle fleet, part {part} of {parts}.\n\n\
         ### Context\n{chunk}\n\n\
         ### Instructions\n\
         - Note every observation in these records that bears on the question: places, behaviors, and notable values.\n\
         - Do not speculate beyond the records.\n\n\
         ### Question\n{}\n",
        query.trim()
    )
}

pub fn synthesis_prompt(query: &str, findings: &[String]) -> String {
    let body: Vec<String> = findings
        .iter()
        .enumerate()
        .map(|(i, f)| format!("Findings {}:\n{}", i + 1, f.trim()))
        .collect();
    format!(
        "You are combining partial findings about a vehicle fleet into one answer.\n\n\
         ### Context\n{}\n\n\
         ### Instructions\n\
         - Merge the findings into a single answer to the question.\n\
         - Keep the answer short and factual.\n\n\
         ### Question\n{}\n",
        body.join("\n"),
        query.trim()
    )
}

/// Runs the chunk-and-synthesize baseline over raw JSONL `records`.
pub fn run_llm_only(
    query: &str,
    records: &[String],
    gateway: &Gateway,
) -> Result<(Completion, UsageReport), BaselineError> {
    let shortened: Vec<String> = records
        .iter()
        .filter(|r| !r.trim().is_empty())
        .map(|r| shorten_keys(r))
        .collect();
    if shortened.is_empty() {
        return Err(BaselineError::EmptyDataset);
    }
    let chunks = chunk_records(&shortened, CHUNK_TOKENS);
    let picked = sample_indices(chunks.len(), MAX_CHUNKS);
    tracing::debug!(chunks = chunks.len(), sampled = picked.len(), "llm-only baseline");

    let (temperature, max_tokens) = IntentCategory::AggressiveDriving.generation_settings();
    let mut usage = UsageReport::new(Strategy::LlmOnly, temperature, max_tokens);
    let call = |prompt: String, usage: &mut UsageReport| {
        match gateway.complete(&GenerationRequest::new(prompt, temperature, max_tokens)) {
            Ok(c) => {
                usage.record(&c);
                Ok(c)
            }
            Err(source) => Err(BaselineError::Gateway {
                source,
                partial: Box::new(usage.clone()),
            }),
        }
    };

    let mut findings = Vec::with_capacity(picked.len());
    for (part, &i) in picked.iter().enumerate() {
        let c = call(extraction_prompt(query, &chunks[i], part + 1, picked.len()), &mut usage)?;
        findings.push(c.text);
    }
    let answer = call(synthesis_prompt(query, &findings), &mut usage)?;
    Ok((answer, usage))
}
