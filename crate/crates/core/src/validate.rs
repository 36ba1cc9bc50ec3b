//! Post-hoc checks on generated answers and the resulting confidence score.
//!
//! Every issue costs twenty points; a clean answer scores 100.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::cluster::BehaviorLabel;
use crate::geo::LandmarkDirectory;
use crate::numbers::{contains_close, extract_numbers, format_fixed};
use crate::planner::ContextDetails;
use crate::planner::QueryPlan;

pub const PENALTY_PER_ISSUE: u32 = 20;
pub const PRESENT_THRESHOLD: u8 = 80;
pub const REVIEW_THRESHOLD: u8 = 60;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    /// A number with no source in the context.
    Factual,
    /// A place name that is not in the landmark directory.
    Geographic,
    /// Tone at odds with the event's behavior label.
    Behavioral,
    /// Boilerplate refusals and apologies.
    GenericAi,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub kind: IssueKind,
    pub detail: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disposition {
    Present,
    Review,
    Retry,
}

impl Disposition {
    pub fn from_score(score: u8) -> Self {
        if score >= PRESENT_THRESHOLD {
            Disposition::Present
        } else if score >= REVIEW_THRESHOLD {
            Disposition::Review
        } else {
            Disposition::Retry
        }
    }
}

pub fn score(n_issues: usize) -> u8 {
    let penalty = (n_issues as u64).saturating_mul(PENALTY_PER_ISSUE as u64);
    100u64.saturating_sub(penalty) as u8
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
    pub n_issues: usize,
    pub score: u8,
    pub disposition: Disposition,
}

impl ValidationReport {
    pub fn from_issues(issues: Vec<Issue>) -> Self {
        let n = issues.len();
        let s = score(n);
        Self {
            issues,
            n_issues: n,
            score: s,
            disposition: Disposition::from_score(s),
        }
    }
}

fn strings(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| (*s).to_owned()).collect()
}

/// Editable word lists and tolerances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidatorConfig {
    pub number_tolerance: f64,
    /// Words that must not describe Calm or Moderate events.
    pub alarm_words: Vec<String>,
    /// Words that must not describe Aggressive or Very Aggressive events.
    pub calm_only_words: Vec<String>,
    pub generic_phrases: Vec<String>,
    /// A single capitalized word followed by one of these reads as a place.
    pub place_suffixes: Vec<String>,
    /// Capitalized multi-word terms that are not places.
    pub allowed_terms: Vec<String>,
}

impl Default for ValidatorConfig {
    fn default() -> Self {
        Self {
            number_tolerance: 1e-6,
            alarm_words: strings(&["dangerous", "alarming", "severe", "emergency"]),
            calm_only_words: strings(&["smooth", "gentle", "uneventful"]),
            generic_phrases: strings(&["as an ai", "i cannot", "i'm sorry"]),
            place_suffixes: strings(&["Square", "Crosswalk", "Housing", "Hall", "Street", "Ave"]),
            allowed_terms: BehaviorLabel::NAMED
                .iter()
                .map(|l| l.name().to_owned())
                .chain(["UTC".to_owned()])
                .collect(),
        }
    }
}

/// A whitespace-separated word with surrounding punctuation removed.
#[derive(Debug)]
struct Word<'a> {
    text: &'a str,
    /// Punctuation after the word closes any phrase in progress.
    closes: bool,
    sentence_start: bool,
}

fn words(text: &str) -> Vec<Word<'_>> {
    let mut out = Vec::new();
    for line in text.lines() {
        let mut sentence_start = true;
        for raw in line.split_whitespace() {
            let trimmed_start = raw.trim_start_matches(|c: char| !c.is_alphanumeric() && c != '&');
            let core = trimmed_start.trim_end_matches(|c: char| !c.is_alphanumeric() && c != '&');
            let closes = core.len() != trimmed_start.len();
            if core.is_empty() {
                // Bullets and dashes start a fresh clause.
                if raw.chars().all(|c| matches!(c, '-' | '*' | '•')) {
                    sentence_start = true;
                }
                continue;
            }
            out.push(Word {
                text: core,
                closes,
                sentence_start,
            });
            let tail = &raw[raw.len() - (trimmed_start.len() - core.len())..];
            sentence_start = tail.contains(['.', '!', '?', ':']);
        }
        // Line ends close phrases too.
        if let Some(last) = out.last_mut() {
            last.closes = true;
        }
    }
    out
}

fn is_capitalized(w: &str) -> bool {
    w.chars().next().is_some_and(|c| c.is_uppercase())
}

/// Lowercased token sequences for matching.
fn tokens(name: &str) -> Vec<String> {
    words(name).iter().map(|w| w.text.to_lowercase()).collect()
}

/// Capitalized phrases that look like place names, with whether their first
/// word opens a sentence.
fn place_candidates(text: &str, suffixes: &[String]) -> Vec<(Vec<String>, bool)> {
    let ws = words(text);
    let mut out = Vec::new();
    let mut i = 0;
    while i < ws.len() {
        if !is_capitalized(ws[i].text) {
            i += 1;
            continue;
        }
        let start = i;
        let mut phrase = vec![ws[i].text.to_owned()];
        let mut capitals = 1;
        while !ws[i].closes && i + 1 < ws.len() {
            let next = ws[i + 1].text;
            if is_capitalized(next) {
                capitals += 1;
            } else if next == "&" && i + 2 < ws.len() && !ws[i + 1].closes && is_capitalized(ws[i + 2].text) {
            } else {
                break;
            }
            phrase.push(next.to_owned());
            i += 1;
        }
        if capitals == 1 && !ws[i].closes && i + 1 < ws.len() {
            let next = ws[i + 1].text;
            if suffixes.iter().any(|s| s.eq_ignore_ascii_case(next)) {
                phrase.push(next.to_owned());
                capitals = 2;
                i += 1;
            }
        }
        if capitals >= 2 {
            out.push((phrase, ws[start].sentence_start));
        }
        i += 1;
    }
    out
}

/// Whether `phrase` splits entirely into known names, allowing the first
/// word to be an ordinary sentence opener.
fn segments_into(phrase: &[String], known: &[Vec<String>], skip_first: bool) -> bool {
    let lower: Vec<String> = phrase.iter().map(|w| w.to_lowercase()).collect();
    let n = lower.len();
    let mut reachable = vec![false; n + 1];
    reachable[0] = true;
    if skip_first {
        reachable[1] = true;
    }
    for i in 0..n {
        if !reachable[i] {
            continue;
        }
        if lower[i] == "&" {
            reachable[i + 1] = true;
        }
        for name in known {
            if !name.is_empty() && lower[i..].starts_with(name) {
                reachable[i + name.len()] = true;
            }
        }
    }
    reachable[n]
}

fn contains_word_prefix(lowered_words: &[String], stem: &str) -> bool {
    lowered_words.iter().any(|w| w.starts_with(stem))
}

fn count_occurrences(haystack: &str, needle: &str) -> usize {
    if needle.is_empty() {
        return 0;
    }
    haystack.match_indices(needle).count()
}

pub fn validate(response: &str, plan: &QueryPlan, landmarks: &LandmarkDirectory) -> ValidationReport {
    validate_with(response, plan, landmarks, &ValidatorConfig::default())
}

pub fn validate_with(
    response: &str,
    plan: &QueryPlan,
    landmarks: &LandmarkDirectory,
    config: &ValidatorConfig,
) -> ValidationReport {
    let mut issues = Vec::new();

    let known = extract_numbers(&plan.context_text);
    let mut unmatched: Vec<f64> = Vec::new();
    for v in extract_numbers(response) {
        if !contains_close(&known, v, config.number_tolerance) && !unmatched.contains(&v) {
            unmatched.push(v);
            issues.push(Issue {
                kind: IssueKind::Factual,
                detail: format!("{} does not appear in the context", format_fixed(v, 6).trim_end_matches('0').trim_end_matches('.')),
            });
        }
    }

    let names: Vec<Vec<String>> = landmarks
        .entries()
        .iter()
        .map(|l| tokens(&l.name))
        .chain(config.allowed_terms.iter().map(|t| tokens(t)))
        .collect();
    let mut reported = BTreeSet::new();
    for (phrase, sentence_start) in place_candidates(response, &config.place_suffixes) {
        if segments_into(&phrase, &names, sentence_start) {
            continue;
        }
        let name = phrase.join(" ");
        if reported.insert(name.to_lowercase()) {
            issues.push(Issue {
                kind: IssueKind::Geographic,
                detail: format!("{name} is not a known landmark"),
            });
        }
    }

    if let ContextDetails::Micro { label, .. } = &plan.context.details {
        let lowered: Vec<String> = words(response).iter().map(|w| w.text.to_lowercase()).collect();
        let (forbidden, why) = if label.is_calm() {
            (&config.alarm_words, "alarm language for a calm event")
        } else if label.is_aggressive() {
            (&config.calm_only_words, "calm language for an aggressive event")
        } else {
            (&Vec::new(), "")
        };
        let hits: Vec<&String> = forbidden
            .iter()
            .filter(|w| contains_word_prefix(&lowered, &w.to_lowercase()))
            .collect();
        if !hits.is_empty() {
            let list: Vec<&str> = hits.iter().map(|s| s.as_str()).collect();
            issues.push(Issue {
                kind: IssueKind::Behavioral,
                detail: format!("{why} ({label}): {}", list.join(", ")),
            });
        }
    }

    let lowered = response.to_lowercase().replace('\u{2019}', "'");
    for phrase in &config.generic_phrases {
        for _ in 0..count_occurrences(&lowered, &phrase.to_lowercase()) {
            issues.push(Issue {
                kind: IssueKind::GenericAi,
                detail: format!("generic phrase \"{phrase}\""),
            });
        }
    }

    ValidationReport::from_issues(issues)
}
