//! Query planning: keyword intent classification, targeted retrieval over
//! labeled windows, and grounded prompt assembly.

mod prompt;
mod retrieve;

pub use prompt::{build_prompt, QueryPlan, CONTEXT_MAX_TOKENS, CONTEXT_MIN_TOKENS};
pub use retrieve::{
    label_windows, retrieve, retrieve_from_store, ContextDetails, ContextSummary, DwellSite,
    HourBucket, Hotspot, LabelCount, LabeledWindow,
};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::BehaviorLabel;
use crate::geo::{GeoError, LandmarkDirectory};
use crate::store::{StoreError, StoreKey};

pub const MACRO_TEMPERATURE: f64 = 0.7;
pub const MACRO_MAX_TOKENS: u32 = 500;
pub const MICRO_TEMPERATURE: f64 = 0.5;
pub const MICRO_MAX_TOKENS: u32 = 150;

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("could not determine what the query asks for; supported analyses: {}", supported.join(", "))]
    UnknownIntent { supported: Vec<String> },
    #[error("unknown landmark {0:?}")]
    UnknownLandmark(String),
    #[error("event {0} not found")]
    EventNotFound(StoreKey),
    #[error("event {0} has no usable GPS fix")]
    EventNotLocated(StoreKey),
    #[error("micro analysis requires an event key")]
    MissingEvent,
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

/// Analyses the planner knows how to run, in classification priority order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntentCategory {
    AggressiveDriving,
    DwellTime,
    EventCounting,
    RouteEfficiency,
    SpatialPatterns,
    MicroEvent,
}

impl IntentCategory {
    /// Keyword-classified categories, highest priority first.
    pub const MACRO: [IntentCategory; 5] = [
        IntentCategory::AggressiveDriving,
        IntentCategory::DwellTime,
        IntentCategory::EventCounting,
        IntentCategory::RouteEfficiency,
        IntentCategory::SpatialPatterns,
    ];

    pub fn title(&self) -> &'static str {
        match self {
            IntentCategory::AggressiveDriving => "aggressive driving",
            IntentCategory::DwellTime => "dwell time",
            IntentCategory::EventCounting => "event counting",
            IntentCategory::RouteEfficiency => "route efficiency",
            IntentCategory::SpatialPatterns => "spatial patterns",
            IntentCategory::MicroEvent => "event explanation",
        }
    }

    pub fn is_micro(&self) -> bool {
        *self == IntentCategory::MicroEvent
    }

    /// (temperature, max output tokens) for this kind of query.
    pub fn generation_settings(&self) -> (f64, u32) {
        if self.is_micro() {
            (MICRO_TEMPERATURE, MICRO_MAX_TOKENS)
        } else {
            (MACRO_TEMPERATURE, MACRO_MAX_TOKENS)
        }
    }
}

impl fmt::Display for IntentCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.title())
    }
}

/// Supported analyses as shown to users when classification fails.
pub fn supported_categories() -> Vec<String> {
    IntentCategory::MACRO
        .iter()
        .map(|c| c.title().to_owned())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intent {
    pub category: IntentCategory,
    pub query: String,
    /// Requested label for counting queries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<BehaviorLabel>,
    /// Landmark named by a spatial query, as written in the directory when
    /// it matched an entry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmark: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<StoreKey>,
}

impl Intent {
    pub fn micro(event: StoreKey, query: impl Into<String>) -> Self {
        Self {
            category: IntentCategory::MicroEvent,
            query: query.into(),
            label: None,
            landmark: None,
            event: Some(event),
        }
    }
}

/// Keyword lists per macro category. Keywords match at the start of a word
/// and may span several words ("how many").
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Lexicon {
    pub aggressive_driving: Vec<String>,
    pub dwell_time: Vec<String>,
    pub event_counting: Vec<String>,
    pub route_efficiency: Vec<String>,
    pub spatial_patterns: Vec<String>,
}

fn words(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| (*s).to_owned()).collect()
}

impl Default for Lexicon {
    fn default() -> Self {
        Self {
            aggressive_driving: words(&["aggressive", "dangerous", "harsh", "unsafe"]),
            dwell_time: words(&["dwell", "idle", "wait", "stopped"]),
            event_counting: words(&["how many", "count", "instances"]),
            route_efficiency: words(&["efficien", "route", "compare", "morning", "evening"]),
            spatial_patterns: words(&["around", "near", "patterns at"]),
        }
    }
}

impl Lexicon {
    pub fn keywords(&self, category: IntentCategory) -> &[String] {
        match category {
            IntentCategory::AggressiveDriving => &self.aggressive_driving,
            IntentCategory::DwellTime => &self.dwell_time,
            IntentCategory::EventCounting => &self.event_counting,
            IntentCategory::RouteEfficiency => &self.route_efficiency,
            IntentCategory::SpatialPatterns => &self.spatial_patterns,
            IntentCategory::MicroEvent => &[],
        }
    }

    pub fn keywords_mut(&mut self, category: IntentCategory) -> Option<&mut Vec<String>> {
        match category {
            IntentCategory::AggressiveDriving => Some(&mut self.aggressive_driving),
            IntentCategory::DwellTime => Some(&mut self.dwell_time),
            IntentCategory::EventCounting => Some(&mut self.event_counting),
            IntentCategory::RouteEfficiency => Some(&mut self.route_efficiency),
            IntentCategory::SpatialPatterns => Some(&mut self.spatial_patterns),
            IntentCategory::MicroEvent => None,
        }
    }
}

/// Lexicon, radii, and ranking parameters. Loadable from JSON; missing
/// fields take the documented defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub lexicon: Lexicon,
    /// Displacement between consecutive windows below which a vehicle is
    /// considered stationary, meters.
    pub dwell_threshold_m: f64,
    pub spatial_radius_m: f64,
    pub micro_radius_m: f64,
    pub top_k: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            lexicon: Lexicon::default(),
            dwell_threshold_m: 10.0,
            spatial_radius_m: 250.0,
            micro_radius_m: 100.0,
            top_k: 3,
        }
    }
}

/// Byte offset of the first occurrence of `keyword` in `haystack` that
/// begins a word. Both are expected lowercase.
fn find_word_prefix(haystack: &str, keyword: &str) -> Option<usize> {
    let keyword = keyword.trim();
    if keyword.is_empty() {
        return None;
    }
    haystack.match_indices(keyword).map(|(i, _)| i).find(|&i| {
        haystack[..i]
            .chars()
            .next_back()
            .is_none_or(|c| !c.is_alphanumeric())
    })
}

fn normalize_query(query: &str) -> String {
    query
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Longest label name mentioned in the query, e.g. "very aggressive" over
/// "aggressive".
fn find_label(lowered: &str) -> Option<BehaviorLabel> {
    let mut names: Vec<(String, BehaviorLabel)> = BehaviorLabel::NAMED
        .iter()
        .map(|l| (l.name().to_lowercase(), *l))
        .collect();
    names.sort_by_key(|(n, _)| std::cmp::Reverse(n.len()));
    names
        .into_iter()
        .find(|(n, _)| find_word_prefix(lowered, n).is_some())
        .map(|(_, l)| l)
}

/// Longest directory name in the query; otherwise the words following the
/// matched spatial keyword, so the caller can report what was not found.
fn find_landmark(lowered: &str, keyword_end: Option<usize>, landmarks: &LandmarkDirectory) -> Option<String> {
    let mut entries: Vec<&str> = landmarks.entries().iter().map(|l| l.name.as_str()).collect();
    entries.sort_by_key(|n| std::cmp::Reverse(n.len()));
    for name in entries {
        if find_word_prefix(lowered, &normalize_query(name)).is_some() {
            return Some(name.to_owned());
        }
    }
    let rest = lowered[keyword_end?..]
        .trim()
        .trim_end_matches(|c: char| !c.is_alphanumeric())
        .trim();
    (!rest.is_empty()).then(|| rest.to_owned())
}

/// Maps a natural-language question to one macro analysis.
///
/// Categories are tried in priority order and the first whose lexicon has a
/// keyword in the query wins; nothing is guessed when none match.
pub fn classify(
    query: &str,
    config: &PlannerConfig,
    landmarks: &LandmarkDirectory,
) -> Result<Intent, PlannerError> {
    let lowered = normalize_query(query);
    if lowered.is_empty() {
        return Err(PlannerError::EmptyQuery);
    }
    for category in IntentCategory::MACRO {
        let hit = config
            .lexicon
            .keywords(category)
            .iter()
            .filter_map(|k| {
                let k = normalize_query(k);
                find_word_prefix(&lowered, &k).map(|i| i + k.len())
            })
            .min();
        let Some(keyword_end) = hit else {
            continue;
        };
        let mut intent = Intent {
            category,
            query: query.trim().to_owned(),
            label: None,
            landmark: None,
            event: None,
        };
        match category {
            IntentCategory::EventCounting => intent.label = find_label(&lowered),
            IntentCategory::SpatialPatterns => {
                intent.landmark = find_landmark(&lowered, Some(keyword_end), landmarks)
            }
            _ => {}
        }
        return Ok(intent);
    }
    Err(PlannerError::UnknownIntent {
        supported: supported_categories(),
    })
}
