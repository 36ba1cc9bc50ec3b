use std::collections::BTreeMap;

use chrono::{DateTime, Timelike, Utc};
use serde::{Deserialize, Serialize};

use super::{Intent, IntentCategory, PlannerConfig, PlannerError};
use crate::cluster::{extract_features, BehaviorLabel, BehaviorModel, FeatureVector};
use crate::geo::{haversine, GeoPoint, LandmarkDirectory};
use crate::store::{QueryFilter, StoreKey, SummaryStore};
use crate::telemetry::{FixQuality, WindowSummary};

/// A stored window with its features and its label under the active model.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledWindow {
    pub summary: WindowSummary,
    pub features: FeatureVector,
    pub label: BehaviorLabel,
}

impl LabeledWindow {
    pub fn key(&self) -> StoreKey {
        StoreKey::of(&self.summary)
    }

    /// Anchor, if the window's fix is good enough to place it.
    pub fn location(&self) -> Option<GeoPoint> {
        self.summary.located(FixQuality::Fix2d)
    }
}

/// Labels every summary with `model`. Output order follows the input.
pub fn label_windows(summaries: impl IntoIterator<Item = WindowSummary>, model: &BehaviorModel) -> Vec<LabeledWindow> {
    summaries
        .into_iter()
        .map(|summary| {
            let features = extract_features(&summary);
            LabeledWindow {
                label: model.assign(&features),
                features,
                summary,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hotspot {
    pub landmark: String,
    pub events: u64,
    pub mean_instability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelCount {
    pub label: BehaviorLabel,
    pub windows: u64,
    pub mean_instability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DwellSite {
    pub landmark: String,
    pub minutes: f64,
    pub episodes: u64,
    pub windows: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HourBucket {
    /// Hour of day, UTC.
    pub hour: u32,
    pub windows: u64,
    /// Mean GPS displacement between consecutive windows, meters.
    pub mean_displacement_m: f64,
    /// Share of consecutive-window pairs below the dwell threshold, percent.
    pub dwell_pct: f64,
}

/// Category-specific facts gathered alongside the common totals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContextDetails {
    Aggressive {
        flagged_windows: u64,
    },
    Dwell {
        threshold_m: f64,
        total_minutes: f64,
        sites: Vec<DwellSite>,
    },
    Counting {
        label: Option<BehaviorLabel>,
        matched: u64,
        per_label: Vec<LabelCount>,
    },
    Route {
        threshold_m: f64,
        buckets: Vec<HourBucket>,
    },
    Spatial {
        landmark: String,
        radius_m: f64,
        within_radius: u64,
        per_label: Vec<LabelCount>,
    },
    Micro {
        event: StoreKey,
        label: BehaviorLabel,
        landmark: String,
        distance_m: f64,
        instability: f64,
        extreme_event_magnitude: f64,
        mag_mean: f64,
        radius_m: f64,
        neighbors: Vec<LabelCount>,
    },
}

/// Everything the prompt is allowed to state, computed from store data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextSummary {
    pub category: IntentCategory,
    /// Windows in scope for the analysis.
    pub total_events: u64,
    /// `[first window start, last window end)` in UTC ms.
    pub observation_window: Option<(i64, i64)>,
    pub hotspots: Vec<Hotspot>,
    pub details: ContextDetails,
}

fn observation_window<'a>(windows: impl IntoIterator<Item = &'a LabeledWindow>) -> Option<(i64, i64)> {
    windows.into_iter().fold(None, |acc, w| {
        let (s, e) = (w.summary.window_start, w.summary.window_end());
        Some(match acc {
            None => (s, e),
            Some((a, b)) => (a.min(s), b.max(e)),
        })
    })
}

fn mean(sum: f64, n: u64) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Per-label counts in the fixed label order, including zero rows for the
/// five named labels.
fn label_counts<'a>(windows: impl IntoIterator<Item = &'a LabeledWindow>) -> Vec<LabelCount> {
    let mut acc: BTreeMap<BehaviorLabel, (u64, f64)> = BehaviorLabel::NAMED
        .iter()
        .map(|l| (*l, (0, 0.0)))
        .collect();
    for w in windows {
        let e = acc.entry(w.label).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += w.features.instability;
    }
    acc.into_iter()
        .map(|(label, (n, sum))| LabelCount {
            label,
            windows: n,
            mean_instability: mean(sum, n),
        })
        .collect()
}

/// Ranks `(landmark → (count, instability sum))` by count, then name.
fn rank_hotspots(groups: BTreeMap<String, (u64, f64)>, top_k: usize) -> Vec<Hotspot> {
    let mut hotspots: Vec<Hotspot> = groups
        .into_iter()
        .map(|(landmark, (events, sum))| Hotspot {
            landmark,
            events,
            mean_instability: mean(sum, events),
        })
        .collect();
    hotspots.sort_by(|a, b| b.events.cmp(&a.events).then_with(|| a.landmark.cmp(&b.landmark)));
    hotspots.truncate(top_k);
    hotspots
}

/// Windows grouped per vehicle in time order.
fn by_vehicle(windows: &[LabeledWindow]) -> BTreeMap<&str, Vec<&LabeledWindow>> {
    let mut map: BTreeMap<&str, Vec<&LabeledWindow>> = BTreeMap::new();
    for w in windows {
        map.entry(w.summary.vehicle_id.as_str()).or_default().push(w);
    }
    for v in map.values_mut() {
        v.sort_by_key(|w| w.summary.window_start);
    }
    map
}

/// Displacement between two windows that directly follow each other and
/// both have a usable fix.
fn step_displacement(a: &LabeledWindow, b: &LabeledWindow) -> Option<f64> {
    if b.summary.window_start != a.summary.window_end() {
        return None;
    }
    Some(haversine(a.location()?, b.location()?))
}

fn aggressive(
    windows: &[LabeledWindow],
    landmarks: &LandmarkDirectory,
    config: &PlannerConfig,
) -> Result<ContextSummary, PlannerError> {
    let mut groups: BTreeMap<String, (u64, f64)> = BTreeMap::new();
    let mut flagged = 0;
    for w in windows.iter().filter(|w| w.label.is_aggressive()) {
        flagged += 1;
        if let Some(p) = w.location() {
            let (lm, _) = landmarks.nearest(p)?;
            let e = groups.entry(lm.name.clone()).or_insert((0, 0.0));
            e.0 += 1;
            e.1 += w.features.instability;
        }
    }
    Ok(ContextSummary {
        category: IntentCategory::AggressiveDriving,
        total_events: windows.len() as u64,
        observation_window: observation_window(windows),
        hotspots: rank_hotspots(groups, config.top_k),
        details: ContextDetails::Aggressive {
            flagged_windows: flagged,
        },
    })
}

fn dwell(
    windows: &[LabeledWindow],
    landmarks: &LandmarkDirectory,
    config: &PlannerConfig,
) -> Result<ContextSummary, PlannerError> {
    // landmark → (minutes, episodes, windows, instability sum)
    let mut sites: BTreeMap<String, (f64, u64, u64, f64)> = BTreeMap::new();
    for track in by_vehicle(windows).values() {
        let mut run: Vec<&LabeledWindow> = Vec::new();
        let mut flush = |run: &mut Vec<&LabeledWindow>| -> Result<(), PlannerError> {
            if run.len() >= 2 {
                let first = run[0].location().expect("runs contain located windows");
                let (lm, _) = landmarks.nearest(first)?;
                let minutes: f64 = run.iter().map(|w| w.summary.window_secs).sum::<f64>() / 60.0;
                let e = sites.entry(lm.name.clone()).or_insert((0.0, 0, 0, 0.0));
                e.0 += minutes;
                e.1 += 1;
                e.2 += run.len() as u64;
                e.3 += run.iter().map(|w| w.features.instability).sum::<f64>();
            }
            run.clear();
            Ok(())
        };
        for pair in track.windows(2) {
            match step_displacement(pair[0], pair[1]) {
                Some(d) if d < config.dwell_threshold_m => {
                    if run.is_empty() {
                        run.push(pair[0]);
                    }
                    run.push(pair[1]);
                }
                _ => flush(&mut run)?,
            }
        }
        flush(&mut run)?;
    }
    let total_minutes = sites.values().map(|s| s.0).sum();
    let mut ranked: Vec<DwellSite> = sites
        .iter()
        .map(|(name, &(minutes, episodes, n, _))| DwellSite {
            landmark: name.clone(),
            minutes,
            episodes,
            windows: n,
        })
        .collect();
    ranked.sort_by(|a, b| b.minutes.total_cmp(&a.minutes).then_with(|| a.landmark.cmp(&b.landmark)));
    ranked.truncate(config.top_k);
    let hotspots = ranked
        .iter()
        .map(|s| Hotspot {
            landmark: s.landmark.clone(),
            events: s.windows,
            mean_instability: mean(sites[&s.landmark].3, s.windows),
        })
        .collect();
    Ok(ContextSummary {
        category: IntentCategory::DwellTime,
        total_events: windows.len() as u64,
        observation_window: observation_window(windows),
        hotspots,
        details: ContextDetails::Dwell {
            threshold_m: config.dwell_threshold_m,
            total_minutes,
            sites: ranked,
        },
    })
}

fn counting(intent: &Intent, windows: &[LabeledWindow]) -> ContextSummary {
    let matched = match intent.label {
        Some(l) => windows.iter().filter(|w| w.label == l).count() as u64,
        None => windows.len() as u64,
    };
    ContextSummary {
        category: IntentCategory::EventCounting,
        total_events: windows.len() as u64,
        observation_window: observation_window(windows),
        hotspots: Vec::new(),
        details: ContextDetails::Counting {
            label: intent.label,
            matched,
            per_label: label_counts(windows),
        },
    }
}

fn hour_of(ms: i64) -> u32 {
    DateTime::<Utc>::from_timestamp_millis(ms).map_or(0, |t| t.hour())
}

fn route(windows: &[LabeledWindow], config: &PlannerConfig) -> ContextSummary {
    // hour → (windows, displacement sum, pairs, dwell pairs)
    let mut buckets: BTreeMap<u32, (u64, f64, u64, u64)> = BTreeMap::new();
    for w in windows {
        buckets.entry(hour_of(w.summary.window_start)).or_default().0 += 1;
    }
    for track in by_vehicle(windows).values() {
        for pair in track.windows(2) {
            if let Some(d) = step_displacement(pair[0], pair[1]) {
                let b = buckets.entry(hour_of(pair[0].summary.window_start)).or_default();
                b.1 += d;
                b.2 += 1;
                if d < config.dwell_threshold_m {
                    b.3 += 1;
                }
            }
        }
    }
    ContextSummary {
        category: IntentCategory::RouteEfficiency,
        total_events: windows.len() as u64,
        observation_window: observation_window(windows),
        hotspots: Vec::new(),
        details: ContextDetails::Route {
            threshold_m: config.dwell_threshold_m,
            buckets: buckets
                .into_iter()
                .map(|(hour, (n, sum, pairs, dwell))| HourBucket {
                    hour,
                    windows: n,
                    mean_displacement_m: mean(sum, pairs),
                    dwell_pct: 100.0 * mean(dwell as f64, pairs),
                })
                .collect(),
        },
    }
}

fn within(
    windows: &[LabeledWindow],
    centre: GeoPoint,
    radius_m: f64,
) -> impl Iterator<Item = &LabeledWindow> {
    windows
        .iter()
        .filter(move |w| w.location().is_some_and(|p| haversine(centre, p) <= radius_m))
}

fn spatial(
    intent: &Intent,
    windows: &[LabeledWindow],
    landmarks: &LandmarkDirectory,
    config: &PlannerConfig,
) -> Result<ContextSummary, PlannerError> {
    let requested = intent.landmark.clone().unwrap_or_default();
    let lm = landmarks
        .get(&requested)
        .ok_or_else(|| PlannerError::UnknownLandmark(requested.clone()))?;
    let nearby: Vec<&LabeledWindow> = within(windows, lm.point(), config.spatial_radius_m).collect();
    Ok(ContextSummary {
        category: IntentCategory::SpatialPatterns,
        total_events: nearby.len() as u64,
        observation_window: observation_window(nearby.iter().copied()),
        hotspots: Vec::new(),
        details: ContextDetails::Spatial {
            landmark: lm.name.clone(),
            radius_m: config.spatial_radius_m,
            within_radius: nearby.len() as u64,
            per_label: label_counts(nearby.iter().copied()),
        },
    })
}

fn micro(
    intent: &Intent,
    windows: &[LabeledWindow],
    landmarks: &LandmarkDirectory,
    config: &PlannerConfig,
) -> Result<ContextSummary, PlannerError> {
    let key = intent.event.clone().ok_or(PlannerError::MissingEvent)?;
    let event = windows
        .iter()
        .find(|w| w.key() == key)
        .ok_or_else(|| PlannerError::EventNotFound(key.clone()))?;
    let at = event
        .location()
        .ok_or_else(|| PlannerError::EventNotLocated(key.clone()))?;
    let (lm, distance_m) = landmarks.nearest(at)?;
    let neighbors: Vec<&LabeledWindow> = within(windows, at, config.micro_radius_m)
        .filter(|w| w.key() != key)
        .collect();
    Ok(ContextSummary {
        category: IntentCategory::MicroEvent,
        total_events: neighbors.len() as u64,
        observation_window: Some((event.summary.window_start, event.summary.window_end())),
        hotspots: Vec::new(),
        details: ContextDetails::Micro {
            event: key,
            label: event.label,
            landmark: lm.name.clone(),
            distance_m,
            instability: event.features.instability,
            extreme_event_magnitude: event.features.extreme_event_magnitude,
            mag_mean: event.summary.mag_mean,
            radius_m: config.micro_radius_m,
            neighbors: label_counts(neighbors.iter().copied()),
        },
    })
}

/// Runs the aggregation for `intent` over a snapshot of labeled windows.
pub fn retrieve(
    intent: &Intent,
    windows: &[LabeledWindow],
    landmarks: &LandmarkDirectory,
    config: &PlannerConfig,
) -> Result<ContextSummary, PlannerError> {
    match intent.category {
        IntentCategory::AggressiveDriving => aggressive(windows, landmarks, config),
        IntentCategory::DwellTime => dwell(windows, landmarks, config),
        IntentCategory::EventCounting => Ok(counting(intent, windows)),
        IntentCategory::RouteEfficiency => Ok(route(windows, config)),
        IntentCategory::SpatialPatterns => spatial(intent, windows, landmarks, config),
        IntentCategory::MicroEvent => micro(intent, windows, landmarks, config),
    }
}

/// Scans the whole store, labels it with `model`, and retrieves.
pub fn retrieve_from_store(
    intent: &Intent,
    store: &dyn SummaryStore,
    model: &BehaviorModel,
    landmarks: &LandmarkDirectory,
    config: &PlannerConfig,
) -> Result<ContextSummary, PlannerError> {
    let rows = store.scan(&QueryFilter::all())?;
    let windows = label_windows(rows.into_iter().map(|r| r.summary), model);
    retrieve(intent, &windows, landmarks, config)
}
