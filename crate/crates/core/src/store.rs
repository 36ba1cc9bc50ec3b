//! Summary storage: one JSON packet per window under
//! `<root>/<vehicle>/<YYYY-MM-DD>/<window_start>.json`, plus versioned
//! label assignments. Records are interpreted only when read.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::BehaviorLabel;
use crate::geo::GeoPoint;
use crate::telemetry::{decode_summary, encode_summary, CodecError, FixQuality, WindowSummary};

const LABELS_DIR: &str = "_labels";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt record at {path}: {source}")]
    Corrupt {
        path: PathBuf,
        #[source]
        source: CodecError,
    },
    #[error("corrupt label set at {path}: {source}")]
    CorruptLabels {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid summary: {0}")]
    InvalidSummary(String),
    #[error("invalid vehicle id {0:?}")]
    InvalidVehicleId(String),
    #[error("invalid filter: {0}")]
    InvalidFilter(String),
    #[error("invalid store key {0:?}, expected <vehicle>@<window_start>")]
    InvalidKey(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_owned(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StoreKey {
    pub vehicle_id: String,
    pub window_start: i64,
}

impl StoreKey {
    pub fn new(vehicle_id: impl Into<String>, window_start: i64) -> Self {
        Self {
            vehicle_id: vehicle_id.into(),
            window_start,
        }
    }

    pub fn of(s: &WindowSummary) -> Self {
        Self::new(s.vehicle_id.clone(), s.window_start)
    }
}

impl fmt::Display for StoreKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.vehicle_id, self.window_start)
    }
}

impl FromStr for StoreKey {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (vid, ws) = s
            .rsplit_once('@')
            .ok_or_else(|| StoreError::InvalidKey(s.to_owned()))?;
        let ws = ws
            .parse()
            .map_err(|_| StoreError::InvalidKey(s.to_owned()))?;
        if vid.is_empty() {
            return Err(StoreError::InvalidKey(s.to_owned()));
        }
        Ok(Self::new(vid, ws))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub center: GeoPoint,
    pub radius_m: f64,
}

impl Circle {
    pub fn contains(&self, p: GeoPoint) -> bool {
        self.center.distance_to(&p) <= self.radius_m
    }
}

/// Conjunction of optional predicates; an empty filter matches everything.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryFilter {
    /// Half-open `[start, end)` range on `window_start`, UTC ms.
    pub time: Option<(i64, i64)>,
    pub near: Option<Circle>,
    pub label: Option<BehaviorLabel>,
    pub min_gps_quality: Option<FixQuality>,
}

impl QueryFilter {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        if let Some((start, end)) = self.time {
            if start > end {
                return Err(StoreError::InvalidFilter(format!(
                    "time range start {start} is after end {end}"
                )));
            }
        }
        if let Some(c) = &self.near {
            if !(c.radius_m > 0.0 && c.radius_m.is_finite()) {
                return Err(StoreError::InvalidFilter(format!(
                    "radius must be positive, got {}",
                    c.radius_m
                )));
            }
            if !c.center.is_valid() {
                return Err(StoreError::InvalidFilter("circle centre out of range".into()));
            }
        }
        Ok(())
    }

    /// Quality floor actually applied: location queries never accept
    /// windows without a fix.
    pub fn effective_min_quality(&self) -> Option<FixQuality> {
        match (self.near, self.min_gps_quality) {
            (Some(_), q) => Some(q.unwrap_or(FixQuality::Fix2d).max(FixQuality::Fix2d)),
            (None, q) => q,
        }
    }

    pub fn matches(&self, s: &WindowSummary, label: Option<BehaviorLabel>) -> bool {
        if let Some((start, end)) = self.time {
            if s.window_start < start || s.window_start >= end {
                return false;
            }
        }
        if let Some(min) = self.effective_min_quality() {
            if s.gps_quality < min {
                return false;
            }
        }
        if let Some(circle) = &self.near {
            match s.anchor {
                Some(p) if circle.contains(p) => {}
                _ => return false,
            }
        }
        if let Some(want) = self.label {
            if label != Some(want) {
                return false;
            }
        }
        true
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StoredSummary {
    pub summary: WindowSummary,
    /// Label from the latest label set, if the window has been labeled.
    pub label: Option<BehaviorLabel>,
}

impl StoredSummary {
    pub fn key(&self) -> StoreKey {
        StoreKey::of(&self.summary)
    }
}

/// Window labels produced by one model version.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabelSet {
    pub model_version: u32,
    pub labels: BTreeMap<StoreKey, BehaviorLabel>,
}

#[derive(Serialize, Deserialize)]
struct LabelSetFile {
    model_version: u32,
    labels: Vec<LabelEntry>,
}

#[derive(Serialize, Deserialize)]
struct LabelEntry {
    vehicle_id: String,
    window_start: i64,
    label: BehaviorLabel,
}

impl Serialize for LabelSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        LabelSetFile {
            model_version: self.model_version,
            labels: self
                .labels
                .iter()
                .map(|(k, l)| LabelEntry {
                    vehicle_id: k.vehicle_id.clone(),
                    window_start: k.window_start,
                    label: *l,
                })
                .collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for LabelSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let file = LabelSetFile::deserialize(deserializer)?;
        Ok(Self {
            model_version: file.model_version,
            labels: file
                .labels
                .into_iter()
                .map(|e| (StoreKey::new(e.vehicle_id, e.window_start), e.label))
                .collect(),
        })
    }
}

/// Storage interface shared by the filesystem and in-memory backends.
pub trait SummaryStore: Send + Sync {
    /// Inserts or replaces the summary at its key.
    fn put(&self, summary: &WindowSummary) -> Result<StoreKey, StoreError>;
    fn get(&self, key: &StoreKey) -> Result<Option<WindowSummary>, StoreError>;
    /// Matching summaries ordered by `(vehicle_id, window_start)`.
    fn scan(&self, filter: &QueryFilter) -> Result<Vec<StoredSummary>, StoreError>;
    fn len(&self) -> Result<usize, StoreError>;
    /// Records a label set. Earlier versions are retained, not overwritten.
    fn put_labels(&self, labels: &LabelSet) -> Result<(), StoreError>;
    /// The label set with the highest model version.
    fn latest_labels(&self) -> Result<Option<LabelSet>, StoreError>;

    fn is_empty(&self) -> Result<bool, StoreError> {
        Ok(self.len()? == 0)
    }
}

fn check_summary(s: &WindowSummary) -> Result<(), StoreError> {
    validate_vehicle_id(&s.vehicle_id)?;
    s.validate().map_err(StoreError::InvalidSummary)
}

/// Vehicle ids become directory names, so they must be a single safe path
/// component that cannot collide with the store's own `_`/`.` entries.
pub fn validate_vehicle_id(id: &str) -> Result<(), StoreError> {
    let bad = id.is_empty()
        || id.starts_with('.')
        || id.starts_with('_')
        || id.chars().any(|c| c == '/' || c == '\\' || c.is_control());
    if bad {
        Err(StoreError::InvalidVehicleId(id.to_owned()))
    } else {
        Ok(())
    }
}

fn scan_sorted<'a, I>(items: I, filter: &QueryFilter, labels: Option<&LabelSet>) -> Vec<StoredSummary>
where
    I: IntoIterator<Item = &'a WindowSummary>,
{
    let mut out: Vec<StoredSummary> = items
        .into_iter()
        .filter_map(|s| {
            let label = labels.and_then(|l| l.labels.get(&StoreKey::of(s)).copied());
            filter.matches(s, label).then(|| StoredSummary {
                summary: s.clone(),
                label,
            })
        })
        .collect();
    out.sort_by(|a, b| {
        (a.summary.vehicle_id.as_str(), a.summary.window_start)
            .cmp(&(b.summary.vehicle_id.as_str(), b.summary.window_start))
    });
    out
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    records: RwLock<BTreeMap<StoreKey, WindowSummary>>,
    labels: RwLock<BTreeMap<u32, LabelSet>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl SummaryStore for MemoryStore {
    fn put(&self, summary: &WindowSummary) -> Result<StoreKey, StoreError> {
        check_summary(summary)?;
        let key = StoreKey::of(summary);
        self.records
            .write()
            .expect("store lock poisoned")
            .insert(key.clone(), summary.clone());
        Ok(key)
    }

    fn get(&self, key: &StoreKey) -> Result<Option<WindowSummary>, StoreError> {
        Ok(self.records.read().expect("store lock poisoned").get(key).cloned())
    }

    fn scan(&self, filter: &QueryFilter) -> Result<Vec<StoredSummary>, StoreError> {
        filter.validate()?;
        let labels = self.latest_labels()?;
        let records = self.records.read().expect("store lock poisoned");
        Ok(scan_sorted(records.values(), filter, labels.as_ref()))
    }

    fn len(&self) -> Result<usize, StoreError> {
        Ok(self.records.read().expect("store lock poisoned").len())
    }

    fn put_labels(&self, labels: &LabelSet) -> Result<(), StoreError> {
        self.labels
            .write()
            .expect("store lock poisoned")
            .insert(labels.model_version, labels.clone());
        Ok(())
    }

    fn latest_labels(&self) -> Result<Option<LabelSet>, StoreError> {
        Ok(self
            .labels
            .read()
            .expect("store lock poisoned")
            .values()
            .next_back()
            .cloned())
    }
}

/// Filesystem-backed store. Writes go to a hidden temporary file that is
/// renamed into place, so readers only ever see complete records.
#[derive(Debug)]
pub struct FsStore {
    root: PathBuf,
    tmp_counter: AtomicU64,
}

impl FsStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        Ok(Self {
            root,
            tmp_counter: AtomicU64::new(0),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn day(window_start: i64) -> String {
        DateTime::<Utc>::from_timestamp_millis(window_start)
            .map(|t| t.format("%Y-%m-%d").to_string())
            .unwrap_or_else(|| "invalid-date".into())
    }

    pub fn path_for(&self, key: &StoreKey) -> PathBuf {
        self.root
            .join(&key.vehicle_id)
            .join(Self::day(key.window_start))
            .join(format!("{}.json", key.window_start))
    }

    fn write_atomic(&self, path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
        let dir = path.parent().expect("record paths have a parent");
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let n = self.tmp_counter.fetch_add(1, Ordering::Relaxed);
        let tmp = dir.join(format!(
            ".{}.{}.{n}.tmp",
            path.file_name().and_then(|s| s.to_str()).unwrap_or("record"),
            std::process::id()
        ));
        fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
        fs::rename(&tmp, path).map_err(io_err(path))
    }

    fn read_record(path: &Path) -> Result<WindowSummary, StoreError> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        decode_summary(&bytes).map_err(|source| StoreError::Corrupt {
            path: path.to_owned(),
            source,
        })
    }

    fn visible_entries(dir: &Path) -> Result<Vec<PathBuf>, StoreError> {
        let mut out = Vec::new();
        let entries = match fs::read_dir(dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
            Err(e) => return Err(io_err(dir)(e)),
        };
        for entry in entries {
            let entry = entry.map_err(io_err(dir))?;
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if name.starts_with('.') || name.starts_with('_') {
                continue;
            }
            out.push(entry.path());
        }
        out.sort();
        Ok(out)
    }

    /// Whether a date directory can hold windows in `[start, end)`.
    fn day_may_overlap(dir: &Path, time: Option<(i64, i64)>) -> bool {
        let Some((start, end)) = time else {
            return true;
        };
        let Some(day) = dir
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| NaiveDate::parse_from_str(n, "%Y-%m-%d").ok())
        else {
            return true;
        };
        let day_start = day
            .and_hms_opt(0, 0, 0)
            .expect("midnight exists")
            .and_utc()
            .timestamp_millis();
        let day_end = day_start + 86_400_000;
        day_start < end && start < day_end
    }

    fn all_records(&self, time: Option<(i64, i64)>) -> Result<Vec<WindowSummary>, StoreError> {
        let mut out = Vec::new();
        for vehicle in Self::visible_entries(&self.root)? {
            if !vehicle.is_dir() {
                continue;
            }
            for day in Self::visible_entries(&vehicle)? {
                if !day.is_dir() || !Self::day_may_overlap(&day, time) {
                    continue;
                }
                for file in Self::visible_entries(&day)? {
                    if file.extension().and_then(|e| e.to_str()) == Some("json") {
                        out.push(Self::read_record(&file)?);
                    }
                }
            }
        }
        Ok(out)
    }

    fn labels_dir(&self) -> PathBuf {
        self.root.join(LABELS_DIR)
    }

    pub fn label_path(&self, version: u32) -> PathBuf {
        self.labels_dir().join(format!("v{version:06}.json"))
    }

    /// Versions with a stored label set, ascending.
    pub fn label_versions(&self) -> Result<Vec<u32>, StoreError> {
        let dir = self.labels_dir();
        let mut versions: Vec<u32> = Self::visible_entries(&dir)?
            .iter()
            .filter_map(|p| {
                p.file_stem()?
                    .to_str()?
                    .strip_prefix('v')?
                    .parse()
                    .ok()
            })
            .collect();
        versions.sort_unstable();
        Ok(versions)
    }

    pub fn labels_at(&self, version: u32) -> Result<Option<LabelSet>, StoreError> {
        let path = self.label_path(version);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(io_err(&path)(e)),
        };
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|source| StoreError::CorruptLabels { path, source })
    }
}

impl SummaryStore for FsStore {
    fn put(&self, summary: &WindowSummary) -> Result<StoreKey, StoreError> {
        check_summary(summary)?;
        let key = StoreKey::of(summary);
        let bytes = encode_summary(summary).map_err(|source| StoreError::Corrupt {
            path: self.path_for(&key),
            source,
        })?;
        self.write_atomic(&self.path_for(&key), &bytes)?;
        Ok(key)
    }

    fn get(&self, key: &StoreKey) -> Result<Option<WindowSummary>, StoreError> {
        if validate_vehicle_id(&key.vehicle_id).is_err() {
            return Ok(None);
        }
        let path = self.path_for(key);
        if !path.exists() {
            return Ok(None);
        }
        Self::read_record(&path).map(Some)
    }

    fn scan(&self, filter: &QueryFilter) -> Result<Vec<StoredSummary>, StoreError> {
        filter.validate()?;
        let labels = self.latest_labels()?;
        let records = self.all_records(filter.time)?;
        Ok(scan_sorted(records.iter(), filter, labels.as_ref()))
    }

    fn len(&self) -> Result<usize, StoreError> {
        Ok(self.all_records(None)?.len())
    }

    fn put_labels(&self, labels: &LabelSet) -> Result<(), StoreError> {
        let path = self.label_path(labels.model_version);
        let bytes = serde_json::to_vec(labels).expect("label sets always serialize");
        self.write_atomic(&path, &bytes)
    }

    fn latest_labels(&self) -> Result<Option<LabelSet>, StoreError> {
        match self.label_versions()?.last() {
            Some(&v) => self.labels_at(v),
            None => Ok(None),
        }
    }
}
