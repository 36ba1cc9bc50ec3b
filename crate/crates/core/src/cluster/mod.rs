//! Behavioral features, z-score normalization, K-Means fitting, label
//! assignment, and cluster-quality metrics.

pub mod kmeans;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::telemetry::WindowSummary;
use kmeans::{KMeansRun, Point};

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_RESTARTS: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("need at least {k} feature vectors, got {n}")]
    InsufficientData { n: usize, k: usize },
    #[error("k must be at least 1")]
    InvalidK,
    #[error("feature vector {0} is not finite")]
    NonFinite(usize),
    #[error("cluster {0} is empty")]
    EmptyCluster(usize),
    #[error("silhouette needs at least two clusters")]
    SingleCluster,
    #[error("assignment count {assignments} does not match {points} points")]
    LengthMismatch { points: usize, assignments: usize },
    #[error("unknown behavior label {0:?}")]
    UnknownLabel(String),
}

/// Two features per window: peak maneuver severity and ride instability.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Euclidean norm of the three per-axis p99 accelerations, m/s².
    pub extreme_event_magnitude: f64,
    /// Variance of acceleration magnitude, (m/s²)².
    pub instability: f64,
}

impl FeatureVector {
    pub fn as_point(&self) -> Point {
        [self.extreme_event_magnitude, self.instability]
    }
}

pub fn extract_features(s: &WindowSummary) -> FeatureVector {
    let (x, y, z) = (s.x.p99, s.y.p99, s.z.p99);
    FeatureVector {
        extreme_event_magnitude: (x * x + y * y + z * z).sqrt(),
        instability: s.mag_variance,
    }
}

/// Per-dimension z-score parameters (population standard deviation).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

impl Normalization {
    pub fn fit(features: &[FeatureVector]) -> Self {
        let n = features.len().max(1) as f64;
        let mut mean = [0.0; 2];
        for f in features {
            let p = f.as_point();
            mean[0] += p[0];
            mean[1] += p[1];
        }
        mean = [mean[0] / n, mean[1] / n];
        let mut var = [0.0; 2];
        for f in features {
            let p = f.as_point();
            var[0] += (p[0] - mean[0]).powi(2);
            var[1] += (p[1] - mean[1]).powi(2);
        }
        Self {
            mean,
            std: [(var[0] / n).sqrt(), (var[1] / n).sqrt()],
        }
    }

    /// Degenerate (zero-spread) dimensions map to 0.
    pub fn apply(&self, f: &FeatureVector) -> Point {
        let p = f.as_point();
        std::array::from_fn(|d| {
            if self.std[d] > 0.0 {
                (p[d] - self.mean[d]) / self.std[d]
            } else {
                0.0
            }
        })
    }

    pub fn invert(&self, z: &Point) -> FeatureVector {
        let p: Point = std::array::from_fn(|d| self.mean[d] + z[d] * self.std[d]);
        FeatureVector {
            extreme_event_magnitude: p[0],
            instability: p[1],
        }
    }
}

/// Named driving-behavior profile attached to a window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BehaviorLabel {
    Calm,
    Moderate,
    SlightlyUnstable,
    Aggressive,
    VeryAggressive,
    /// Rank-ordered cluster when the model was fitted with k ≠ 5.
    Cluster(u16),
}

impl BehaviorLabel {
    /// The five named profiles in ascending-instability order.
    pub const NAMED: [BehaviorLabel; 5] = [
        BehaviorLabel::Calm,
        BehaviorLabel::Moderate,
        BehaviorLabel::SlightlyUnstable,
        BehaviorLabel::Aggressive,
        BehaviorLabel::VeryAggressive,
    ];

    pub fn name(&self) -> String {
        match self {
            BehaviorLabel::Calm => "Calm".into(),
            BehaviorLabel::Moderate => "Moderate".into(),
            BehaviorLabel::SlightlyUnstable => "Slightly Unstable".into(),
            BehaviorLabel::Aggressive => "Aggressive".into(),
            BehaviorLabel::VeryAggressive => "Very Aggressive".into(),
            BehaviorLabel::Cluster(i) => format!("Cluster {i}"),
        }
    }

    pub fn is_aggressive(&self) -> bool {
        matches!(self, BehaviorLabel::Aggressive | BehaviorLabel::VeryAggressive)
    }

    pub fn is_calm(&self) -> bool {
        matches!(self, BehaviorLabel::Calm | BehaviorLabel::Moderate)
    }
}

impl fmt::Display for BehaviorLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for BehaviorLabel {
    type Err = ClusterError;

    /// Accepts display names and their snake/camel/kebab spellings.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let squashed: String = s
            .chars()
            .filter(|c| !matches!(c, ' ' | '_' | '-'))
            .collect::<String>()
            .to_lowercase();
        let label = match squashed.as_str() {
            "calm" => BehaviorLabel::Calm,
            "moderate" => BehaviorLabel::Moderate,
            "slightlyunstable" => BehaviorLabel::SlightlyUnstable,
            "aggressive" => BehaviorLabel::Aggressive,
            "veryaggressive" => BehaviorLabel::VeryAggressive,
            other => other
                .strip_prefix("cluster")
                .and_then(|n| n.parse().ok())
                .map(BehaviorLabel::Cluster)
                .ok_or_else(|| ClusterError::UnknownLabel(s.to_owned()))?,
        };
        Ok(label)
    }
}

impl Serialize for BehaviorLabel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for BehaviorLabel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A versioned, immutable set of cluster centres in normalized feature space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehaviorModel {
    pub version: u32,
    pub k: usize,
    pub seed: u64,
    pub normalization: Normalization,
    pub centroids: Vec<Point>,
    /// Label for each centroid index.
    pub label_map: Vec<BehaviorLabel>,
    /// Sum of squared normalized distances to assigned centres.
    pub objective: f64,
    /// Training windows per centroid index.
    pub counts: Vec<usize>,
    /// Objective after each Lloyd step of the winning run.
    #[serde(default)]
    pub objective_history: Vec<f64>,
}

impl BehaviorModel {
    pub fn label_of(&self, index: usize) -> BehaviorLabel {
        self.label_map[index]
    }

    /// Centroid index in normalized space; ties go to the lowest index.
    pub fn assign_index(&self, f: &FeatureVector) -> usize {
        kmeans::nearest(&self.normalization.apply(f), &self.centroids)
    }

    pub fn assign(&self, f: &FeatureVector) -> BehaviorLabel {
        self.label_of(self.assign_index(f))
    }

    /// Centroids mapped back to raw feature units.
    pub fn centroid_features(&self) -> Vec<FeatureVector> {
        self.centroids
            .iter()
            .map(|c| self.normalization.invert(c))
            .collect()
    }

    pub fn index_of(&self, label: BehaviorLabel) -> Option<usize> {
        self.label_map.iter().position(|l| *l == label)
    }

    /// Same centres under a successor version number.
    pub fn with_version(mut self, version: u32) -> Self {
        self.version = version;
        self
    }
}

fn check_input(features: &[FeatureVector], k: usize) -> Result<(), ClusterError> {
    if k == 0 {
        return Err(ClusterError::InvalidK);
    }
    if features.len() < k {
        return Err(ClusterError::InsufficientData {
            n: features.len(),
            k,
        });
    }
    if let Some(i) = features
        .iter()
        .position(|f| !f.extreme_event_magnitude.is_finite() || !f.instability.is_finite())
    {
        return Err(ClusterError::NonFinite(i));
    }
    Ok(())
}

/// Labels for centroids ranked by (instability, extreme magnitude).
fn label_centroids(centroids: &[Point]) -> Vec<BehaviorLabel> {
    let mut order: Vec<usize> = (0..centroids.len()).collect();
    order.sort_by(|&a, &b| {
        centroids[a][1]
            .total_cmp(&centroids[b][1])
            .then(centroids[a][0].total_cmp(&centroids[b][0]))
            .then(a.cmp(&b))
    });
    let mut labels = vec![BehaviorLabel::Calm; centroids.len()];
    for (rank, &idx) in order.iter().enumerate() {
        labels[idx] = if centroids.len() == BehaviorLabel::NAMED.len() {
            BehaviorLabel::NAMED[rank]
        } else {
            BehaviorLabel::Cluster(rank as u16)
        };
    }
    labels
}

fn model_from_run(run: KMeansRun, normalization: Normalization, k: usize, seed: u64) -> BehaviorModel {
    let mut counts = vec![0; k];
    for &j in &run.assignments {
        counts[j] += 1;
    }
    BehaviorModel {
        version: 1,
        k,
        seed,
        normalization,
        label_map: label_centroids(&run.centroids),
        centroids: run.centroids,
        objective: run.objective,
        counts,
        objective_history: run.objective_history,
    }
}

/// Fits a model with the default number of restarts.
pub fn fit(features: &[FeatureVector], k: usize, seed: u64) -> Result<BehaviorModel, ClusterError> {
    fit_with_restarts(features, k, seed, DEFAULT_RESTARTS)
}

pub fn fit_with_restarts(
    features: &[FeatureVector],
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<BehaviorModel, ClusterError> {
    check_input(features, k)?;
    let normalization = Normalization::fit(features);
    let points: Vec<Point> = features.iter().map(|f| normalization.apply(f)).collect();
    let run = kmeans::fit_best(&points, k, seed, restarts);
    Ok(model_from_run(run, normalization, k, seed))
}

/// Objective for each k in `k_min..=k_max`.
///
/// Each k takes the better of a fresh best-of-restarts fit and the previous
/// k's solution grown by one centre, so the curve never rises.
pub fn elbow_curve(
    features: &[FeatureVector],
    k_min: usize,
    k_max: usize,
    seed: u64,
    restarts: usize,
) -> Result<Vec<(usize, f64)>, ClusterError> {
    check_input(features, k_max)?;
    if k_min == 0 || k_min > k_max {
        return Err(ClusterError::InvalidK);
    }
    let normalization = Normalization::fit(features);
    let points: Vec<Point> = features.iter().map(|f| normalization.apply(f)).collect();
    let mut curve = Vec::new();
    let mut previous: Option<KMeansRun> = None;
    for k in k_min..=k_max {
        let mut run = kmeans::fit_best(&points, k, seed, restarts);
        if let Some(prev) = &previous {
            let grown = kmeans::grow(&points, prev);
            if grown.objective < run.objective {
                run = grown;
            }
        }
        curve.push((k, run.objective));
        previous = Some(run);
    }
    Ok(curve)
}

/// Mean silhouette over all points. Singleton clusters contribute 0.
pub fn silhouette(points: &[Point], assignments: &[usize], k: usize) -> Result<f64, ClusterError> {
    if points.len() != assignments.len() {
        return Err(ClusterError::LengthMismatch {
            points: points.len(),
            assignments: assignments.len(),
        });
    }
    if k < 2 {
        return Err(ClusterError::SingleCluster);
    }
    let mut sizes = vec![0usize; k];
    for &a in assignments {
        sizes[a] += 1;
    }
    if let Some(empty) = sizes.iter().position(|&n| n == 0) {
        return Err(ClusterError::EmptyCluster(empty));
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for (i, p) in points.iter().enumerate() {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for (q, &b) in points.iter().zip(assignments) {
            sums[b] += kmeans::sq_dist(p, q).sqrt();
        }
        let own = assignments[i];
        if sizes[own] == 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / points.len() as f64)
}

/// Silhouette of a model on the features it labels.
pub fn model_silhouette(model: &BehaviorModel, features: &[FeatureVector]) -> Result<f64, ClusterError> {
    let points: Vec<Point> = features.iter().map(|f| model.normalization.apply(f)).collect();
    let assignments: Vec<usize> = points
        .iter()
        .map(|p| kmeans::nearest(p, &model.centroids))
        .collect();
    silhouette(&points, &assignments, model.k)
}
