//! Great-circle distance and the landmark directory used to name places.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius used by every distance computation in the pipeline.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("invalid coordinate ({lat}, {lon})")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("landmark directory is empty")]
    EmptyDirectory,
    #[error("duplicate landmark name {0:?}")]
    DuplicateName(String),
    #[error("landmark name must not be empty")]
    EmptyName,
    #[error("failed to read landmark directory {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed landmark directory: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        let point = Self { lat, lon };
        if point.is_valid() {
            Ok(point)
        } else {
            Err(GeoError::InvalidCoordinate { lat, lon })
        }
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
    }

    pub fn distance_to(&self, other: &GeoPoint) -> f64 {
        haversine(*self, *other)
    }
}

/// Great-circle distance in meters on a sphere of radius [`EARTH_RADIUS_M`].
pub fn haversine(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    let h = h.clamp(0.0, 1.0);
    2.0 * EARTH_RADIUS_M * h.sqrt().atan2((1.0 - h).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub name: String,
    pub lat: f64,
    pub lon: f64,
}

impl Landmark {
    pub fn point(&self) -> GeoPoint {
        GeoPoint {
            lat: self.lat,
            lon: self.lon,
        }
    }
}

/// Named places that responses and prompts are allowed to mention.
///
/// Names are unique (case-insensitively) and every coordinate is valid. The
/// on-disk form is a JSON array of `{name, lat, lon}` objects.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
#[serde(transparent)]
pub struct LandmarkDirectory {
    entries: Vec<Landmark>,
}

impl<'de> Deserialize<'de> for LandmarkDirectory {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let entries = Vec::<Landmark>::deserialize(deserializer)?;
        LandmarkDirectory::new(entries).map_err(serde::de::Error::custom)
    }
}

impl LandmarkDirectory {
    pub fn new(entries: Vec<Landmark>) -> Result<Self, GeoError> {
        let mut seen = std::collections::HashSet::new();
        for entry in &entries {
            if entry.name.trim().is_empty() {
                return Err(GeoError::EmptyName);
            }
            GeoPoint::new(entry.lat, entry.lon)?;
            if !seen.insert(entry.name.to_lowercase()) {
                return Err(GeoError::DuplicateName(entry.name.clone()));
            }
        }
        Ok(Self { entries })
    }

    pub fn from_json(text: &str) -> Result<Self, GeoError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GeoError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| GeoError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn entries(&self) -> &[Landmark] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// Case-insensitive lookup by exact name.
    pub fn get(&self, name: &str) -> Option<&Landmark> {
        let needle = name.trim().to_lowercase();
        self.entries.iter().find(|l| l.name.to_lowercase() == needle)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    /// Closest landmark to `point`; equal distances resolve to the
    /// lexicographically smallest name.
    pub fn nearest(&self, point: GeoPoint) -> Result<(&Landmark, f64), GeoError> {
        self.entries
            .iter()
            .map(|l| (l, haversine(point, l.point())))
            .min_by(|(a, da), (b, db)| {
                da.partial_cmp(db)
                    .unwrap_or(Ordering::Equal)
                    .then_with(|| a.name.cmp(&b.name))
            })
            .ok_or(GeoError::EmptyDirectory)
    }
}

/// Free-function form of [`LandmarkDirectory::nearest`] returning an owned name.
pub fn nearest_landmark(
    point: GeoPoint,
    landmarks: &LandmarkDirectory,
) -> Result<(String, f64), GeoError> {
    landmarks
        .nearest(point)
        .map(|(landmark, distance)| (landmark.name.clone(), distance))
}
