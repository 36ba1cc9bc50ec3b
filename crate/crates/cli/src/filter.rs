//! Parsing of the textual filter arguments shared by `store scan` and
//! `GET /events`.

use chrono::DateTime;
use fleetlens_core::cluster::BehaviorLabel;
use fleetlens_core::geo::GeoPoint;
use fleetlens_core::store::{Circle, QueryFilter};
use fleetlens_core::telemetry::FixQuality;
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("invalid time {0:?}: expected epoch milliseconds or RFC 3339")]
    Time(String),
    #[error("invalid location {0:?}: expected lat,lon,radius_m")]
    Near(String),
    #[error("invalid label {0:?}")]
    Label(String),
    #[error("invalid GPS quality {0:?}: expected none, fix2d or fix3d")]
    Quality(String),
    #[error("{0}")]
    Filter(String),
}

/// Raw filter parameters as they arrive from flags or a query string.
#[derive(Clone, Debug, Default, Deserialize)]
pub struct FilterArgs {
    pub from: Option<String>,
    pub to: Option<String>,
    pub near: Option<String>,
    pub label: Option<String>,
    pub min_quality: Option<String>,
}

/// Epoch milliseconds or an RFC 3339 timestamp.
pub fn parse_time(s: &str) -> Result<i64, FilterError> {
    let s = s.trim();
    if let Ok(ms) = s.parse::<i64>() {
        return Ok(ms);
    }
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.timestamp_millis())
        .map_err(|_| FilterError::Time(s.to_owned()))
}

/// `lat,lon,radius_m`.
pub fn parse_near(s: &str) -> Result<Circle, FilterError> {
    let bad = || FilterError::Near(s.to_owned());
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad())?;
    let [lat, lon, radius_m] = parts[..] else {
        return Err(bad());
    };
    let center = GeoPoint::new(lat, lon).map_err(|_| bad())?;
    if !(radius_m.is_finite() && radius_m >= 0.0) {
        return Err(bad());
    }
    Ok(Circle { center, radius_m })
}

impl FilterArgs {
    pub fn to_filter(&self) -> Result<QueryFilter, FilterError> {
        let from = self.from.as_deref().map(parse_time).transpose()?;
        let to = self.to.as_deref().map(parse_time).transpose()?;
        let time = match (from, to) {
            (None, None) => None,
            (a, b) => Some((a.unwrap_or(i64::MIN), b.unwrap_or(i64::MAX))),
        };
        let filter = QueryFilter {
            time,
            near: self.near.as_deref().map(parse_near).transpose()?,
            label: self
                .label
                .as_deref()
                .map(|l| l.parse::<BehaviorLabel>().map_err(|_| FilterError::Label(l.to_owned())))
                .transpose()?,
            min_gps_quality: self
                .min_quality
                .as_deref()
                .map(|q| q.parse::<FixQuality>().map_err(|_| FilterError::Quality(q.to_owned())))
                .transpose()?,
        };
        filter.validate().map_err(|e| FilterError::Filter(e.to_string()))?;
        Ok(filter)
    }
}
