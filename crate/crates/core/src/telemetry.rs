//! Domain types shared by every stage: raw sensor readings, the sampling
//! profile with its raw payload model, and the compact window summary packet.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::geo::GeoPoint;

pub const STANDARD_GRAVITY: f64 = 9.806_65;

/// Decimal places kept for per-axis percentiles in the packet.
pub const PERCENTILE_DECIMALS: i32 = 4;
/// Decimal places kept for anchor coordinates in the packet.
pub const COORDINATE_DECIMALS: i32 = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SampleError {
    #[error("invalid sample: non-finite acceleration ({ax}, {ay}, {az})")]
    NonFinite { ax: f64, ay: f64, az: f64 },
    #[error("invalid GPS fix at {timestamp}: coordinate ({lat}, {lon}) out of range")]
    BadCoordinate { timestamp: i64, lat: f64, lon: f64 },
}

/// Euclidean norm of an acceleration vector.
pub fn magnitude(ax: f64, ay: f64, az: f64) -> Result<f64, SampleError> {
    if !(ax.is_finite() && ay.is_finite() && az.is_finite()) {
        return Err(SampleError::NonFinite { ax, ay, az });
    }
    Ok((ax * ax + ay * ay + az * az).sqrt())
}

/// One accelerometer tick. `timestamp` is UTC milliseconds, axes in m/s².
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawSample {
    pub timestamp: i64,
    pub ax: f64,
    pub ay: f64,
    pub az: f64,
}

impl RawSample {
    pub fn magnitude(&self) -> Result<f64, SampleError> {
        magnitude(self.ax, self.ay, self.az)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FixQuality {
    #[default]
    None,
    Fix2d,
    Fix3d,
}

impl FixQuality {
    pub fn as_str(self) -> &'static str {
        match self {
            FixQuality::None => "none",
            FixQuality::Fix2d => "fix2d",
            FixQuality::Fix3d => "fix3d",
        }
    }
}

impl fmt::Display for FixQuality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FixQuality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(FixQuality::None),
            "fix2d" | "2d" => Ok(FixQuality::Fix2d),
            "fix3d" | "3d" => Ok(FixQuality::Fix3d),
            other => Err(format!("unknown fix quality {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpsFix {
    pub timestamp: i64,
    pub lat: f64,
    pub lon: f64,
    pub fix_quality: FixQuality,
}

impl GpsFix {
    pub fn validate(&self) -> Result<(), SampleError> {
        if GeoPoint::new(self.lat, self.lon).is_err() {
            return Err(SampleError::BadCoordinate {
                timestamp: self.timestamp,
                lat: self.lat,
                lon: self.lon,
            });
        }
        Ok(())
    }

    pub fn point(&self) -> GeoPoint {
        GeoPoint {
            lat: self.lat,
            lon: self.lon,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("sampling profile field `{0}` must be positive and finite")]
    NonPositive(&'static str),
    #[error("rate × window must be a whole number of samples, got {0}")]
    FractionalSamples(f64),
    #[error("window duration must be a whole number of milliseconds, got {0} s")]
    FractionalMillis(f64),
}

/// Sensor sampling and packet sizing parameters for one deployment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingProfile {
    /// Accelerometer rate in Hz.
    pub rate_hz: f64,
    /// Window duration in seconds.
    pub window_secs: f64,
    pub axes: u32,
    /// Bytes used to transmit one scalar reading.
    pub bytes_per_reading: u32,
    /// GPS bytes per window.
    pub gps_bytes: u32,
}

impl SamplingProfile {
    /// 20 Hz accelerometer, 3 s windows, three axes at 8 bytes each, and
    /// three 48-byte GPS fixes per window.
    pub const DEFAULT: SamplingProfile = SamplingProfile {
        rate_hz: 20.0,
        window_secs: 3.0,
        axes: 3,
        bytes_per_reading: 8,
        gps_bytes: 144,
    };

    pub fn validate(&self) -> Result<(), ProfileError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.rate_hz) {
            return Err(ProfileError::NonPositive("rate_hz"));
        }
        if !positive(self.window_secs) {
            return Err(ProfileError::NonPositive("window_secs"));
        }
        if self.axes == 0 {
            return Err(ProfileError::NonPositive("axes"));
        }
        if self.bytes_per_reading == 0 {
            return Err(ProfileError::NonPositive("bytes_per_reading"));
        }
        if self.gps_bytes == 0 {
            return Err(ProfileError::NonPositive("gps_bytes"));
        }
        let samples = self.rate_hz * self.window_secs;
        if (samples - samples.round()).abs() > 1e-9 {
            return Err(ProfileError::FractionalSamples(samples));
        }
        let millis = self.window_secs * 1000.0;
        if (millis - millis.round()).abs() > 1e-6 {
            return Err(ProfileError::FractionalMillis(self.window_secs));
        }
        Ok(())
    }

    pub fn samples_per_window(&self) -> u64 {
        (self.rate_hz * self.window_secs).round() as u64
    }

    pub fn window_ms(&self) -> i64 {
        (self.window_secs * 1000.0).round() as i64
    }
}

impl Default for SamplingProfile {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Bytes a window would cost if every raw reading were transmitted:
/// `rate × window × axes × bytes_per_reading + gps_bytes`.
pub fn raw_payload_bytes(profile: &SamplingProfile) -> u64 {
    profile.samples_per_window() * u64::from(profile.axes) * u64::from(profile.bytes_per_reading)
        + u64::from(profile.gps_bytes)
}

/// Nearest-rank percentiles of one axis within a window.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p1: f64,
    pub p10: f64,
    pub p90: f64,
    pub p99: f64,
}

impl Percentiles {
    pub const LEVELS: [f64; 4] = [1.0, 10.0, 90.0, 99.0];

    pub fn from_array(values: [f64; 4]) -> Self {
        Self {
            p1: values[0],
            p10: values[1],
            p90: values[2],
            p99: values[3],
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.p1, self.p10, self.p90, self.p99]
    }

    pub fn is_ordered(&self) -> bool {
        self.p1 <= self.p10 && self.p10 <= self.p90 && self.p90 <= self.p99
    }
}

/// The per-window packet sent from edge to cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSummary {
    pub vehicle_id: String,
    /// UTC milliseconds.
    pub window_start: i64,
    pub window_secs: f64,
    pub mag_mean: f64,
    pub mag_variance: f64,
    pub x: Percentiles,
    pub y: Percentiles,
    pub z: Percentiles,
    /// Present iff `gps_quality` is not [`FixQuality::None`].
    pub anchor: Option<GeoPoint>,
    pub gps_quality: FixQuality,
    pub sample_count: u32,
}

impl WindowSummary {
    pub fn window_end(&self) -> i64 {
        self.window_start + (self.window_secs * 1000.0).round() as i64
    }

    /// Anchor point when its fix quality is at least `min`.
    pub fn located(&self, min: FixQuality) -> Option<GeoPoint> {
        if self.gps_quality >= min && self.gps_quality > FixQuality::None {
            self.anchor
        } else {
            None
        }
    }

    /// Quantizes percentiles and coordinates to the packet's fixed precision.
    /// Canonical summaries survive an encode/decode cycle bit for bit.
    pub fn canonical(&self) -> WindowSummary {
        let q = |p: Percentiles| {
            Percentiles::from_array(p.to_array().map(|v| quantize(v, PERCENTILE_DECIMALS)))
        };
        WindowSummary {
            x: q(self.x),
            y: q(self.y),
            z: q(self.z),
            anchor: self.anchor.map(|a| GeoPoint {
                lat: quantize(a.lat, COORDINATE_DECIMALS),
                lon: quantize(a.lon, COORDINATE_DECIMALS),
            }),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.vehicle_id.is_empty() {
            return Err("empty vehicle_id".into());
        }
        let finite = [self.window_secs, self.mag_mean, self.mag_variance]
            .into_iter()
            .chain(self.x.to_array())
            .chain(self.y.to_array())
            .chain(self.z.to_array())
            .all(f64::is_finite);
        if !finite {
            return Err("non-finite statistic".into());
        }
        if self.window_secs <= 0.0 {
            return Err("window duration must be positive".into());
        }
        if self.mag_variance < 0.0 {
            return Err("negative variance".into());
        }
        for (axis, p) in [("x", self.x), ("y", self.y), ("z", self.z)] {
            if !p.is_ordered() {
                return Err(format!("{axis} percentiles out of order"));
            }
        }
        match (self.anchor, self.gps_quality) {
            (None, FixQuality::None) => {}
            (Some(a), q) if q != FixQuality::None => {
                if !a.is_valid() {
                    return Err("anchor coordinate out of range".into());
                }
            }
            _ => return Err("anchor presence disagrees with gps_quality".into()),
        }
        Ok(())
    }
}

/// Round to a fixed number of decimals. The result is the double nearest to
/// the printed decimal, so `format!("{:.d$}")` followed by parsing is exact.
pub fn quantize(value: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    (value * scale).round() / scale
}

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("summary packet is not valid JSON: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("summary packet is not a JSON object")]
    NotAnObject,
    #[error("summary packet is missing key `{0}`")]
    MissingKey(&'static str),
    #[error("summary packet key `{key}` is invalid: {reason}")]
    InvalidValue { key: &'static str, reason: String },
    #[error("summary is not encodable: {0}")]
    InvalidSummary(String),
}

/// Encodes a summary as a single compact JSON object with short keys.
///
/// Percentiles are written with 4 decimals and anchor coordinates with 6;
/// mean and variance use the shortest exact representation.
pub fn encode_summary(summary: &WindowSummary) -> Result<Vec<u8>, CodecError> {
    summary.validate().map_err(CodecError::InvalidSummary)?;
    Ok(encode_unchecked(summary).into_bytes())
}

fn encode_unchecked(s: &WindowSummary) -> String {
    use std::fmt::Write;

    let pct = |p: Percentiles| {
        let [a, b, c, d] = p.to_array();
        let dp = PERCENTILE_DECIMALS as usize;
        format!("[{a:.dp$},{b:.dp$},{c:.dp$},{d:.dp$}]")
    };
    let float = |v: f64| serde_json::to_string(&v).expect("finite floats always serialize");
    let mut out = String::with_capacity(320);
    let vid = serde_json::to_string(&s.vehicle_id).expect("strings always serialize");
    write!(
        out,
        "{{\"vid\":{vid},\"ws\":{},\"wd\":{},\"mm\":{},\"mv\":{},\"px\":{},\"py\":{},\"pz\":{},",
        s.window_start,
        float(s.window_secs),
        float(s.mag_mean),
        float(s.mag_variance),
        pct(s.x),
        pct(s.y),
        pct(s.z),
    )
    .unwrap();
    let dp = COORDINATE_DECIMALS as usize;
    match s.anchor {
        Some(a) => write!(out, "\"lat\":{:.dp$},\"lon\":{:.dp$},", a.lat, a.lon).unwrap(),
        None => out.push_str("\"lat\":null,\"lon\":null,"),
    }
    write!(out, "\"gq\":\"{}\",\"n\":{}}}", s.gps_quality, s.sample_count).unwrap();
    out
}

pub fn decode_summary(bytes: &[u8]) -> Result<WindowSummary, CodecError> {
    let value: Value = serde_json::from_slice(bytes)?;
    let obj = value.as_object().ok_or(CodecError::NotAnObject)?;
    decode_object(obj)
}

fn field<'a>(obj: &'a Map<String, Value>, key: &'static str) -> Result<&'a Value, CodecError> {
    obj.get(key).ok_or(CodecError::MissingKey(key))
}

fn invalid(key: &'static str, reason: impl Into<String>) -> CodecError {
    CodecError::InvalidValue {
        key,
        reason: reason.into(),
    }
}

fn number(obj: &Map<String, Value>, key: &'static str) -> Result<f64, CodecError> {
    field(obj, key)?
        .as_f64()
        .ok_or_else(|| invalid(key, "expected a number"))
}

fn percentiles(obj: &Map<String, Value>, key: &'static str) -> Result<Percentiles, CodecError> {
    let items = field(obj, key)?
        .as_array()
        .ok_or_else(|| invalid(key, "expected an array of 4 numbers"))?;
    if items.len() != 4 {
        return Err(invalid(key, format!("expected 4 values, got {}", items.len())));
    }
    let mut out = [0.0; 4];
    for (slot, item) in out.iter_mut().zip(items) {
        *slot = item.as_f64().ok_or_else(|| invalid(key, "expected numbers"))?;
    }
    Ok(Percentiles::from_array(out))
}

fn decode_object(obj: &Map<String, Value>) -> Result<WindowSummary, CodecError> {
    let vehicle_id = field(obj, "vid")?
        .as_str()
        .ok_or_else(|| invalid("vid", "expected a string"))?
        .to_owned();
    let window_start = field(obj, "ws")?
        .as_i64()
        .ok_or_else(|| invalid("ws", "expected integer milliseconds"))?;
    let gps_quality: FixQuality = field(obj, "gq")?
        .as_str()
        .ok_or_else(|| invalid("gq", "expected a string"))?
        .parse()
        .map_err(|e: String| invalid("gq", e))?;
    let lat = field(obj, "lat")?;
    let lon = field(obj, "lon")?;
    let anchor = match (lat, lon) {
        (Value::Null, Value::Null) => None,
        (lat, lon) => Some(GeoPoint {
            lat: lat.as_f64().ok_or_else(|| invalid("lat", "expected a number"))?,
            lon: lon.as_f64().ok_or_else(|| invalid("lon", "expected a number"))?,
        }),
    };
    let sample_count = field(obj, "n")?
        .as_u64()
        .and_then(|n| u32::try_from(n).ok())
        .ok_or_else(|| invalid("n", "expected a non-negative integer"))?;
    let summary = WindowSummary {
        vehicle_id,
        window_start,
        window_secs: number(obj, "wd")?,
        mag_mean: number(obj, "mm")?,
        mag_variance: number(obj, "mv")?,
        x: percentiles(obj, "px")?,
        y: percentiles(obj, "py")?,
        z: percentiles(obj, "pz")?,
        anchor,
        gps_quality,
        sample_count,
    };
    summary.validate().map_err(CodecError::InvalidSummary)?;
    Ok(summary)
}
