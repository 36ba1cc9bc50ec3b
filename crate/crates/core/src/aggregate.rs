//! Edge tier: tumbling windows over replayed telemetry, per-window
//! statistics, and data-reduction accounting.

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

use crate::telemetry::{
    encode_summary, raw_payload_bytes, CodecError, FixQuality, GpsFix, Percentiles, ProfileError,
    RawSample, SampleError, SamplingProfile, WindowSummary,
};

#[derive(Debug, Error)]
pub enum AggregateError {
    #[error("window has no accelerometer samples")]
    EmptyWindow,
    #[error("percentile level {0} is outside (0, 100)")]
    InvalidPercentile(f64),
    #[error("timestamp {timestamp} is outside window [{start}, {end})")]
    OutsideWindow { timestamp: i64, start: i64, end: i64 },
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("telemetry line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("failed to read telemetry: {0}")]
    Io(#[from] std::io::Error),
}

/// Nearest-rank percentile: the element at 1-based rank `⌈p/100 · n⌉` of the
/// sorted values.
pub fn percentile(values: &[f64], p: f64) -> Result<f64, AggregateError> {
    if values.is_empty() {
        return Err(AggregateError::EmptyWindow);
    }
    if !(p > 0.0 && p < 100.0) {
        return Err(AggregateError::InvalidPercentile(p));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(nearest_rank(&sorted, p))
}

fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    // p·n is exact for integral levels, so the ceiling lands on whole ranks.
    let rank = (p * n as f64 / 100.0).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

fn axis_percentiles(mut values: Vec<f64>) -> Percentiles {
    values.sort_by(f64::total_cmp);
    Percentiles::from_array(Percentiles::LEVELS.map(|p| nearest_rank(&values, p)))
}

/// Samples and fixes collected for one vehicle's tumbling window.
#[derive(Clone, Debug)]
pub struct WindowAccumulator {
    pub vehicle_id: String,
    pub window_start: i64,
    pub window_ms: i64,
    pub samples: Vec<RawSample>,
    pub fixes: Vec<GpsFix>,
}

impl WindowAccumulator {
    pub fn new(vehicle_id: impl Into<String>, window_start: i64, window_ms: i64) -> Self {
        Self {
            vehicle_id: vehicle_id.into(),
            window_start,
            window_ms,
            samples: Vec::new(),
            fixes: Vec::new(),
        }
    }

    fn check(&self, timestamp: i64) -> Result<(), AggregateError> {
        let end = self.window_start + self.window_ms;
        if timestamp < self.window_start || timestamp >= end {
            return Err(AggregateError::OutsideWindow {
                timestamp,
                start: self.window_start,
                end,
            });
        }
        Ok(())
    }

    pub fn push_sample(&mut self, sample: RawSample) -> Result<(), AggregateError> {
        self.check(sample.timestamp)?;
        sample.magnitude()?;
        self.samples.push(sample);
        Ok(())
    }

    pub fn push_fix(&mut self, fix: GpsFix) -> Result<(), AggregateError> {
        self.check(fix.timestamp)?;
        fix.validate()?;
        self.fixes.push(fix);
        Ok(())
    }
}

/// Start of the tumbling window containing `timestamp`.
pub fn window_start_for(timestamp: i64, window_ms: i64) -> i64 {
    timestamp.div_euclid(window_ms) * window_ms
}

/// Computes the summary for a finished window.
///
/// Magnitude statistics use the population variance; percentiles are
/// nearest-rank per axis; the anchor is the last fix of the best quality seen.
pub fn close_window(
    acc: &WindowAccumulator,
    profile: &SamplingProfile,
) -> Result<WindowSummary, AggregateError> {
    if acc.samples.is_empty() {
        return Err(AggregateError::EmptyWindow);
    }
    let mut samples = acc.samples.clone();
    samples.sort_by_key(|s| s.timestamp);

    let magnitudes = samples
        .iter()
        .map(RawSample::magnitude)
        .collect::<Result<Vec<_>, _>>()?;
    let (mag_mean, mag_variance) = mean_and_variance(&magnitudes);

    let best = acc
        .fixes
        .iter()
        .enumerate()
        .filter(|(_, f)| f.fix_quality > FixQuality::None)
        .max_by_key(|(i, f)| (f.fix_quality, f.timestamp, *i))
        .map(|(_, f)| f);

    Ok(WindowSummary {
        vehicle_id: acc.vehicle_id.clone(),
        window_start: acc.window_start,
        window_secs: profile.window_secs,
        mag_mean,
        mag_variance,
        x: axis_percentiles(samples.iter().map(|s| s.ax).collect()),
        y: axis_percentiles(samples.iter().map(|s| s.ay).collect()),
        z: axis_percentiles(samples.iter().map(|s| s.az).collect()),
        anchor: best.map(GpsFix::point),
        gps_quality: best.map_or(FixQuality::None, |f| f.fix_quality),
        sample_count: samples.len() as u32,
    })
}

/// Two-pass mean and population variance, shifted by the first value so a
/// constant series yields exactly its value and exactly zero variance.
fn mean_and_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let shift = values[0];
    let mean_offset = values.iter().map(|v| v - shift).sum::<f64>() / n;
    let variance = values
        .iter()
        .map(|v| {
            let d = v - shift - mean_offset;
            d * d
        })
        .sum::<f64>()
        / n;
    (shift + mean_offset, variance)
}

/// One line of replayed telemetry, discriminated by its `type` field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum TelemetryRecord {
    Accel {
        vehicle_id: String,
        timestamp: i64,
        ax: f64,
        ay: f64,
        az: f64,
    },
    Gps {
        vehicle_id: String,
        timestamp: i64,
        lat: f64,
        lon: f64,
        fix_quality: FixQuality,
    },
}

impl TelemetryRecord {
    pub fn vehicle_id(&self) -> &str {
        match self {
            TelemetryRecord::Accel { vehicle_id, .. } | TelemetryRecord::Gps { vehicle_id, .. } => {
                vehicle_id
            }
        }
    }

    pub fn timestamp(&self) -> i64 {
        match self {
            TelemetryRecord::Accel { timestamp, .. } | TelemetryRecord::Gps { timestamp, .. } => {
                *timestamp
            }
        }
    }

    pub fn sample(vehicle_id: impl Into<String>, s: RawSample) -> Self {
        TelemetryRecord::Accel {
            vehicle_id: vehicle_id.into(),
            timestamp: s.timestamp,
            ax: s.ax,
            ay: s.ay,
            az: s.az,
        }
    }

    pub fn fix(vehicle_id: impl Into<String>, f: GpsFix) -> Self {
        TelemetryRecord::Gps {
            vehicle_id: vehicle_id.into(),
            timestamp: f.timestamp,
            lat: f.lat,
            lon: f.lon,
            fix_quality: f.fix_quality,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReductionReport {
    pub windows: u64,
    pub raw_bytes_projected: u64,
    pub aggregated_bytes: u64,
    pub reduction_pct: f64,
    /// Records that arrived more than one window late.
    pub dropped_records: u64,
    /// Windows that saw GPS fixes but no accelerometer samples.
    pub gap_windows: u64,
    /// Trailing windows still short of a full window when the stream ended.
    pub truncated_windows: u64,
}

impl ReductionReport {
    pub fn per_window_raw_bytes(&self) -> f64 {
        if self.windows == 0 {
            0.0
        } else {
            self.raw_bytes_projected as f64 / self.windows as f64
        }
    }

    pub fn mean_packet_bytes(&self) -> f64 {
        if self.windows == 0 {
            0.0
        } else {
            self.aggregated_bytes as f64 / self.windows as f64
        }
    }
}

#[derive(Clone, Debug)]
pub struct ReplayOutput {
    /// Canonical summaries ordered by `(vehicle_id, window_start)`.
    pub summaries: Vec<WindowSummary>,
    /// Encoded packet length for each summary, index-aligned.
    pub packet_sizes: Vec<usize>,
    pub report: ReductionReport,
}

#[derive(Debug, Default)]
struct VehicleWindows {
    open: BTreeMap<i64, WindowAccumulator>,
    newest: Option<i64>,
}

/// Incremental windowing over a telemetry stream for any number of vehicles.
///
/// Each vehicle keeps its newest window and the one before it open; a record
/// that falls further behind than that is dropped and counted.
#[derive(Debug)]
pub struct Replay {
    profile: SamplingProfile,
    window_ms: i64,
    vehicles: BTreeMap<String, VehicleWindows>,
    summaries: Vec<WindowSummary>,
    dropped: u64,
    gaps: u64,
}

impl Replay {
    pub fn new(profile: SamplingProfile) -> Result<Self, AggregateError> {
        profile.validate()?;
        Ok(Self {
            window_ms: profile.window_ms(),
            profile,
            vehicles: BTreeMap::new(),
            summaries: Vec::new(),
            dropped: 0,
            gaps: 0,
        })
    }

    pub fn push(&mut self, record: TelemetryRecord) -> Result<(), AggregateError> {
        let window_ms = self.window_ms;
        let ws = window_start_for(record.timestamp(), window_ms);
        let state = self
            .vehicles
            .entry(record.vehicle_id().to_owned())
            .or_default();
        if let Some(newest) = state.newest {
            if ws < newest - window_ms {
                debug!(vehicle = record.vehicle_id(), ts = record.timestamp(), "dropping late record");
                self.dropped += 1;
                return Ok(());
            }
        }
        let acc = state
            .open
            .entry(ws)
            .or_insert_with(|| WindowAccumulator::new(record.vehicle_id(), ws, window_ms));
        match record {
            TelemetryRecord::Accel {
                timestamp,
                ax,
                ay,
                az,
                ..
            } => acc.push_sample(RawSample {
                timestamp,
                ax,
                ay,
                az,
            })?,
            TelemetryRecord::Gps {
                timestamp,
                lat,
                lon,
                fix_quality,
                ..
            } => acc.push_fix(GpsFix {
                timestamp,
                lat,
                lon,
                fix_quality,
            })?,
        }
        if state.newest.is_none_or(|n| ws > n) {
            state.newest = Some(ws);
            let horizon = ws - window_ms;
            let expired: Vec<i64> = state.open.range(..horizon).map(|(k, _)| *k).collect();
            for key in expired {
                let acc = state.open.remove(&key).expect("key from range");
                Self::emit(&acc, &self.profile, &mut self.summaries, &mut self.gaps)?;
            }
        }
        Ok(())
    }

    fn emit(
        acc: &WindowAccumulator,
        profile: &SamplingProfile,
        out: &mut Vec<WindowSummary>,
        gaps: &mut u64,
    ) -> Result<(), AggregateError> {
        match close_window(acc, profile) {
            Ok(summary) => {
                out.push(summary.canonical());
                Ok(())
            }
            Err(AggregateError::EmptyWindow) => {
                warn!(
                    vehicle = %acc.vehicle_id,
                    window_start = acc.window_start,
                    fixes = acc.fixes.len(),
                    "window has no accelerometer samples; skipping"
                );
                *gaps += 1;
                Ok(())
            }
            Err(e) => Err(e),
        }
    }

    /// Flushes the remaining open windows and builds the reduction report.
    pub fn finish(mut self) -> Result<ReplayOutput, AggregateError> {
        let expected = self.profile.samples_per_window();
        let mut truncated = 0;
        for state in std::mem::take(&mut self.vehicles).into_values() {
            for acc in state.open.into_values() {
                if (acc.samples.len() as u64) < expected && !acc.samples.is_empty() {
                    truncated += 1;
                    continue;
                }
                Self::emit(&acc, &self.profile, &mut self.summaries, &mut self.gaps)?;
            }
        }
        self.summaries.sort_by(|a, b| {
            a.vehicle_id
                .cmp(&b.vehicle_id)
                .then(a.window_start.cmp(&b.window_start))
        });
        let packet_sizes = self
            .summaries
            .iter()
            .map(|s| encode_summary(s).map(|b| b.len()))
            .collect::<Result<Vec<_>, _>>()?;
        let windows = self.summaries.len() as u64;
        let raw = raw_payload_bytes(&self.profile) * windows;
        let aggregated: u64 = packet_sizes.iter().map(|&n| n as u64).sum();
        let reduction_pct = if raw == 0 {
            0.0
        } else {
            100.0 * (1.0 - aggregated as f64 / raw as f64)
        };
        Ok(ReplayOutput {
            summaries: self.summaries,
            packet_sizes,
            report: ReductionReport {
                windows,
                raw_bytes_projected: raw,
                aggregated_bytes: aggregated,
                reduction_pct,
                dropped_records: self.dropped,
                gap_windows: self.gaps,
                truncated_windows: truncated,
            },
        })
    }
}

/// Replays a JSON-lines telemetry stream into window summaries.
pub fn run_replay<R: BufRead>(
    reader: R,
    profile: &SamplingProfile,
) -> Result<ReplayOutput, AggregateError> {
    let mut replay = Replay::new(*profile)?;
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TelemetryRecord =
            serde_json::from_str(&line).map_err(|source| AggregateError::Parse {
                line: index + 1,
                source,
            })?;
        replay.push(record)?;
    }
    replay.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::{decode_summary, STANDARD_GRAVITY};
    use num_rational::BigRational;
    use num_traits::ToPrimitive;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const P: SamplingProfile = SamplingProfile::DEFAULT;

    fn acc_with(samples: Vec<RawSample>, fixes: Vec<GpsFix>) -> WindowAccumulator {
        WindowAccumulator {
            vehicle_id: "bus-1".into(),
            window_start: 0,
            window_ms: 3000,
            samples,
            fixes,
        }
    }

    /// Sort then index at `ceil(p·n/100)`, spelled out with integer arithmetic.
    fn rank_oracle(values: &[f64], p: u32) -> f64 {
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = v.len() as u32;
        let rank = (p * n).div_ceil(100).max(1);
        v[(rank - 1) as usize]
    }

    /// Exact rational mean and population variance of the f64 inputs.
    fn exact_stats(values: &[f64]) -> (f64, f64) {
        let n = BigRational::from_integer(values.len().into());
        let xs: Vec<BigRational> = values
            .iter()
            .map(|v| BigRational::from_float(*v).unwrap())
            .collect();
        let mean = xs.iter().cloned().fold(BigRational::from_integer(0.into()), |a, b| a + b) / &n;
        let var = xs
            .iter()
            .map(|x| (x - &mean) * (x - &mean))
            .fold(BigRational::from_integer(0.into()), |a, b| a + b)
            / &n;
        (mean.to_f64().unwrap(), var.to_f64().unwrap())
    }

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
    }

    #[test]
    fn singleton_percentile_is_the_value() {
        for p in [1.0, 10.0, 50.0, 90.0, 99.0] {
            assert_eq!(percentile(&[5.0], p).unwrap(), 5.0);
        }
    }

    #[test]
    fn ninetieth_of_one_to_hundred() {
        let values: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&values, 90.0).unwrap(), rank_oracle(&values, 90));
        assert_eq!(percentile(&values, 90.0).unwrap(), 90.0);
    }

    #[test]
    fn ninety_ninth_of_three_values() {
        assert_eq!(percentile(&[3.0, 1.0, 2.0], 99.0).unwrap(), 3.0);
        assert_eq!(rank_oracle(&[3.0, 1.0, 2.0], 99), 3.0);
    }

    #[test]
    fn percentile_errors() {
        assert!(matches!(percentile(&[], 50.0), Err(AggregateError::EmptyWindow)));
        assert!(matches!(
            percentile(&[1.0], 100.0),
            Err(AggregateError::InvalidPercentile(_))
        ));
        assert!(matches!(
            percentile(&[1.0], 0.0),
            Err(AggregateError::InvalidPercentile(_))
        ));
    }

    #[test]
    fn constant_series_has_zero_variance() {
        let samples = (0..60)
            .map(|i| RawSample {
                timestamp: i * 50,
                ax: 0.0,
                ay: 0.0,
                az: STANDARD_GRAVITY,
            })
            .collect();
        let s = close_window(&acc_with(samples, vec![]), &P).unwrap();
        assert_eq!(s.mag_mean, STANDARD_GRAVITY);
        assert_eq!(s.mag_variance, 0.0);
        assert_eq!(s.sample_count, 60);
    }

    #[test]
    fn window_without_fix_has_no_anchor() {
        let samples = vec![RawSample {
            timestamp: 10,
            ax: 0.1,
            ay: 0.2,
            az: 9.8,
        }];
        let s = close_window(&acc_with(samples, vec![]), &P).unwrap();
        assert_eq!(s.gps_quality, FixQuality::None);
        assert!(s.anchor.is_none());
    }

    #[test]
    fn anchor_is_last_fix_of_best_quality() {
        let fix = |t, lat, q| GpsFix {
            timestamp: t,
            lat,
            lon: -84.0,
            fix_quality: q,
        };
        let samples = vec![RawSample {
            timestamp: 0,
            ax: 0.0,
            ay: 0.0,
            az: 9.8,
        }];
        let fixes = vec![
            fix(0, 33.0, FixQuality::Fix3d),
            fix(1000, 33.1, FixQuality::Fix3d),
            fix(2000, 33.2, FixQuality::Fix2d),
        ];
        let s = close_window(&acc_with(samples.clone(), fixes), &P).unwrap();
        assert_eq!(s.gps_quality, FixQuality::Fix3d);
        assert_eq!(s.anchor.unwrap().lat, 33.1);

        let only_none = vec![fix(0, 33.0, FixQuality::None)];
        let s = close_window(&acc_with(samples, only_none), &P).unwrap();
        assert_eq!(s.gps_quality, FixQuality::None);
        assert!(s.anchor.is_none());
    }

    #[test]
    fn empty_accumulator_is_an_error() {
        assert!(matches!(
            close_window(&acc_with(vec![], vec![]), &P),
            Err(AggregateError::EmptyWindow)
        ));
    }

    #[test]
    fn accumulator_rejects_out_of_window_timestamps() {
        let mut acc = WindowAccumulator::new("v", 3000, 3000);
        let s = |t| RawSample {
            timestamp: t,
            ax: 0.0,
            ay: 0.0,
            az: 0.0,
        };
        assert!(acc.push_sample(s(3000)).is_ok());
        assert!(acc.push_sample(s(5999)).is_ok());
        assert!(matches!(
            acc.push_sample(s(6000)),
            Err(AggregateError::OutsideWindow { .. })
        ));
        assert!(acc.push_sample(s(2999)).is_err());
    }

    #[test]
    fn statistics_match_brute_force_on_random_windows() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..200 {
            let n = rng.random_range(1..=120);
            let samples: Vec<RawSample> = (0..n)
                .map(|i| RawSample {
                    timestamp: i as i64 * 25,
                    ax: rng.random_range(-15.0..15.0),
                    ay: rng.random_range(-15.0..15.0),
                    az: rng.random_range(-5.0..25.0),
                })
                .collect();
            let s = close_window(&acc_with(samples.clone(), vec![]), &P).unwrap();
            let mags: Vec<f64> = samples
                .iter()
                .map(|r| (r.ax * r.ax + r.ay * r.ay + r.az * r.az).sqrt())
                .collect();
            let (mean, var) = exact_stats(&mags);
            assert!(rel_close(s.mag_mean, mean, 1e-9));
            assert!(rel_close(s.mag_variance, var, 1e-9));
            for (axis, got) in [(0, s.x), (1, s.y), (2, s.z)] {
                let values: Vec<f64> = samples
                    .iter()
                    .map(|r| [r.ax, r.ay, r.az][axis])
                    .collect();
                let want = [1, 10, 90, 99].map(|p| rank_oracle(&values, p));
                assert_eq!(got.to_array(), want);
            }
        }
    }

    fn synthetic_stream(windows: i64, vehicles: &[&str]) -> String {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut out = String::new();
        for w in 0..windows {
            for v in vehicles {
                for i in 0..60 {
                    let rec = TelemetryRecord::Accel {
                        vehicle_id: (*v).into(),
                        timestamp: w * 3000 + i * 50,
                        ax: rng.random_range(-2.0..2.0),
                        ay: rng.random_range(-2.0..2.0),
                        az: 9.8 + rng.random_range(-1.0..1.0),
                    };
                    out.push_str(&serde_json::to_string(&rec).unwrap());
                    out.push('\n');
                    if i % 20 == 0 {
                        let fix = TelemetryRecord::Gps {
                            vehicle_id: (*v).into(),
                            timestamp: w * 3000 + i * 50,
                            lat: 33.77 + w as f64 * 1e-4,
                            lon: -84.39,
                            fix_quality: FixQuality::Fix3d,
                        };
                        out.push_str(&serde_json::to_string(&fix).unwrap());
                        out.push('\n');
                    }
                }
            }
        }
        out
    }

    #[test]
    fn empty_stream_yields_no_windows() {
        let out = run_replay("".as_bytes(), &P).unwrap();
        assert!(out.summaries.is_empty());
        assert_eq!(out.report.windows, 0);
        assert_eq!(out.report.reduction_pct, 0.0);
    }

    #[test]
    fn aggregated_bytes_equal_sum_of_reencoded_packets() {
        let out = run_replay(synthetic_stream(10, &["bus-1"]).as_bytes(), &P).unwrap();
        assert_eq!(out.summaries.len(), 10);
        let recount: u64 = out
            .summaries
            .iter()
            .map(|s| encode_summary(s).unwrap().len() as u64)
            .sum();
        assert_eq!(out.report.aggregated_bytes, recount);
        assert_eq!(out.report.raw_bytes_projected, 10 * 1584);
        for s in &out.summaries {
            assert_eq!(s.sample_count, 60);
            let bytes = encode_summary(s).unwrap();
            assert!(bytes.len() <= 450);
            assert_eq!(&decode_summary(&bytes).unwrap(), s);
        }
    }

    #[test]
    fn vehicles_are_windowed_independently() {
        let out = run_replay(synthetic_stream(4, &["a", "b"]).as_bytes(), &P).unwrap();
        let ids: Vec<(&str, i64)> = out
            .summaries
            .iter()
            .map(|s| (s.vehicle_id.as_str(), s.window_start))
            .collect();
        assert_eq!(
            ids,
            vec![
                ("a", 0),
                ("a", 3000),
                ("a", 6000),
                ("a", 9000),
                ("b", 0),
                ("b", 3000),
                ("b", 6000),
                ("b", 9000)
            ]
        );
    }

    #[test]
    fn late_records_within_one_window_are_kept_and_older_ones_dropped() {
        let mut replay = Replay::new(P).unwrap();
        let s = |t| TelemetryRecord::sample("v", RawSample {
            timestamp: t,
            ax: 0.0,
            ay: 0.0,
            az: 9.8,
        });
        for t in (0..9000).step_by(50) {
            replay.push(s(t)).unwrap();
        }
        // Window 6000 is newest: window 3000 still accepts, window 0 does not.
        replay.push(s(4000)).unwrap();
        replay.push(s(100)).unwrap();
        let out = replay.finish().unwrap();
        assert_eq!(out.report.dropped_records, 1);
        let counts: Vec<u32> = out.summaries.iter().map(|s| s.sample_count).collect();
        assert_eq!(counts, vec![60, 61, 60]);
    }

    #[test]
    fn gps_only_window_is_a_gap_and_trailing_partial_is_truncated() {
        let mut replay = Replay::new(P).unwrap();
        replay
            .push(TelemetryRecord::fix("v", GpsFix {
                timestamp: 0,
                lat: 1.0,
                lon: 1.0,
                fix_quality: FixQuality::Fix3d,
            }))
            .unwrap();
        for t in (6000..12000).step_by(50) {
            replay
                .push(TelemetryRecord::sample("v", RawSample {
                    timestamp: t,
                    ax: 0.0,
                    ay: 0.0,
                    az: 9.8,
                }))
                .unwrap();
        }
        replay
            .push(TelemetryRecord::sample("v", RawSample {
                timestamp: 12_000,
                ax: 0.0,
                ay: 0.0,
                az: 9.8,
            }))
            .unwrap();
        let out = replay.finish().unwrap();
        assert_eq!(out.report.gap_windows, 1);
        assert_eq!(out.report.truncated_windows, 1);
        assert_eq!(out.summaries.len(), 2);
    }

    #[test]
    fn parse_errors_report_the_line() {
        let err = run_replay("\n{\"type\":\"accel\"}\n".as_bytes(), &P).unwrap_err();
        assert!(matches!(err, AggregateError::Parse { line: 2, .. }));
    }

    proptest! {
        #[test]
        fn windows_partition_in_order_samples(
            gaps in proptest::collection::vec(0i64..400, 1..400),
        ) {
            let mut t = 0;
            let mut replay = Replay::new(P).unwrap();
            let mut stamps = Vec::new();
            for g in gaps {
                t += g;
                stamps.push(t);
                replay.push(TelemetryRecord::sample("v", RawSample { timestamp: t, ax: 1.0, ay: -1.0, az: 9.0 })).unwrap();
            }
            let horizon = window_start_for(t, 3000);
            let out = replay.finish().unwrap();
            let total: u64 = out.summaries.iter().map(|s| u64::from(s.sample_count)).sum();
            let in_emitted = stamps.iter().filter(|&&ts| {
                out.summaries.iter().any(|s| ts >= s.window_start && ts < s.window_end())
            }).count() as u64;
            prop_assert_eq!(total, in_emitted);
            // Only the final one or two windows may be held back as truncated.
            let emitted_or_tail = stamps.iter().all(|&ts| {
                out.summaries.iter().any(|s| ts >= s.window_start && ts < s.window_end())
                    || ts >= horizon - 3000
            });
            prop_assert!(emitted_or_tail);
            for s in &out.summaries {
                prop_assert!(s.x.is_ordered() && s.y.is_ordered() && s.z.is_ordered());
                prop_assert!(s.mag_variance >= 0.0);
            }
        }
    }
}
