//! Synthetic campus data: a landmark directory, a bus loop, raw telemetry
//! streams for replay, and labeled window datasets with a known cluster mix.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::aggregate::TelemetryRecord;
use crate::cluster::{BehaviorLabel, FeatureVector};
use crate::geo::{haversine, GeoPoint, Landmark, LandmarkDirectory};
use crate::telemetry::{FixQuality, Percentiles, SamplingProfile, WindowSummary, STANDARD_GRAVITY};

/// 2024-10-21T08:00:00Z.
pub const DEFAULT_START_MS: i64 = 1_729_497_600_000;
const HOUR_MS: i64 = 3_600_000;

const LANDMARKS: [(&str, f64, f64); 7] = [
    ("Union Square", 33.7756, -84.3963),
    ("Library Crosswalk", 33.7740, -84.3952),
    ("Student Center", 33.7737, -84.3987),
    ("Finch & Green", 33.7771, -84.3990),
    ("Tech Parkway Stop", 33.7768, -84.4020),
    ("West Campus Housing", 33.7795, -84.4049),
    ("Eastside Hall", 33.7780, -84.3925),
];

/// Windows spent stopped at each landmark per lap, in loop order.
const STOP_WINDOWS: [u32; 7] = [6, 0, 5, 0, 2, 20, 4];

/// Cruising distance per 3 s window, meters.
const CRUISE_M_PER_WINDOW: f64 = 40.0;

pub fn campus_landmarks() -> LandmarkDirectory {
    LandmarkDirectory::new(
        LANDMARKS
            .iter()
            .map(|(name, lat, lon)| Landmark {
                name: (*name).to_owned(),
                lat: *lat,
                lon: *lon,
            })
            .collect(),
    )
    .expect("built-in landmarks are valid")
}

/// A closed loop through the campus landmarks with scheduled stops.
#[derive(Clone, Debug)]
pub struct Route {
    stops: Vec<(GeoPoint, u32)>,
    /// Cumulative distance at each stop, meters; last entry closes the loop.
    cumulative: Vec<f64>,
}

impl Route {
    pub fn new(stops: Vec<(GeoPoint, u32)>) -> Self {
        assert!(stops.len() >= 2, "a route needs two stops");
        let mut cumulative = vec![0.0];
        for i in 0..stops.len() {
            let next = stops[(i + 1) % stops.len()].0;
            cumulative.push(cumulative[i] + haversine(stops[i].0, next));
        }
        Self { stops, cumulative }
    }

    pub fn campus() -> Self {
        Self::new(
            LANDMARKS
                .iter()
                .zip(STOP_WINDOWS)
                .map(|((_, lat, lon), dwell)| (GeoPoint { lat: *lat, lon: *lon }, dwell))
                .collect(),
        )
    }

    pub fn length_m(&self) -> f64 {
        *self.cumulative.last().expect("non-empty")
    }

    /// Point at `distance` meters along the loop (wrapping), interpolated
    /// linearly in coordinates, which is accurate at campus scale.
    pub fn point_at(&self, distance: f64) -> GeoPoint {
        let d = distance.rem_euclid(self.length_m());
        let i = self.cumulative.partition_point(|c| *c <= d).saturating_sub(1).min(self.stops.len() - 1);
        let a = self.stops[i].0;
        let b = self.stops[(i + 1) % self.stops.len()].0;
        let span = self.cumulative[i + 1] - self.cumulative[i];
        let t = if span > 0.0 { (d - self.cumulative[i]) / span } else { 0.0 };
        GeoPoint {
            lat: a.lat + (b.lat - a.lat) * t,
            lon: a.lon + (b.lon - a.lon) * t,
        }
    }

    /// Per-window positions for `windows` consecutive windows starting at
    /// the first stop; the flag marks windows spent stopped.
    pub fn window_track(&self, windows: usize, meters_per_window: f64) -> Vec<(GeoPoint, bool)> {
        let mut out = Vec::with_capacity(windows);
        let mut stop = 0;
        let mut dwell_left = self.stops[0].1;
        let mut distance = 0.0;
        while out.len() < windows {
            if dwell_left > 0 {
                out.push((self.stops[stop].0, true));
                dwell_left -= 1;
                continue;
            }
            let next_stop = (stop + 1) % self.stops.len();
            let target = if next_stop == 0 { self.length_m() } else { self.cumulative[next_stop] };
            distance += meters_per_window;
            if distance >= target {
                distance = if next_stop == 0 { 0.0 } else { target };
                stop = next_stop;
                dwell_left = self.stops[stop].1;
                out.push((self.stops[stop].0, dwell_left > 0));
                dwell_left = dwell_left.saturating_sub(1);
            } else {
                out.push((self.point_at(distance), false));
            }
        }
        out
    }
}

/// One behavior mode of the reference mix: window count and feature center.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClusterProfile {
    pub label: BehaviorLabel,
    pub count: usize,
    pub instability: f64,
    pub extreme: f64,
    pub instability_sd: f64,
    pub extreme_sd: f64,
}

/// Cluster sizes and centers of the deployment this library was built for.
/// Moderate and Slightly Unstable share a reported instability of 0.16; the
/// centers are nudged apart (0.155 / 0.165) so the ordering is strict.
pub const REFERENCE_PROFILE: [ClusterProfile; 5] = [
    ClusterProfile {
        label: BehaviorLabel::Calm,
        count: 186,
        instability: 0.09,
        extreme: 10.32,
        instability_sd: 0.015,
        extreme_sd: 0.09,
    },
    ClusterProfile {
        label: BehaviorLabel::Moderate,
        count: 593,
        instability: 0.155,
        extreme: 10.97,
        instability_sd: 0.015,
        extreme_sd: 0.09,
    },
    ClusterProfile {
        label: BehaviorLabel::SlightlyUnstable,
        count: 260,
        instability: 0.165,
        extreme: 11.65,
        instability_sd: 0.015,
        extreme_sd: 0.09,
    },
    ClusterProfile {
        label: BehaviorLabel::Aggressive,
        count: 164,
        instability: 0.48,
        extreme: 13.56,
        instability_sd: 0.05,
        extreme_sd: 0.25,
    },
    ClusterProfile {
        label: BehaviorLabel::VeryAggressive,
        count: 16,
        instability: 5.87,
        extreme: 17.98,
        instability_sd: 0.6,
        extreme_sd: 0.5,
    },
];

pub fn reference_window_count() -> usize {
    REFERENCE_PROFILE.iter().map(|p| p.count).sum()
}

/// Gaussian draw clamped to ±2.5 standard deviations and kept positive.
fn clamped(rng: &mut impl Rng, mean: f64, sd: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    let z: f64 = n.sample(rng);
    (mean + sd * z.clamp(-2.5, 2.5)).max(mean * 0.05)
}

pub fn sample_features(profile: &ClusterProfile, rng: &mut impl Rng) -> FeatureVector {
    FeatureVector {
        extreme_event_magnitude: clamped(rng, profile.extreme, profile.extreme_sd),
        instability: clamped(rng, profile.instability, profile.instability_sd),
    }
}

/// Feature vectors with the reference cluster mix, in profile order, with
/// their generating label.
pub fn reference_features(seed: u64) -> Vec<(FeatureVector, BehaviorLabel)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    REFERENCE_PROFILE
        .iter()
        .flat_map(|p| (0..p.count).map(move |_| p))
        .map(|p| (sample_features(p, &mut rng), p.label))
        .collect()
}

/// Builds a plausible window summary whose extracted features equal
/// `features` up to packet quantization.
pub fn summary_with_features(
    vehicle_id: &str,
    window_start: i64,
    features: FeatureVector,
    anchor: Option<GeoPoint>,
    gps_quality: FixQuality,
    rng: &mut impl Rng,
) -> WindowSummary {
    let severity = (features.extreme_event_magnitude - STANDARD_GRAVITY).max(0.2);
    let px = severity * rng.random_range(0.45..0.7);
    let py = severity * rng.random_range(0.3..0.5);
    let pz = (features.extreme_event_magnitude.powi(2) - px * px - py * py)
        .max(STANDARD_GRAVITY.powi(2))
        .sqrt();
    let spread = features.instability.sqrt();
    let axis = |p99: f64, centre: f64| {
        let p90 = centre + (p99 - centre) * 0.55;
        let p10 = centre - (p99 - centre) * 0.55;
        let p1 = centre - (p99 - centre);
        Percentiles::from_array([p1, p10, p90, p99])
    };
    WindowSummary {
        vehicle_id: vehicle_id.to_owned(),
        window_start,
        window_secs: 3.0,
        mag_mean: STANDARD_GRAVITY + spread * rng.random_range(0.0..0.3),
        mag_variance: features.instability,
        x: axis(px, 0.0),
        y: axis(py, 0.0),
        z: axis(pz, STANDARD_GRAVITY.min(pz)),
        anchor: if gps_quality == FixQuality::None { None } else { anchor },
        gps_quality,
        sample_count: 60,
    }
    .canonical()
}

/// A contiguous run of windows from one vehicle.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Session {
    pub vehicle_id: String,
    pub start_ms: i64,
    pub windows: usize,
}

/// Morning, afternoon, and evening runs of two buses; the window total
/// matches the reference mix.
pub fn reference_sessions() -> Vec<Session> {
    let s = |vid: &str, hours: i64, windows| Session {
        vehicle_id: vid.to_owned(),
        start_ms: DEFAULT_START_MS + hours * HOUR_MS,
        windows,
    };
    vec![s("bus-07", 0, 400), s("bus-12", 6, 419), s("bus-07", 9, 400)]
}

fn offset(p: GeoPoint, north_m: f64, east_m: f64) -> GeoPoint {
    let dlat = north_m / 111_320.0;
    let dlon = east_m / (111_320.0 * p.lat.to_radians().cos());
    GeoPoint {
        lat: p.lat + dlat,
        lon: p.lon + dlon,
    }
}

/// Picks `count` unassigned windows, highest `score` first with random
/// jitter so hotspots are strong but not exclusive.
fn assign_top(
    labels: &mut [Option<BehaviorLabel>],
    label: BehaviorLabel,
    count: usize,
    score: impl Fn(usize) -> f64,
    jitter: f64,
    rng: &mut impl Rng,
) {
    let mut candidates: Vec<(f64, usize)> = (0..labels.len())
        .filter(|i| labels[*i].is_none())
        .map(|i| (score(i) + rng.random_range(0.0..jitter), i))
        .collect();
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, i) in candidates.into_iter().take(count) {
        labels[i] = Some(label);
    }
}

/// 1,219 labeled windows over the campus loop with the reference cluster
/// mix. Very Aggressive windows concentrate at Library Crosswalk, Aggressive
/// ones near Union Square, unstable ones at the Finch & Green turn, and
/// stops are mostly Calm.
pub fn reference_summaries(seed: u64) -> Vec<WindowSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let route = Route::campus();
    let sessions = reference_sessions();
    let mut slots: Vec<(String, i64, GeoPoint, bool)> = Vec::new();
    for (n, session) in sessions.iter().enumerate() {
        // Evening traffic crawls and stops run longer.
        let pace = if n == 2 { CRUISE_M_PER_WINDOW * 0.6 } else { CRUISE_M_PER_WINDOW };
        for (i, (p, stopped)) in route.window_track(session.windows, pace).into_iter().enumerate() {
            slots.push((session.vehicle_id.clone(), session.start_ms + i as i64 * 3000, p, stopped));
        }
    }
    debug_assert_eq!(slots.len(), reference_window_count());

    let dir = campus_landmarks();
    let near = |name: &str, i: usize| {
        let lm = dir.get(name).expect("built-in landmark").point();
        -haversine(lm, slots[i].2) / 100.0
    };
    let moving = |i: usize| if slots[i].3 { -100.0 } else { 0.0 };
    let mut labels: Vec<Option<BehaviorLabel>> = vec![None; slots.len()];
    let count = |l: BehaviorLabel| REFERENCE_PROFILE.iter().find(|p| p.label == l).expect("profile").count;
    assign_top(&mut labels, BehaviorLabel::VeryAggressive, count(BehaviorLabel::VeryAggressive), |i| near("Library Crosswalk", i) + moving(i), 0.5, &mut rng);
    assign_top(&mut labels, BehaviorLabel::Aggressive, count(BehaviorLabel::Aggressive), |i| near("Union Square", i) + moving(i), 3.0, &mut rng);
    assign_top(&mut labels, BehaviorLabel::SlightlyUnstable, count(BehaviorLabel::SlightlyUnstable), |i| near("Finch & Green", i) + moving(i), 6.0, &mut rng);
    assign_top(&mut labels, BehaviorLabel::Calm, count(BehaviorLabel::Calm), |i| -moving(i), 1.0, &mut rng);
    for l in labels.iter_mut().filter(|l| l.is_none()) {
        *l = Some(BehaviorLabel::Moderate);
    }

    slots
        .into_iter()
        .zip(labels)
        .map(|((vid, ws, p, _), label)| {
            let label = label.expect("every slot labeled");
            let profile = REFERENCE_PROFILE.iter().find(|c| c.label == label).expect("profile");
            let features = sample_features(profile, &mut rng);
            let roll: f64 = rng.random();
            let quality = if roll < 0.02 {
                FixQuality::None
            } else if roll < 0.05 {
                FixQuality::Fix2d
            } else {
                FixQuality::Fix3d
            };
            let jittered = offset(p, rng.random_range(-2.5..2.5), rng.random_range(-2.5..2.5));
            summary_with_features(&vid, ws, features, Some(jittered), quality, &mut rng)
        })
        .collect()
}

/// Raw accelerometer and GPS records for one vehicle driving the campus
/// loop, in timestamp order.
pub fn simulate_telemetry(
    vehicle_id: &str,
    start_ms: i64,
    duration_s: u32,
    profile: &SamplingProfile,
    seed: u64,
) -> Vec<TelemetryRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let route = Route::campus();
    let window_ms = profile.window_ms();
    let windows = (i64::from(duration_s) * 1000 / window_ms) as usize + 1;
    let track = route.window_track(windows, CRUISE_M_PER_WINDOW * profile.window_secs / 3.0);
    let accel_step = 1000.0 / profile.rate_hz;
    let end = start_ms + i64::from(duration_s) * 1000;
    let noise = Normal::new(0.0, 1.0).expect("unit normal");

    let mut out = Vec::new();
    let mut regime = 0.08;
    let mut next_gps = start_ms;
    let mut k = 0u64;
    loop {
        let t = start_ms + (k as f64 * accel_step).round() as i64;
        if t >= end {
            break;
        }
        while next_gps <= t && next_gps < end {
            let w = ((next_gps - start_ms) / window_ms) as usize;
            let (p, _) = track[w.min(track.len() - 1)];
            let roll: f64 = rng.random();
            let fix_quality = if roll < 0.03 {
                FixQuality::None
            } else if roll < 0.08 {
                FixQuality::Fix2d
            } else {
                FixQuality::Fix3d
            };
            let p = offset(p, rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            out.push(TelemetryRecord::Gps {
                vehicle_id: vehicle_id.to_owned(),
                timestamp: next_gps,
                lat: p.lat,
                lon: p.lon,
                fix_quality,
            });
            next_gps += 1000;
        }
        let w = ((t - start_ms) / window_ms) as usize;
        let stopped = track[w.min(track.len() - 1)].1;
        // Driving style drifts every few seconds; stops are quiet.
        if k.is_multiple_of(profile.rate_hz as u64 * 5) {
            regime = *[0.05, 0.12, 0.2, 0.45, 1.2]
                .choose(&mut rng)
                .expect("non-empty");
        }
        let sd = if stopped { 0.02 } else { regime };
        let mut g = |s: f64| s * noise.sample(&mut rng);
        out.push(TelemetryRecord::Accel {
            vehicle_id: vehicle_id.to_owned(),
            timestamp: t,
            ax: g(sd),
            ay: g(sd * 0.7),
            az: STANDARD_GRAVITY + g(sd * 0.5),
        });
        k += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::extract_features;
    use crate::geo::nearest_landmark;

    #[test]
    fn directory_and_route_are_consistent() {
        let dir = campus_landmarks();
        assert_eq!(dir.len(), LANDMARKS.len());
        assert!(dir.contains("finch & green"));
        let route = Route::campus();
        assert!(route.length_m() > 1_000.0 && route.length_m() < 6_000.0);
        let start = route.point_at(0.0);
        assert!(haversine(start, route.point_at(route.length_m())) < 1e-6);
    }

    #[test]
    fn window_track_moves_at_pace_and_stops_at_landmarks() {
        let track = Route::campus().window_track(500, 40.0);
        assert_eq!(track.len(), 500);
        for w in track.windows(2) {
            let d = haversine(w[0].0, w[1].0);
            assert!(d <= 40.01, "{d} {:?}", w);
        }
        assert!(track[..6].iter().all(|(_, s)| *s));
        let stopped = track.iter().filter(|(_, s)| *s).count();
        assert!(stopped > 30 && stopped < 250, "{stopped}");
    }

    #[test]
    fn reference_summaries_match_the_mix() {
        let summaries = reference_summaries(7);
        assert_eq!(summaries.len(), reference_window_count());
        assert_eq!(summaries.len(), 1219);
        for s in &summaries {
            s.validate().unwrap();
            assert_eq!(*s, s.canonical());
        }
        let keys: std::collections::BTreeSet<_> =
            summaries.iter().map(|s| (s.vehicle_id.clone(), s.window_start)).collect();
        assert_eq!(keys.len(), summaries.len());
        let very: Vec<_> = summaries
            .iter()
            .filter(|s| extract_features(s).instability > 2.0)
            .collect();
        assert_eq!(very.len(), 16);
        let dir = campus_landmarks();
        let at_crosswalk = very
            .iter()
            .filter_map(|s| s.anchor)
            .filter(|a| nearest_landmark(*a, &dir).unwrap().0 == "Library Crosswalk")
            .count();
        assert!(at_crosswalk >= 10, "{at_crosswalk}");
    }

    #[test]
    fn summaries_carry_requested_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for p in &REFERENCE_PROFILE {
            let f = sample_features(p, &mut rng);
            let s = summary_with_features("v", 0, f, None, FixQuality::None, &mut rng);
            let back = extract_features(&s);
            assert_eq!(back.instability, f.instability);
            assert!((back.extreme_event_magnitude - f.extreme_event_magnitude).abs() < 1e-3);
        }
    }

    #[test]
    fn telemetry_is_ordered_at_profile_rates() {
        let p = SamplingProfile::DEFAULT;
        let recs = simulate_telemetry("bus-07", DEFAULT_START_MS, 60, &p, 3);
        assert!(recs.windows(2).all(|w| w[0].timestamp() <= w[1].timestamp()));
        let accel = recs.iter().filter(|r| matches!(r, TelemetryRecord::Accel { .. })).count();
        let gps = recs.len() - accel;
        assert_eq!((accel, gps), (1200, 60));
    }
}
