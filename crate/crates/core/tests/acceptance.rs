//! Release gate: one PASS/FAIL line per acceptance criterion.
//!
//! Runs without the libtest harness so the verdicts always appear in the
//! output; exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Cursor};
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;
use std::time::Instant;

use fleetlens_core::aggregate::{close_window, run_replay, WindowAccumulator};
use fleetlens_core::cluster::{self, extract_features, kmeans, BehaviorLabel, FeatureVector};
use fleetlens_core::gateway::{
    chunk_records, cost_usd, reference_tokens, run_grounded, run_llm_only, Backend, BackendError,
    BackendResponse, Gateway, GenerationRequest, MockBackend, CHUNK_TOKENS, MAX_CHUNKS,
};
use fleetlens_core::geo::{haversine, GeoPoint};
use fleetlens_core::pipeline::Analyst;
use fleetlens_core::planner::{
    build_prompt, classify, label_windows, retrieve, ContextDetails, Intent, PlannerConfig,
};
use fleetlens_core::store::{Circle, FsStore, LabelSet, QueryFilter, StoreKey, SummaryStore};
use fleetlens_core::synth::{
    campus_landmarks, reference_features, reference_summaries, simulate_telemetry, DEFAULT_START_MS,
};
use fleetlens_core::telemetry::{
    decode_summary, encode_summary, magnitude, raw_payload_bytes, FixQuality, RawSample,
    SamplingProfile, WindowSummary,
};
use fleetlens_core::validate::{score, validate, Disposition, ValidatorConfig};
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn data_reduction() -> Verdict {
    let profile = SamplingProfile::DEFAULT;
    let duration_s = 2 * 3600 + 14 * 60;
    let mut jsonl = Vec::new();
    for r in simulate_telemetry("bus-07", DEFAULT_START_MS, duration_s, &profile, 11) {
        serde_json::to_writer(&mut jsonl, &r).map_err(|e| e.to_string())?;
        jsonl.push(b'\n');
    }
    let started = Instant::now();
    let out = run_replay(Cursor::new(jsonl), &profile).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed().as_secs_f64();
    let report = &out.report;
    let largest = out.packet_sizes.iter().copied().max().unwrap_or(0);
    check(report.windows >= 2 * 3600 / 3, format!("only {} windows", report.windows))?;
    check(largest <= 450, format!("largest packet {largest} B > 450 B"))?;
    check(report.per_window_raw_bytes() == 1584.0, "raw projection is not 1,584 B per window")?;
    check(
        report.reduction_pct >= 70.0,
        format!("reduction {:.1}% < 70%", report.reduction_pct),
    )?;
    check(elapsed < 60.0, format!("replay took {elapsed:.1} s"))?;
    Ok(format!(
        "{} windows, packets ≤ {largest} B (mean {:.0} B) vs 1584 B raw, reduction {:.1}%, {elapsed:.2} s",
        report.windows,
        report.mean_packet_bytes(),
        report.reduction_pct
    ))
}

fn payload_model() -> Verdict {
    let bytes = raw_payload_bytes(&SamplingProfile::DEFAULT);
    check(bytes == 1584, format!("got {bytes}"))?;
    Ok("20 Hz × 3 s × 3 axes × 8 B + 144 B = 1584 B".into())
}

fn exact(v: f64) -> BigRational {
    BigRational::from_float(v).expect("finite")
}

fn rel_err(got: f64, want: &BigRational) -> f64 {
    let diff = (exact(got) - want).abs();
    if want.is_zero() {
        diff.to_f64().unwrap_or(f64::INFINITY)
    } else {
        (diff / want.abs()).to_f64().unwrap_or(f64::INFINITY)
    }
}

fn statistics_oracle() -> Verdict {
    let profile = SamplingProfile::DEFAULT;
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut worst = 0.0f64;
    for w in 0..1000 {
        let n = rng.random_range(1..=120);
        let scale = [0.01, 1.0, 50.0][w % 3];
        let start = w as i64 * 3000;
        let mut acc = WindowAccumulator::new("v", start, 3000);
        let mut axes = [Vec::new(), Vec::new(), Vec::new()];
        let mut mags = Vec::new();
        for i in 0..n {
            let s = RawSample {
                timestamp: start + (i * 3000 / n) as i64,
                ax: rng.random_range(-scale..scale),
                ay: rng.random_range(-scale..scale),
                az: 9.8 + rng.random_range(-scale..scale),
            };
            axes[0].push(s.ax);
            axes[1].push(s.ay);
            axes[2].push(s.az);
            mags.push(magnitude(s.ax, s.ay, s.az).map_err(|e| e.to_string())?);
            acc.push_sample(s).map_err(|e| e.to_string())?;
        }
        let summary = close_window(&acc, &profile).map_err(|e| e.to_string())?;
        for (axis, got) in axes.iter_mut().zip([summary.x, summary.y, summary.z]) {
            axis.sort_by(f64::total_cmp);
            let want = [1usize, 10, 90, 99].map(|p| axis[(p * n).div_ceil(100).max(1) - 1]);
            check(got.to_array() == want, format!("window {w}: percentiles {:?} != {want:?}", got.to_array()))?;
        }
        let count = BigRational::from_integer(n.into());
        let mean: BigRational = mags.iter().map(|m| exact(*m)).sum::<BigRational>() / &count;
        let var: BigRational = mags
            .iter()
            .map(|m| {
                let d = exact(*m) - &mean;
                &d * &d
            })
            .sum::<BigRational>()
            / &count;
        let e_mean = rel_err(summary.mag_mean, &mean);
        let e_var = if var.is_zero() {
            summary.mag_variance.abs()
        } else {
            rel_err(summary.mag_variance, &var)
        };
        worst = worst.max(e_mean).max(e_var);
        check(e_mean <= 1e-9 && e_var <= 1e-9, format!("window {w}: relative error {e_mean:e}/{e_var:e}"))?;
    }
    Ok(format!("1000 windows, percentiles exact, worst mean/variance relative error {worst:.1e}"))
}

fn moderate_count(summaries: Vec<WindowSummary>) -> Result<u64, String> {
    let features: Vec<FeatureVector> = summaries.iter().map(extract_features).collect();
    let model = cluster::fit(&features, 5, cluster::DEFAULT_SEED).map_err(|e| e.to_string())?;
    let windows = label_windows(summaries, &model);
    let planner = PlannerConfig::default();
    let landmarks = campus_landmarks();
    let intent = classify("How many instances of moderate driving?", &planner, &landmarks).map_err(|e| e.to_string())?;
    let ctx = retrieve(&intent, &windows, &landmarks, &planner).map_err(|e| e.to_string())?;
    match ctx.details {
        ContextDetails::Counting { matched, .. } => Ok(matched),
        other => Err(format!("unexpected context {other:?}")),
    }
}

fn clustering_quality() -> Verdict {
    let data = reference_features(5);
    let features: Vec<FeatureVector> = data.iter().map(|(f, _)| *f).collect();
    let model = cluster::fit(&features, 5, cluster::DEFAULT_SEED).map_err(|e| e.to_string())?;
    let sil = cluster::model_silhouette(&model, &features).map_err(|e| e.to_string())?;
    check(sil > 0.5, format!("silhouette {sil:.3} ≤ 0.5"))?;

    let centroids = model.centroid_features();
    let by_label: Vec<f64> = BehaviorLabel::NAMED
        .iter()
        .map(|l| centroids[model.index_of(*l).expect("named label")].instability)
        .collect();
    check(
        by_label.windows(2).all(|w| w[0] <= w[1]),
        format!("label order not monotone in instability: {by_label:?}"),
    )?;
    check(
        model.objective_history.windows(2).all(|w| w[1] <= w[0]),
        "objective rose during Lloyd iterations",
    )?;
    let moderate = model.counts[model.index_of(BehaviorLabel::Moderate).expect("moderate")];

    let synthetic = moderate_count(reference_summaries(7))?;
    let dataset = match std::env::var("FLEET_SUMMARY_DATASET") {
        Ok(path) if !path.is_empty() => {
            let file = std::fs::File::open(&path).map_err(|e| format!("{path}: {e}"))?;
            let mut summaries = Vec::new();
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| e.to_string())?;
                if !line.trim().is_empty() {
                    summaries.push(decode_summary(line.as_bytes()).map_err(|e| e.to_string())?);
                }
            }
            let n = moderate_count(summaries)?;
            check(n == 593, format!("supplied dataset: Moderate count {n} != 593"))?;
            "supplied dataset Moderate = 593".to_owned()
        }
        _ => "real-dataset count SKIPPED (FLEET_SUMMARY_DATASET unset)".to_owned(),
    };
    Ok(format!(
        "silhouette {sil:.3}, instability order {:?}, {} Lloyd steps non-increasing, Moderate {moderate} (synthetic windows counted {synthetic}); {dataset}",
        by_label.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>(),
        model.objective_history.len()
    ))
}

fn exhaustive_min(points: &[[f64; 2]], k: usize) -> f64 {
    let n = points.len();
    let mut best = f64::INFINITY;
    for code in 0..k.pow(n as u32) {
        let mut c = code;
        let labels: Vec<usize> = (0..n)
            .map(|_| {
                let l = c % k;
                c /= k;
                l
            })
            .collect();
        let mut sum = vec![[0.0; 2]; k];
        let mut cnt = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            sum[l][0] += p[0];
            sum[l][1] += p[1];
            cnt[l] += 1;
        }
        if cnt.contains(&0) {
            continue;
        }
        let j: f64 = points
            .iter()
            .zip(&labels)
            .map(|(p, &l)| {
                let m = [sum[l][0] / cnt[l] as f64, sum[l][1] / cnt[l] as f64];
                (p[0] - m[0]).powi(2) + (p[1] - m[1]).powi(2)
            })
            .sum();
        best = best.min(j);
    }
    best
}

fn kmeans_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let mut cases = 0;
    for n in 1..=10usize {
        for k in 1..=3.min(n) {
            for _ in 0..20 {
                let spread = rng.random_range(0.2..5.0);
                let pts: Vec<[f64; 2]> = (0..n)
                    .map(|_| [rng.random_range(-spread..spread) * 3.0, rng.random_range(-spread..spread)])
                    .collect();
                let run = kmeans::fit_best(&pts, k, cluster::DEFAULT_SEED, cluster::DEFAULT_RESTARTS);
                let want = exhaustive_min(&pts, k);
                check(
                    (run.objective - want).abs() <= 1e-9 * want.max(1.0),
                    format!("n={n} k={k}: J {} vs optimum {want} for {pts:?}", run.objective),
                )?;
                cases += 1;
            }
        }
    }
    Ok(format!("{cases} datasets with n ≤ 10, k ≤ 3 reach the exhaustive minimum"))
}

fn dataset_records() -> Result<Vec<String>, String> {
    reference_summaries(7)
        .iter()
        .map(|s| encode_summary(s).map(|b| String::from_utf8(b).expect("packet is UTF-8")))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())
}

fn grounded_plan(query: &str) -> Result<fleetlens_core::planner::QueryPlan, String> {
    let summaries = reference_summaries(7);
    let features: Vec<FeatureVector> = summaries.iter().map(extract_features).collect();
    let model = cluster::fit(&features, 5, cluster::DEFAULT_SEED).map_err(|e| e.to_string())?;
    let windows = label_windows(summaries, &model);
    let planner = PlannerConfig::default();
    let landmarks = campus_landmarks();
    let intent = classify(query, &planner, &landmarks).map_err(|e| e.to_string())?;
    let ctx = retrieve(&intent, &windows, &landmarks, &planner).map_err(|e| e.to_string())?;
    Ok(build_prompt(&intent, ctx))
}

fn token_reduction() -> Verdict {
    let records = dataset_records()?;
    let dataset_tokens = reference_tokens(&records.join("\n"));
    check(dataset_tokens >= 15_000, format!("dataset only {dataset_tokens} tokens"))?;
    let query = "Tell me about aggressive driving behaviors around campus.";
    let plan = grounded_plan(query)?;
    let gw = Gateway::new(Arc::new(MockBackend::honest(7)));
    let (_, grounded) = run_grounded(&plan, &gw).map_err(|e| e.to_string())?;
    let gw = Gateway::new(Arc::new(MockBackend::honest(7)));
    let (_, baseline) = run_llm_only(query, &records, &gw).map_err(|e| e.to_string())?;
    let share = grounded.total_tokens as f64 / baseline.total_tokens as f64;
    check(share <= 0.05, format!("grounded uses {:.1}% of baseline tokens", share * 100.0))?;
    for u in [&grounded, &baseline] {
        check(
            u.cost_usd == cost_usd(u.input_tokens, u.output_tokens)
                && u.cost_usd == u.input_tokens as f64 * 0.05 / 1e6 + u.output_tokens as f64 * 0.08 / 1e6,
            "cost does not recompute from token totals",
        )?;
    }
    Ok(format!(
        "dataset {dataset_tokens} tokens; grounded {} vs llm-only {} tokens ({:.1}%, {:.1}% reduction); cost ${:.6} vs ${:.6}",
        grounded.total_tokens,
        baseline.total_tokens,
        share * 100.0,
        (1.0 - share) * 100.0,
        grounded.cost_usd,
        baseline.cost_usd
    ))
}

/// Counts backend invocations.
struct Counting<B> {
    inner: B,
    calls: AtomicU32,
}

impl<B: Backend> Backend for Counting<B> {
    fn generate(&self, r: &GenerationRequest) -> Result<BackendResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.generate(r)
    }

    fn name(&self) -> &str {
        "counting"
    }
}

fn counting_mock() -> Arc<Counting<MockBackend>> {
    Arc::new(Counting {
        inner: MockBackend::honest(7),
        calls: AtomicU32::new(0),
    })
}

fn call_counts() -> Verdict {
    let records = dataset_records()?;
    let mut seen = Vec::new();
    for take in [10, 40, 150, 400, records.len()] {
        let subset = &records[..take.min(records.len())];
        let chunks = chunk_records(subset, CHUNK_TOKENS).len();
        let backend = counting_mock();
        let gw = Gateway::new(backend.clone());
        let (_, usage) = run_llm_only("How many instances of moderate driving?", subset, &gw)
            .map_err(|e| e.to_string())?;
        let want = chunks.min(MAX_CHUNKS) as u32 + 1;
        let actual = backend.calls.load(Ordering::SeqCst);
        check(
            usage.api_calls == want && actual == want,
            format!("{chunks} chunks: {} reported / {actual} actual calls, want {want}", usage.api_calls),
        )?;
        seen.push(format!("{chunks}→{want}"));
    }
    let plan = grounded_plan("Which zones show the longest dwell times?")?;
    let backend = counting_mock();
    let gw = Gateway::new(backend.clone());
    let (_, first) = run_grounded(&plan, &gw).map_err(|e| e.to_string())?;
    let (_, second) = run_grounded(&plan, &gw).map_err(|e| e.to_string())?;
    check(first.api_calls == 1 && second.api_calls == 0, "grounded call counts wrong")?;
    check(backend.calls.load(Ordering::SeqCst) == 1, "backend saw a second grounded call")?;
    Ok(format!(
        "llm-only chunks→calls {}; grounded 1 call cold, 0 cached",
        seen.join(", ")
    ))
}

fn validation_score() -> Verdict {
    for n in 0..=10usize {
        let want = (100 - 20 * n as i64).max(0);
        check(i64::from(score(n)) == want, format!("S({n}) = {}", score(n)))?;
    }
    for (s, d) in [
        (100, Disposition::Present),
        (80, Disposition::Present),
        (79, Disposition::Review),
        (60, Disposition::Review),
        (59, Disposition::Retry),
        (0, Disposition::Retry),
    ] {
        check(Disposition::from_score(s) == d, format!("score {s} → {:?}", Disposition::from_score(s)))?;
    }

    let store = fleetlens_core::store::MemoryStore::new();
    let summaries = reference_summaries(7);
    for s in &summaries {
        store.put(s).map_err(|e| e.to_string())?;
    }
    let features: Vec<FeatureVector> = summaries.iter().map(extract_features).collect();
    let model = cluster::fit(&features, 5, cluster::DEFAULT_SEED).map_err(|e| e.to_string())?;
    let landmarks = campus_landmarks();
    let planner = PlannerConfig::default();
    let validator = ValidatorConfig::default();
    let honest = Gateway::new(Arc::new(MockBackend::honest(7)));
    let corrupting = Gateway::new(Arc::new(MockBackend::corrupting(7)));
    let analyst = Analyst {
        store: &store,
        model: &model,
        landmarks: &landmarks,
        planner: &planner,
        validator: &validator,
        gateway: &honest,
    };
    let windows = analyst.snapshot().map_err(|e| e.to_string())?;
    let mut intents: Vec<Intent> = [
        "Tell me about aggressive driving behaviors around campus.",
        "Which zones show the longest dwell times?",
        "How many instances of moderate driving?",
        "Compare route efficiency between morning and evening.",
        "What are driving patterns like around Union Square?",
    ]
    .iter()
    .map(|q| classify(q, &planner, &landmarks).map_err(|e| e.to_string()))
    .collect::<Result<_, _>>()?;
    for label in BehaviorLabel::NAMED {
        if let Some(w) = windows.iter().find(|w| w.label == label && w.location().is_some()) {
            intents.push(Intent::micro(w.key(), "What caused this event?"));
        }
    }
    let mut worst_corrupt = 0;
    for intent in &intents {
        let plan = analyst.plan(intent).map_err(|e| e.to_string())?;
        let (good, _) = run_grounded(&plan, &honest).map_err(|e| e.to_string())?;
        let r = validate(&good.text, &plan, &landmarks);
        check(r.score == 100, format!("{:?}: honest answer scored {} {:?}", intent.category, r.score, r.issues))?;
        let (bad, _) = run_grounded(&plan, &corrupting).map_err(|e| e.to_string())?;
        let r = validate(&bad.text, &plan, &landmarks);
        check(r.score <= 80, format!("{:?}: corrupted answer scored {}", intent.category, r.score))?;
        worst_corrupt = worst_corrupt.max(r.score);
    }
    Ok(format!(
        "S = max(0, 100 − 20N) for N ≤ 10; {} plans: honest 100, corrupted ≤ {worst_corrupt}; 80/60 thresholds exact",
        intents.len()
    ))
}

fn cache_semantics() -> Verdict {
    let backend = counting_mock();
    let gw = Gateway::new(backend.clone());
    let req = GenerationRequest::new("### Context\nTotal events: 12\n### Question\nq", 0.7, 500);
    let a = gw.complete(&req).map_err(|e| e.to_string())?;
    let b = gw.complete(&req).map_err(|e| e.to_string())?;
    check(b.api_calls == 0 && b.cached, "second call not served from cache")?;
    check(a.text.as_bytes() == b.text.as_bytes(), "cached text differs")?;
    check(backend.calls.load(Ordering::SeqCst) == 1, "backend called twice")?;
    for variant in [
        GenerationRequest::new(req.prompt.clone(), 0.5, 500),
        GenerationRequest::new(req.prompt.clone(), 0.7, 499),
        GenerationRequest::new(format!("{} ", req.prompt), 0.7, 500),
    ] {
        let c = gw.complete(&variant).map_err(|e| e.to_string())?;
        check(c.api_calls == 1, "distinct request served from cache")?;
    }
    // Past capacity, early entries are evicted and recomputed, never confused.
    for i in 0..1500 {
        let r = GenerationRequest::new(format!("### Context\nrow {i}\n### Question\nq"), 0.7, 50);
        let c = gw.complete(&r).map_err(|e| e.to_string())?;
        check(c.text.contains(&format!("row {i}")), "wrong cached text")?;
    }
    let again = gw.complete(&GenerationRequest::new("### Context\nrow 0\n### Question\nq", 0.7, 50)).map_err(|e| e.to_string())?;
    check(again.api_calls == 1 && again.text.contains("row 0"), "evicted entry not recomputed")?;
    Ok("repeat request → 0 backend calls, identical bytes; params/prompt changes miss; eviction safe".into())
}

fn random_summary(rng: &mut ChaCha8Rng, i: usize) -> WindowSummary {
    let quality = *[FixQuality::None, FixQuality::Fix2d, FixQuality::Fix3d].choose(rng).unwrap();
    let round6 = |v: f64| (v * 1e6).round() / 1e6;
    let anchor = (quality != FixQuality::None).then(|| GeoPoint {
        lat: round6(33.7756 + rng.random_range(-0.004..0.004)),
        lon: round6(-84.3963 + rng.random_range(-0.004..0.004)),
    });
    let mut rng2 = ChaCha8Rng::seed_from_u64(i as u64);
    let f = FeatureVector {
        extreme_event_magnitude: rng.random_range(10.0..18.0),
        instability: rng.random_range(0.05..6.0),
    };
    fleetlens_core::synth::summary_with_features(
        ["bus-07", "bus-12", "van-3"][i % 3],
        DEFAULT_START_MS - 86_400_000 + rng.random_range(0..57_600i64) * 3000,
        f,
        anchor,
        quality,
        &mut rng2,
    )
}

fn store_oracle() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = FsStore::open(dir.path()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut reference: BTreeMap<StoreKey, WindowSummary> = BTreeMap::new();
    let mut i = 0;
    while reference.len() < 1000 {
        let s = random_summary(&mut rng, i);
        i += 1;
        let key = store.put(&s).map_err(|e| e.to_string())?;
        reference.insert(key, s);
    }
    let mut labels: BTreeMap<StoreKey, BehaviorLabel> = BTreeMap::new();
    for k in reference.keys() {
        if rng.random_bool(0.9) {
            labels.insert(k.clone(), BehaviorLabel::NAMED[rng.random_range(0..5)]);
        }
    }
    store
        .put_labels(&LabelSet {
            model_version: 1,
            labels: labels.clone(),
        })
        .map_err(|e| e.to_string())?;

    let mut nonempty = 0;
    for q in 0..300 {
        let mut f = QueryFilter::default();
        if rng.random_bool(0.5) {
            let a = DEFAULT_START_MS - 86_400_000 + rng.random_range(0..172_800_000i64);
            f.time = Some((a, a + rng.random_range(0..100_000_000i64)));
        }
        if rng.random_bool(0.5) {
            f.near = Some(Circle {
                center: GeoPoint {
                    lat: 33.7756 + rng.random_range(-0.003..0.003),
                    lon: -84.3963 + rng.random_range(-0.003..0.003),
                },
                radius_m: rng.random_range(20.0..500.0),
            });
        }
        if rng.random_bool(0.4) {
            f.label = Some(BehaviorLabel::NAMED[rng.random_range(0..5)]);
        }
        if rng.random_bool(0.4) {
            f.min_gps_quality = Some([FixQuality::None, FixQuality::Fix2d, FixQuality::Fix3d][rng.random_range(0..3)]);
        }
        let got: Vec<(StoreKey, Option<BehaviorLabel>)> = store
            .scan(&f)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|r| (r.key(), r.label))
            .collect();
        let want: Vec<(StoreKey, Option<BehaviorLabel>)> = reference
            .iter()
            .filter(|(_, s)| f.time.is_none_or(|(a, b)| a <= s.window_start && s.window_start < b))
            .filter(|(_, s)| {
                let floor = match (f.min_gps_quality, f.near.is_some()) {
                    (Some(FixQuality::Fix3d), _) => Some(FixQuality::Fix3d),
                    (_, true) => Some(FixQuality::Fix2d),
                    (q, false) => q,
                };
                floor.is_none_or(|q| s.gps_quality >= q)
            })
            .filter(|(_, s)| {
                f.near.is_none_or(|c| s.anchor.is_some_and(|p| haversine(c.center, p) <= c.radius_m))
            })
            .filter(|(k, _)| f.label.is_none_or(|l| labels.get(*k) == Some(&l)))
            .map(|(k, _)| (k.clone(), labels.get(k).copied()))
            .collect();
        check(got == want, format!("query {q}: {} rows vs {} expected for {f:?}", got.len(), want.len()))?;
        nonempty += usize::from(!want.is_empty());
    }
    Ok(format!("1000 summaries on disk, 300 random filters match brute force ({nonempty} non-empty)"))
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("data reduction", data_reduction),
        ("payload model", payload_model),
        ("statistics oracle", statistics_oracle),
        ("clustering quality", clustering_quality),
        ("k-means oracle", kmeans_oracle),
        ("token/cost reduction", token_reduction),
        ("call counts", call_counts),
        ("validation score", validation_score),
        ("cache semantics", cache_semantics),
        ("store oracle", store_oracle),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match run() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
