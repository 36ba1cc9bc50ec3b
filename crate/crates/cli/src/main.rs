use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use fleetlens_cli::bench::{run_bench, BenchStrategy};
use fleetlens_cli::config::{read_json, write_json, AnalysisArgs, BackendArgs};
use fleetlens_cli::filter::FilterArgs;
use fleetlens_cli::server::{model_summary, router, AppState};
use fleetlens_core::aggregate::run_replay;
use fleetlens_core::cluster::{self, extract_features, BehaviorModel, FeatureVector};
use fleetlens_core::pipeline::Analyst;
use fleetlens_core::store::{FsStore, LabelSet, QueryFilter, StoreKey, SummaryStore};
use fleetlens_core::synth::{reference_summaries, simulate_telemetry, DEFAULT_START_MS};
use fleetlens_core::telemetry::{decode_summary, encode_summary, SamplingProfile};
use serde_json::json;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "fleetlens", version, about = "Fleet telemetry summarization, clustering, and grounded question answering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic inputs.
    #[command(subcommand)]
    Simulate(SimulateCmd),
    /// Window a raw telemetry stream into summary packets.
    Aggregate {
        /// Raw telemetry, one JSON record per line.
        #[arg(long)]
        input: PathBuf,
        /// Sampling profile JSON; the 20 Hz / 3 s default when omitted.
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Summary packets, one per line.
        #[arg(long)]
        out: PathBuf,
        /// Data-reduction report.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write to or read from a summary store.
    #[command(subcommand)]
    Store(StoreCmd),
    /// Fit behavior clusters.
    #[command(subcommand)]
    Cluster(ClusterCmd),
    /// Ask the analysis pipeline a question.
    #[command(subcommand)]
    Query(QueryCmd),
    /// Compare the grounded pipeline against the raw-records baseline.
    Bench {
        #[arg(long, value_enum, default_value = "both")]
        strategy: BenchStrategy,
        /// JSON array of query strings.
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Simulate a 30 request / 6,000 token per minute quota on the mock.
        #[arg(long)]
        rate_limit: bool,
        #[command(flatten)]
        analysis: AnalysisArgs,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Serve the JSON API (and optionally the console) over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1", env = "FLEETLENS_HOST")]
        host: String,
        #[arg(long, default_value_t = 8080, env = "FLEETLENS_PORT")]
        port: u16,
        /// Built console assets to serve at `/`.
        #[arg(long, env = "FLEETLENS_CONSOLE_DIR")]
        console_dir: Option<PathBuf>,
        #[command(flatten)]
        analysis: AnalysisArgs,
        #[command(flatten)]
        backend: BackendArgs,
    },
}

#[derive(Subcommand)]
enum SimulateCmd {
    /// Raw 20 Hz accelerometer and 1 Hz GPS records for one vehicle.
    Telemetry {
        #[arg(long, default_value = "bus-07")]
        vehicle: String,
        #[arg(long, default_value_t = DEFAULT_START_MS)]
        start_ms: i64,
        #[arg(long, default_value_t = 600)]
        duration_s: u32,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// The 1,219-window campus reference dataset as summary packets.
    Summaries {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum StoreCmd {
    /// Add summary packets to a store.
    Ingest {
        #[arg(long, env = "FLEETLENS_STORE")]
        store: PathBuf,
        /// Summary packets, one per line.
        #[arg(long)]
        input: PathBuf,
    },
    /// Print matching summaries as JSON lines.
    Scan {
        #[arg(long, env = "FLEETLENS_STORE")]
        store: PathBuf,
        /// Epoch ms or RFC 3339, inclusive.
        #[arg(long)]
        from: Option<String>,
        /// Epoch ms or RFC 3339, exclusive.
        #[arg(long)]
        to: Option<String>,
        /// lat,lon,radius_m
        #[arg(long, allow_hyphen_values = true)]
        near: Option<String>,
        #[arg(long)]
        label: Option<String>,
        /// none, fix2d or fix3d.
        #[arg(long)]
        min_quality: Option<String>,
    },
}

#[derive(Subcommand)]
enum ClusterCmd {
    /// Fit a model over every stored window and label the store with it.
    Fit {
        #[arg(long, env = "FLEETLENS_STORE")]
        store: PathBuf,
        #[arg(long, default_value_t = cluster::DEFAULT_K)]
        k: usize,
        #[arg(long, default_value_t = cluster::DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value_t = cluster::DEFAULT_RESTARTS)]
        restarts: usize,
        /// Model file. An existing model here is superseded by version + 1.
        #[arg(long)]
        model_out: PathBuf,
    },
    /// Objective for a range of k, for picking the elbow.
    Elbow {
        #[arg(long, env = "FLEETLENS_STORE")]
        store: PathBuf,
        #[arg(long, default_value_t = 1)]
        k_min: usize,
        #[arg(long, default_value_t = 10)]
        k_max: usize,
        #[arg(long, default_value_t = cluster::DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value_t = cluster::DEFAULT_RESTARTS)]
        restarts: usize,
    },
}

#[derive(Subcommand)]
enum QueryCmd {
    /// Answer a question about the fleet, or explain one event with --event.
    Ask {
        text: String,
        /// Explain this window (`<vehicle>@<window_start>`) instead.
        #[arg(long)]
        event: Option<String>,
        /// Withhold the answer text when the validation score is lower.
        #[arg(long)]
        min_score: Option<u8>,
        #[command(flatten)]
        analysis: AnalysisArgs,
        #[command(flatten)]
        backend: BackendArgs,
    },
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(io::stderr)
        .init();
    match Cli::parse().command {
        Command::Simulate(cmd) => simulate(cmd),
        Command::Aggregate {
            input,
            profile,
            out,
            report,
        } => aggregate(&input, profile.as_deref(), &out, report.as_deref()),
        Command::Store(cmd) => store(cmd),
        Command::Cluster(cmd) => cluster_cmd(cmd),
        Command::Query(QueryCmd::Ask {
            text,
            event,
            min_score,
            analysis,
            backend,
        }) => ask(&text, event.as_deref(), min_score, &analysis, &backend),
        Command::Bench {
            strategy,
            queries,
            out,
            rate_limit,
            analysis,
            backend,
        } => bench(strategy, &queries, &out, rate_limit, &analysis, &backend),
        Command::Serve {
            host,
            port,
            console_dir,
            analysis,
            backend,
        } => serve(&host, port, console_dir, &analysis, &backend),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_packets<'a>(path: &Path, summaries: impl IntoIterator<Item = &'a fleetlens_core::telemetry::WindowSummary>) -> Result<usize> {
    let mut w = create(path)?;
    let mut n = 0;
    for s in summaries {
        w.write_all(&encode_summary(s)?)?;
        w.write_all(b"\n")?;
        n += 1;
    }
    w.flush()?;
    Ok(n)
}

fn simulate(cmd: SimulateCmd) -> Result<()> {
    match cmd {
        SimulateCmd::Telemetry {
            vehicle,
            start_ms,
            duration_s,
            seed,
            out,
        } => {
            let records = simulate_telemetry(&vehicle, start_ms, duration_s, &SamplingProfile::DEFAULT, seed);
            let mut w = create(&out)?;
            for r in &records {
                serde_json::to_writer(&mut w, r)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
            eprintln!("wrote {} records to {}", records.len(), out.display());
        }
        SimulateCmd::Summaries { seed, out } => {
            let n = write_packets(&out, &reference_summaries(seed))?;
            eprintln!("wrote {n} summaries to {}", out.display());
        }
    }
    Ok(())
}

fn aggregate(input: &Path, profile: Option<&Path>, out: &Path, report: Option<&Path>) -> Result<()> {
    let profile: SamplingProfile = match profile {
        Some(p) => read_json(p)?,
        None => SamplingProfile::DEFAULT,
    };
    let reader = BufReader::new(File::open(input).with_context(|| format!("opening {}", input.display()))?);
    let output = run_replay(reader, &profile)?;
    write_packets(out, &output.summaries)?;
    if let Some(path) = report {
        write_json(path, &output.report)?;
    }
    let r = &output.report;
    eprintln!(
        "{} windows, {} B aggregated vs {} B raw ({:.1}% reduction), {} dropped records",
        r.windows, r.aggregated_bytes, r.raw_bytes_projected, r.reduction_pct, r.dropped_records
    );
    Ok(())
}

fn store(cmd: StoreCmd) -> Result<()> {
    match cmd {
        StoreCmd::Ingest { store, input } => {
            let store = FsStore::open(&store)?;
            let reader = BufReader::new(File::open(&input).with_context(|| format!("opening {}", input.display()))?);
            let mut n = 0;
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let summary = decode_summary(line.as_bytes()).with_context(|| format!("{} line {}", input.display(), i + 1))?;
                store.put(&summary)?;
                n += 1;
            }
            eprintln!("ingested {n} summaries; store holds {}", store.len()?);
        }
        StoreCmd::Scan {
            store,
            from,
            to,
            near,
            label,
            min_quality,
        } => {
            let filter = FilterArgs {
                from,
                to,
                near,
                label,
                min_quality,
            }
            .to_filter()?;
            let store = FsStore::open(&store)?;
            let mut out = BufWriter::new(io::stdout().lock());
            for row in store.scan(&filter)? {
                let packet: serde_json::Value = serde_json::from_slice(&encode_summary(&row.summary)?)?;
                let line = json!({ "key": row.key().to_string(), "label": row.label, "summary": packet });
                serde_json::to_writer(&mut out, &line)?;
                out.write_all(b"\n")?;
            }
            out.flush()?;
        }
    }
    Ok(())
}

fn stored_features(store: &FsStore) -> Result<(Vec<StoreKey>, Vec<FeatureVector>)> {
    let rows = store.scan(&QueryFilter::all())?;
    if rows.is_empty() {
        bail!("store at {} is empty", store.root().display());
    }
    Ok(rows.iter().map(|r| (r.key(), extract_features(&r.summary))).unzip())
}

fn cluster_cmd(cmd: ClusterCmd) -> Result<()> {
    match cmd {
        ClusterCmd::Fit {
            store,
            k,
            seed,
            restarts,
            model_out,
        } => {
            let store = FsStore::open(&store)?;
            let (keys, features) = stored_features(&store)?;
            let previous_model = if model_out.exists() {
                read_json::<BehaviorModel>(&model_out)?.version
            } else {
                0
            };
            let previous_labels = store.latest_labels()?.map_or(0, |l| l.model_version);
            let version = previous_model.max(previous_labels) + 1;
            let model = cluster::fit_with_restarts(&features, k, seed, restarts)?.with_version(version);
            let labels = LabelSet {
                model_version: version,
                labels: keys.into_iter().zip(&features).map(|(key, f)| (key, model.assign(f))).collect(),
            };
            store.put_labels(&labels)?;
            write_json(&model_out, &model)?;
            let silhouette = cluster::model_silhouette(&model, &features)?;
            let summary = model_summary(&model);
            println!("{}", serde_json::to_string_pretty(&json!({ "model": summary, "silhouette": silhouette }))?);
        }
        ClusterCmd::Elbow {
            store,
            k_min,
            k_max,
            seed,
            restarts,
        } => {
            let store = FsStore::open(&store)?;
            let (_, features) = stored_features(&store)?;
            let curve = cluster::elbow_curve(&features, k_min, k_max, seed, restarts)?;
            let rows: Vec<_> = curve.iter().map(|(k, j)| json!({ "k": k, "objective": j })).collect();
            println!("{}", serde_json::to_string_pretty(&rows)?);
        }
    }
    Ok(())
}

fn ask(text: &str, event: Option<&str>, min_score: Option<u8>, analysis: &AnalysisArgs, backend: &BackendArgs) -> Result<()> {
    let loaded = analysis.load()?;
    let store = FsStore::open(&analysis.store)?;
    let gateway = backend.gateway()?;
    let analyst = Analyst {
        store: &store,
        model: &loaded.model,
        landmarks: &loaded.landmarks,
        planner: &loaded.planner,
        validator: &loaded.validator,
        gateway: &gateway,
    };
    let answer = match event {
        Some(key) => analyst.explain(key.parse()?, Some(text))?,
        None => analyst.ask(text)?,
    };
    if let Some(min) = min_score.filter(|m| answer.validation.score < *m) {
        println!(
            "{}",
            serde_json::to_string_pretty(&json!({
                "withheld": true,
                "category": answer.category,
                "validation": answer.validation,
                "usage": answer.usage,
            }))?
        );
        bail!("answer scored {} (minimum {min}); text withheld", answer.validation.score);
    }
    println!("{}", serde_json::to_string_pretty(&answer)?);
    Ok(())
}

fn bench(
    strategy: BenchStrategy,
    queries: &Path,
    out: &Path,
    rate_limit: bool,
    analysis: &AnalysisArgs,
    backend: &BackendArgs,
) -> Result<()> {
    let queries: Vec<String> = read_json(queries)?;
    let loaded = analysis.load()?;
    let store = FsStore::open(&analysis.store)?;
    let grounded = backend.bench_gateway(rate_limit)?;
    let baseline = backend.bench_gateway(rate_limit)?;
    let analyst = Analyst {
        store: &store,
        model: &loaded.model,
        landmarks: &loaded.landmarks,
        planner: &loaded.planner,
        validator: &loaded.validator,
        gateway: &grounded,
    };
    let report = run_bench(&analyst, &baseline, &queries, strategy, backend.seed)?;
    write_json(out, &report)?;
    if let Some(pct) = report.token_reduction_pct {
        eprintln!(
            "{} queries: grounded {} tokens vs llm-only {} ({pct:.1}% fewer), ${:.6} vs ${:.6}",
            queries.len(),
            report.grounded.total_tokens,
            report.llm_only.total_tokens,
            report.grounded.cost_usd,
            report.llm_only.cost_usd
        );
    }
    Ok(())
}

fn serve(host: &str, port: u16, console_dir: Option<PathBuf>, analysis: &AnalysisArgs, backend: &BackendArgs) -> Result<()> {
    let loaded = analysis.load()?;
    let state = AppState {
        store: Arc::new(FsStore::open(&analysis.store)?),
        model: Arc::new(loaded.model),
        landmarks: Arc::new(loaded.landmarks),
        planner: Arc::new(loaded.planner),
        validator: Arc::new(loaded.validator),
        gateway: Arc::new(backend.gateway()?),
    };
    let addr: SocketAddr = format!("{host}:{port}").parse().with_context(|| format!("bad address {host}:{port}"))?;
    let app = router(state, console_dir);
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?
        .block_on(async move {
            let listener = tokio::net::TcpListener::bind(addr).await?;
            tracing::info!(%addr, "listening");
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await?;
            Ok(())
        })
}
