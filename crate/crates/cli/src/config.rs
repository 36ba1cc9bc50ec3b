//! Loading of the JSON inputs every analysis verb shares, and backend
//! construction.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use fleetlens_core::cluster::BehaviorModel;
use fleetlens_core::gateway::{
    Backend, Clock, Gateway, HttpBackend, LatencyModel, ManualClock, MockBackend, MockMode,
    RateLimitSim, SystemClock,
};
use fleetlens_core::geo::LandmarkDirectory;
use fleetlens_core::planner::PlannerConfig;
use fleetlens_core::synth::DEFAULT_START_MS;
use fleetlens_core::validate::ValidatorConfig;
use serde::de::DeserializeOwned;

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    /// Deterministic echo of the prompt's facts.
    Mock,
    /// Mock that appends an invented number and street name.
    MockCorrupting,
    /// OpenAI-compatible chat-completions endpoint.
    Http,
}

#[derive(Clone, Debug, Args)]
pub struct BackendArgs {
    #[arg(long, value_enum, default_value = "mock", env = "FLEETLENS_BACKEND")]
    pub backend: BackendKind,
    /// Chat-completions URL for the http backend.
    #[arg(long, env = "FLEETLENS_LLM_ENDPOINT")]
    pub endpoint: Option<String>,
    /// Model name sent to the http backend.
    #[arg(long, default_value = "gpt-4o-mini", env = "FLEETLENS_LLM_MODEL")]
    pub llm_model: String,
    #[arg(long, default_value_t = 30)]
    pub timeout_secs: u64,
    /// Seed for the mock backend's phrasing.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

impl BackendArgs {
    fn mock_mode(&self) -> Option<MockMode> {
        match self.backend {
            BackendKind::Mock => Some(MockMode::Honest),
            BackendKind::MockCorrupting => Some(MockMode::Corrupting),
            BackendKind::Http => None,
        }
    }

    pub fn is_mock(&self) -> bool {
        self.mock_mode().is_some()
    }

    fn http(&self) -> Result<HttpBackend> {
        let Some(endpoint) = &self.endpoint else {
            bail!("--endpoint is required for the http backend");
        };
        // The bearer token, if any, comes from the LLM_API_KEY environment variable.
        Ok(HttpBackend::new(endpoint, &self.llm_model, Duration::from_secs(self.timeout_secs)))
    }

    /// A gateway on the wall clock.
    pub fn gateway(&self) -> Result<Gateway> {
        let backend: Arc<dyn Backend> = match self.mock_mode() {
            Some(mode) => Arc::new(MockBackend::new(self.seed, mode)),
            None => Arc::new(self.http()?),
        };
        Ok(Gateway::new(backend))
    }

    /// A gateway for benchmarking. Mock backends run on a virtual clock
    /// charged with a latency model, optionally rate limited, so reported
    /// timings are reproducible; the http backend uses real time.
    pub fn bench_gateway(&self, rate_limited: bool) -> Result<Gateway> {
        match self.mock_mode() {
            Some(mode) => {
                let clock: Arc<dyn Clock> = Arc::new(ManualClock::new(DEFAULT_START_MS as u64));
                let mut mock = MockBackend::new(self.seed, mode).with_latency(clock.clone(), LatencyModel::default());
                if rate_limited {
                    mock = mock.with_rate_limit(RateLimitSim::hosted_free_tier());
                }
                Ok(Gateway::with_clock(Arc::new(mock), clock))
            }
            None => Ok(Gateway::with_clock(Arc::new(self.http()?), Arc::new(SystemClock::new()))),
        }
    }
}

/// Model, landmark directory, and optional planner/validator overrides.
#[derive(Clone, Debug, Args)]
pub struct AnalysisArgs {
    /// Summary store root.
    #[arg(long, env = "FLEETLENS_STORE")]
    pub store: PathBuf,
    /// Fitted model written by `cluster fit`.
    #[arg(long, env = "FLEETLENS_MODEL")]
    pub model: PathBuf,
    #[arg(long, env = "FLEETLENS_LANDMARKS")]
    pub landmarks: PathBuf,
    /// Lexicon and radii; defaults apply when omitted.
    #[arg(long)]
    pub planner: Option<PathBuf>,
    /// Validator lexicons and tolerance; defaults apply when omitted.
    #[arg(long)]
    pub validator: Option<PathBuf>,
}

pub struct Loaded {
    pub model: BehaviorModel,
    pub landmarks: LandmarkDirectory,
    pub planner: PlannerConfig,
    pub validator: ValidatorConfig,
}

impl AnalysisArgs {
    pub fn load(&self) -> Result<Loaded> {
        let model: BehaviorModel = read_json(&self.model)?;
        let landmarks = LandmarkDirectory::load(&self.landmarks)
            .with_context(|| format!("loading landmarks from {}", self.landmarks.display()))?;
        let planner = match &self.planner {
            Some(p) => read_json(p)?,
            None => PlannerConfig::default(),
        };
        let validator = match &self.validator {
            Some(p) => read_json(p)?,
            None => ValidatorConfig::default(),
        };
        Ok(Loaded {
            model,
            landmarks,
            planner,
            validator,
        })
    }
}
