//! Grounded pipeline versus the raw-records baseline over a query set.

use anyhow::Result;
use clap::ValueEnum;
use fleetlens_core::gateway::{reference_tokens, run_llm_only, Gateway, UsageReport};
use fleetlens_core::pipeline::{Analyst, PipelineError};
use fleetlens_core::planner::IntentCategory;
use fleetlens_core::store::QueryFilter;
use fleetlens_core::telemetry::encode_summary;
use fleetlens_core::validate::Disposition;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchStrategy {
    Grounded,
    LlmOnly,
    Both,
}

impl BenchStrategy {
    fn grounded(self) -> bool {
        self != BenchStrategy::LlmOnly
    }

    fn llm_only(self) -> bool {
        self != BenchStrategy::Grounded
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroundedResult {
    pub category: IntentCategory,
    pub score: u8,
    pub disposition: Disposition,
    pub attempts: u32,
    pub usage: UsageReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QueryResult {
    pub query: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grounded: Option<GroundedResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub llm_only: Option<UsageReport>,
    /// Grounded tokens as a fraction of baseline tokens.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub token_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StrategyTotals {
    pub queries: usize,
    pub total_tokens: u64,
    pub api_calls: u32,
    pub latency_ms: u64,
    pub rate_limit_wait_ms: u64,
    pub cost_usd: f64,
}

impl StrategyTotals {
    fn add(&mut self, u: &UsageReport) {
        self.queries += 1;
        self.total_tokens += u.total_tokens;
        self.api_calls += u.api_calls;
        self.latency_ms += u.latency_ms;
        self.rate_limit_wait_ms += u.rate_limit_wait_ms;
        self.cost_usd += u.cost_usd;
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchReport {
    pub strategy: BenchStrategy,
    pub backend: String,
    pub seed: u64,
    pub records: usize,
    /// Reference token count of the full encoded dataset.
    pub dataset_tokens: usize,
    pub queries: Vec<QueryResult>,
    pub grounded: StrategyTotals,
    pub llm_only: StrategyTotals,
    /// Percentage of baseline tokens saved, over queries both strategies answered.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub token_reduction_pct: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_score: Option<f64>,
}

/// Runs every query through the selected strategies. Each strategy gets its
/// own gateway so neither benefits from the other's cache.
pub fn run_bench(
    analyst: &Analyst<'_>,
    baseline_gateway: &Gateway,
    queries: &[String],
    strategy: BenchStrategy,
    seed: u64,
) -> Result<BenchReport> {
    let rows = analyst.store.scan(&QueryFilter::all())?;
    let records: Vec<String> = rows
        .iter()
        .map(|r| encode_summary(&r.summary).map(|b| String::from_utf8_lossy(&b).into_owned()))
        .collect::<Result<_, _>>()?;
    let dataset_tokens = reference_tokens(&records.join("\n"));

    let mut report = BenchReport {
        strategy,
        backend: analyst.gateway.backend_name().to_owned(),
        seed,
        records: records.len(),
        dataset_tokens,
        queries: Vec::new(),
        grounded: StrategyTotals::default(),
        llm_only: StrategyTotals::default(),
        token_reduction_pct: None,
        mean_score: None,
    };
    let (mut paired_grounded, mut paired_baseline, mut score_sum) = (0u64, 0u64, 0u64);
    for query in queries {
        let mut result = QueryResult {
            query: query.clone(),
            grounded: None,
            llm_only: None,
            token_ratio: None,
            error: None,
        };
        let mut errors = Vec::new();
        if strategy.grounded() {
            match analyst.ask(query) {
                Ok(a) => {
                    report.grounded.add(&a.usage);
                    score_sum += u64::from(a.validation.score);
                    result.grounded = Some(GroundedResult {
                        category: a.category,
                        score: a.validation.score,
                        disposition: a.validation.disposition,
                        attempts: a.attempts,
                        usage: a.usage,
                    });
                }
                Err(e @ PipelineError::Planner(_)) => errors.push(format!("grounded: {e}")),
                Err(e) => return Err(e.into()),
            }
        }
        if strategy.llm_only() {
            let (_, usage) = run_llm_only(query, &records, baseline_gateway)?;
            report.llm_only.add(&usage);
            result.llm_only = Some(usage);
        }
        if let (Some(g), Some(b)) = (&result.grounded, &result.llm_only) {
            paired_grounded += g.usage.total_tokens;
            paired_baseline += b.total_tokens;
            result.token_ratio = Some(g.usage.total_tokens as f64 / b.total_tokens as f64);
        }
        if !errors.is_empty() {
            result.error = Some(errors.join("; "));
        }
        report.queries.push(result);
    }
    if paired_baseline > 0 {
        report.token_reduction_pct = Some(100.0 * (1.0 - paired_grounded as f64 / paired_baseline as f64));
    }
    if report.grounded.queries > 0 {
        report.mean_score = Some(score_sum as f64 / report.grounded.queries as f64);
    }
    Ok(report)
}
