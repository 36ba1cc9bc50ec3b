//! End-to-end answering: classify, retrieve, prompt, generate, validate,
//! and retry once when the answer scores too low.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::BehaviorModel;
use crate::gateway::{run_grounded, Gateway, GatewayError, UsageReport};
use crate::geo::LandmarkDirectory;
use crate::planner::{
    build_prompt, classify, label_windows, retrieve, Intent, IntentCategory, LabeledWindow,
    PlannerConfig, PlannerError, QueryPlan,
};
use crate::store::{QueryFilter, StoreError, StoreKey, SummaryStore};
use crate::validate::{validate_with, Disposition, ValidationReport, ValidatorConfig};

/// Appended to the instructions when the first answer must be retried.
pub const RETRY_INSTRUCTION: &str = "Use only the provided facts.";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// A validated answer with the accounting for every call behind it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub category: IntentCategory,
    pub answer: String,
    pub validation: ValidationReport,
    pub usage: UsageReport,
    /// Generation attempts; two when the first was retried.
    pub attempts: u32,
    pub context: String,
}

/// Generates and validates an answer for `plan`. An answer whose
/// disposition is retry gets one more attempt with a stricter instruction;
/// the better-scoring attempt is returned, the first on ties.
pub fn answer_plan(
    plan: &QueryPlan,
    gateway: &Gateway,
    landmarks: &LandmarkDirectory,
    validator: &ValidatorConfig,
) -> Result<Answer, GatewayError> {
    let (first, mut usage) = run_grounded(plan, gateway)?;
    let first_report = validate_with(&first.text, plan, landmarks, validator);
    let mut best = (first.text, first_report);
    let mut attempts = 1;
    if best.1.disposition == Disposition::Retry {
        let retry_plan = plan.with_extra_instruction(RETRY_INSTRUCTION);
        let (second, second_usage) = run_grounded(&retry_plan, gateway)?;
        attempts += 1;
        usage.input_tokens += second_usage.input_tokens;
        usage.output_tokens += second_usage.output_tokens;
        usage.total_tokens = usage.input_tokens + usage.output_tokens;
        usage.api_calls += second_usage.api_calls;
        usage.latency_ms += second_usage.latency_ms;
        usage.rate_limit_wait_ms += second_usage.rate_limit_wait_ms;
        usage.cost_usd = crate::gateway::cost_usd(usage.input_tokens, usage.output_tokens);
        usage.cached = usage.cached && second_usage.cached;
        let report = validate_with(&second.text, &retry_plan, landmarks, validator);
        if report.score > best.1.score {
            best = (second.text, report);
        }
    }
    Ok(Answer {
        category: plan.intent.category,
        answer: best.0,
        validation: best.1,
        usage,
        attempts,
        context: plan.context_text.clone(),
    })
}

/// Everything a query needs, borrowed for the duration of one request.
pub struct Analyst<'a> {
    pub store: &'a dyn SummaryStore,
    pub model: &'a BehaviorModel,
    pub landmarks: &'a LandmarkDirectory,
    pub planner: &'a PlannerConfig,
    pub validator: &'a ValidatorConfig,
    pub gateway: &'a Gateway,
}

impl Analyst<'_> {
    /// Current store contents labeled with the model.
    pub fn snapshot(&self) -> Result<Vec<LabeledWindow>, StoreError> {
        let rows = self.store.scan(&QueryFilter::all())?;
        Ok(label_windows(rows.into_iter().map(|r| r.summary), self.model))
    }

    pub fn plan(&self, intent: &Intent) -> Result<QueryPlan, PipelineError> {
        let windows = self.snapshot()?;
        let context = retrieve(intent, &windows, self.landmarks, self.planner)?;
        Ok(build_prompt(intent, context))
    }

    /// Answers a free-text analytical question.
    pub fn ask(&self, query: &str) -> Result<Answer, PipelineError> {
        let intent = classify(query, self.planner, self.landmarks)?;
        self.answer(&intent)
    }

    /// Explains one stored window.
    pub fn explain(&self, event: StoreKey, question: Option<&str>) -> Result<Answer, PipelineError> {
        let question = question
            .map(str::trim)
            .filter(|q| !q.is_empty())
            .unwrap_or("What most likely caused this event?");
        self.answer(&Intent::micro(event, question))
    }

    pub fn answer(&self, intent: &Intent) -> Result<Answer, PipelineError> {
        let plan = self.plan(intent)?;
        Ok(answer_plan(&plan, self.gateway, self.landmarks, self.validator)?)
    }
}
