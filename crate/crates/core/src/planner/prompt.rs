use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::retrieve::{ContextDetails, ContextSummary, LabelCount};
use super::{Intent, IntentCategory};
use crate::gateway::reference_tokens;
use crate::numbers::{format_count, format_fixed};

/// Bounds on the rendered context block under the reference tokenizer.
pub const CONTEXT_MIN_TOKENS: usize = 50;
pub const CONTEXT_MAX_TOKENS: usize = 400;

const PREAMBLE: &str = "You are an analyst for a vehicle fleet. Answer the question using only the facts in the context below.";

/// A classified query with its grounded context and generation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryPlan {
    pub intent: Intent,
    pub context: ContextSummary,
    /// The rendered context block; the only source of facts for the answer.
    pub context_text: String,
    pub prompt_text: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl QueryPlan {
    pub fn context_tokens(&self) -> usize {
        reference_tokens(&self.context_text)
    }

    /// Same plan with an extra instruction appended to the prompt.
    pub fn with_extra_instruction(&self, instruction: &str) -> QueryPlan {
        let mut plan = self.clone();
        plan.prompt_text = render_prompt(&self.context_text, &instructions(&self.context, Some(instruction)), &self.intent.query);
        plan
    }
}

fn utc(ms: i64) -> Option<DateTime<Utc>> {
    DateTime::<Utc>::from_timestamp_millis(ms)
}

/// `2024-10-21 14:00–15:30 UTC`, or both dates when the span crosses midnight.
fn render_span(span: Option<(i64, i64)>) -> String {
    let Some((start, end)) = span else {
        return "none".into();
    };
    match (utc(start), utc(end)) {
        (Some(s), Some(e)) if s.date_naive() == e.date_naive() => {
            format!("{}–{} UTC", s.format("%Y-%m-%d %H:%M"), e.format("%H:%M"))
        }
        (Some(s), Some(e)) => format!(
            "{} – {} UTC",
            s.format("%Y-%m-%d %H:%M"),
            e.format("%Y-%m-%d %H:%M")
        ),
        _ => "none".into(),
    }
}

/// Distances and thresholds without needless trailing zeros.
fn meters(v: f64) -> String {
    if v.fract() == 0.0 {
        format_fixed(v, 0)
    } else {
        format_fixed(v, 1)
    }
}

fn label_lines(counts: &[LabelCount]) -> Vec<String> {
    counts
        .iter()
        .map(|c| {
            if c.windows == 0 {
                format!("- {}: 0 windows", c.label)
            } else {
                format!(
                    "- {}: {} windows, instability {}",
                    c.label,
                    format_count(c.windows),
                    format_fixed(c.mean_instability, 2)
                )
            }
        })
        .collect()
}

/// Lines of the context block split into a fixed head and a list that may be
/// shortened to respect the token budget.
struct Block {
    head: Vec<String>,
    list_title: Option<String>,
    list: Vec<String>,
}

fn block(ctx: &ContextSummary) -> Block {
    let total = format!("Total events: {}", format_count(ctx.total_events));
    let window = format!("Observation window: {}", render_span(ctx.observation_window));
    let hotspot_lines = || -> Vec<String> {
        ctx.hotspots
            .iter()
            .map(|h| {
                format!(
                    "- {}: {} events, instability {}",
                    h.landmark,
                    format_count(h.events),
                    format_fixed(h.mean_instability, 2)
                )
            })
            .collect()
    };
    match &ctx.details {
        ContextDetails::Aggressive { flagged_windows } => Block {
            head: vec![
                "Aggressive driving summary".into(),
                "Scope: every stored window labeled by the current behavior model; hotspots group Aggressive and Very Aggressive windows by nearest landmark.".into(),
                total,
                format!("Aggressive or Very Aggressive windows: {}", format_count(*flagged_windows)),
                window,
            ],
            list_title: Some("Hotspots:".into()),
            list: hotspot_lines(),
        },
        ContextDetails::Dwell {
            threshold_m,
            total_minutes,
            sites,
        } => Block {
            head: vec![
                "Dwell time summary".into(),
                format!(
                    "Scope: runs of consecutive windows from one vehicle that move less than {} m, attributed to the landmark nearest the first window.",
                    meters(*threshold_m)
                ),
                total,
                format!("Total dwell minutes: {}", format_fixed(*total_minutes, 1)),
                window,
            ],
            list_title: Some("Dwell sites:".into()),
            list: sites
                .iter()
                .zip(&ctx.hotspots)
                .map(|(s, h)| {
                    format!(
                        "- {}: {} minutes across {} stops, instability {}",
                        s.landmark,
                        format_fixed(s.minutes, 1),
                        format_count(s.episodes),
                        format_fixed(h.mean_instability, 2)
                    )
                })
                .collect(),
        },
        ContextDetails::Counting {
            label,
            matched,
            per_label,
        } => {
            let matched_line = match label {
                Some(l) => format!("{l} windows: {}", format_count(*matched)),
                None => format!("Matched windows: {}", format_count(*matched)),
            };
            Block {
                head: vec![
                    "Event count summary".into(),
                    "Scope: every stored window, each labeled by the current behavior model.".into(),
                    total,
                    matched_line,
                    window,
                ],
                list_title: Some("Windows per label:".into()),
                list: label_lines(per_label),
            }
        }
        ContextDetails::Route { threshold_m, buckets } => Block {
            head: vec![
                "Route efficiency summary".into(),
                format!(
                    "Scope: windows grouped by starting hour (UTC); displacement is the GPS distance between consecutive windows of one vehicle, and dwell share counts steps under {} m.",
                    meters(*threshold_m)
                ),
                total,
                window,
            ],
            list_title: Some("Hourly buckets:".into()),
            list: buckets
                .iter()
                .map(|b| {
                    format!(
                        "- {:02}:00 UTC: {} windows, {} m per window, dwell {}%",
                        b.hour,
                        format_count(b.windows),
                        format_fixed(b.mean_displacement_m, 1),
                        format_fixed(b.dwell_pct, 1)
                    )
                })
                .collect(),
        },
        ContextDetails::Spatial {
            landmark,
            radius_m,
            within_radius,
            per_label,
        } => Block {
            head: vec![
                format!("Spatial pattern summary for {landmark}"),
                format!(
                    "Scope: located windows within {} m of {landmark}, labeled by the current behavior model.",
                    meters(*radius_m)
                ),
                total,
                format!("Windows within radius: {}", format_count(*within_radius)),
                window,
            ],
            list_title: Some("Windows per label:".into()),
            list: label_lines(per_label),
        },
        ContextDetails::Micro {
            event,
            label,
            landmark,
            distance_m,
            instability,
            extreme_event_magnitude,
            mag_mean,
            radius_m,
            neighbors,
        } => {
            let started = utc(event.window_start)
                .map(|t| t.format("%Y-%m-%d %H:%M:%S UTC").to_string())
                .unwrap_or_else(|| "unknown".into());
            Block {
                head: vec![
                    "Selected event context".into(),
                    format!("Vehicle: {}", event.vehicle_id),
                    format!("Window start: {started}"),
                    format!("Label: {label}"),
                    format!("Nearest landmark: {landmark}, {} m away", meters((distance_m * 10.0).round() / 10.0)),
                    format!("Instability: {}", format_fixed(*instability, 2)),
                    format!("Extreme event magnitude: {} m/s²", format_fixed(*extreme_event_magnitude, 2)),
                    format!("Mean acceleration magnitude: {} m/s²", format_fixed(*mag_mean, 2)),
                    format!("Neighboring windows within {} m: {}", meters(*radius_m), format_count(ctx.total_events)),
                ],
                list_title: (ctx.total_events > 0).then(|| "Neighbor labels:".into()),
                list: neighbors
                    .iter()
                    .filter(|n| n.windows > 0)
                    .map(|n| format!("- {}: {} windows", n.label, format_count(n.windows)))
                    .collect(),
            }
        }
    }
}

fn render_block(b: &Block, list_len: usize) -> String {
    let mut lines = b.head.clone();
    let Some(title) = &b.list_title else {
        return lines.join("\n");
    };
    if b.list.is_empty() {
        lines.push("No matching records were found.".into());
    } else {
        lines.push(title.clone());
        lines.extend(b.list[..list_len].iter().cloned());
        if list_len < b.list.len() {
            lines.push(format!("Entries not shown: {}", format_count((b.list.len() - list_len) as u64)));
        }
    }
    lines.join("\n")
}

/// Renders the context block, dropping trailing list entries if needed to
/// stay within [`CONTEXT_MAX_TOKENS`].
pub fn render_context(ctx: &ContextSummary) -> String {
    let b = block(ctx);
    let mut n = b.list.len();
    loop {
        let text = render_block(&b, n);
        if reference_tokens(&text) <= CONTEXT_MAX_TOKENS || n == 0 {
            return text;
        }
        n -= 1;
    }
}

fn instructions(ctx: &ContextSummary, extra: Option<&str>) -> Vec<String> {
    let task = match ctx.category {
        IntentCategory::AggressiveDriving => "Identify where aggressive driving concentrates and how its severity compares across the hotspots.",
        IntentCategory::DwellTime => "Identify where vehicles dwell longest and suggest plausible operational reasons.",
        IntentCategory::EventCounting => "Report the requested count directly, then put it in context with the other labels.",
        IntentCategory::RouteEfficiency => "Compare the hourly buckets and point out when movement is slowest or dwell share is highest.",
        IntentCategory::SpatialPatterns => "Describe the mix of driving behavior around the named landmark.",
        IntentCategory::MicroEvent => "Explain the most likely cause of the selected event from its label, location, and neighborhood.",
    };
    let mut lines = vec![
        task.to_owned(),
        "Use only numbers that appear in the context, written the same way.".to_owned(),
        "Refer to places only by the landmark names given in the context.".to_owned(),
    ];
    if ctx.category.is_micro() {
        lines.push("Match the tone to the label: describe calm or moderate events plainly and do not downplay aggressive ones.".into());
        lines.push("Answer in two or three sentences.".into());
    } else {
        lines.push("Keep the answer short and factual.".into());
    }
    if ctx.total_events == 0 && !ctx.category.is_micro() {
        lines.push("The context contains no matching events: say that no data is available for this question instead of estimating.".into());
    }
    if let Some(extra) = extra {
        lines.push(extra.to_owned());
    }
    lines
}

fn render_prompt(context_text: &str, instructions: &[String], question: &str) -> String {
    let bullets: Vec<String> = instructions.iter().map(|l| format!("- {l}")).collect();
    format!(
        "{PREAMBLE}\n\n### Context\n{context_text}\n\n### Instructions\n{}\n\n### Question\n{}\n",
        bullets.join("\n"),
        question.trim()
    )
}

/// Assembles the grounded prompt and picks generation settings.
pub fn build_prompt(intent: &Intent, context: ContextSummary) -> QueryPlan {
    let context_text = render_context(&context);
    let prompt_text = render_prompt(&context_text, &instructions(&context, None), &intent.query);
    let (temperature, max_tokens) = intent.category.generation_settings();
    QueryPlan {
        intent: intent.clone(),
        context,
        context_text,
        prompt_text,
        temperature,
        max_tokens,
    }
}
