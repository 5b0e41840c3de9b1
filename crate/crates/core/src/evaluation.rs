//! Delivery and decision-quality metrics, paired arm comparison and
//! counterfactual replay. Everything here is a pure function of exported
//! run artifacts.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{propose_or_degrade, AgentConfig, AgentInput};
use crate::audit::AuditKind;
use crate::clock::{SimTime, MINUTES_PER_DAY};
use crate::decision::{Action, DecisionRecord, DecisionStage, Resolution, Verdict};
use crate::events::{DeploymentChange, EventKind, RunEvent, RunOutcome};
use crate::ledger::{LedgerEntry, Payload};
use crate::orchestrator::{Adjudication, RunSummary};
use crate::policy::{evaluate_or_escalate, EvaluationContext, PolicyBundle};
use crate::trust::TrustTier;

/// Incidents starting this long after a promotion count against it.
pub const CFR_HORIZON_MIN: u64 = 180;

/// A protective proposal this soon after onset counts as catching the fault.
pub const DETECTION_HORIZON_MIN: u64 = 30;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("missing_adjudication: no adjudication for `{0}`")]
    MissingAdjudication(String),
    #[error("insufficient_inputs: ledger entry {sequence}: {reason}")]
    InsufficientInputs { sequence: u64, reason: String },
    #[error("unpaired_runs: {0}")]
    UnpairedRuns(String),
    #[error("malformed ledger entry {0}")]
    MalformedEntry(u64),
}

impl EvalError {
    pub fn code(&self) -> &'static str {
        match self {
            EvalError::MissingAdjudication(_) => "missing_adjudication",
            EvalError::InsufficientInputs { .. } => "insufficient_inputs",
            EvalError::UnpairedRuns(_) => "unpaired_runs",
            EvalError::MalformedEntry(_) => "malformed_entry",
        }
    }
}

/// Duration statistic in minutes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
}

impl Stat {
    pub fn of(mut xs: Vec<f64>) -> Option<Stat> {
        if xs.is_empty() {
            return None;
        }
        xs.sort_by(f64::total_cmp);
        let n = xs.len();
        let median = if n % 2 == 1 { xs[n / 2] } else { (xs[n / 2 - 1] + xs[n / 2]) / 2.0 };
        Some(Stat {
            count: n,
            mean: xs.iter().sum::<f64>() / n as f64,
            median,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoraReport {
    /// Commit to production promotion, per change.
    pub lead_time_min: Option<Stat>,
    pub deployment_frequency_per_day: Option<f64>,
    pub change_failure_rate: Option<f64>,
    /// True onset to resolution.
    pub mttr_min: Option<Stat>,
    pub promotions: usize,
    pub change_failures: usize,
    pub incidents: usize,
}

pub fn dora_metrics(events: &[RunEvent]) -> DoraReport {
    let mut horizon = None;
    let mut committed: HashMap<&str, SimTime> = HashMap::new();
    let mut run_commits: HashMap<&str, &[String]> = HashMap::new();
    let mut promoted: Vec<(&str, SimTime)> = Vec::new();
    let mut reverted: Vec<&str> = Vec::new();
    let mut incidents = Vec::new();
    for e in events {
        match &e.kind {
            EventKind::SimulationStarted { horizon: h, .. } => horizon = Some(*h),
            EventKind::Commit { commit_id, .. } => {
                committed.insert(commit_id, e.timestamp);
            }
            EventKind::RunStarted { run_id, commit_ids } => {
                run_commits.insert(run_id, commit_ids);
            }
            EventKind::Deployment { run_id, change, .. } => match change {
                DeploymentChange::Promoted => promoted.push((run_id, e.timestamp)),
                DeploymentChange::ProdRolledBack => reverted.push(run_id),
                _ => {}
            },
            EventKind::IncidentResolved { incident } => incidents.push(incident),
            _ => {}
        }
    }
    let mut lead = Vec::new();
    for (run, at) in &promoted {
        for c in run_commits.get(run).copied().unwrap_or_default() {
            if let Some(t) = committed.get(c.as_str()) {
                lead.push((*at - *t) as f64);
            }
        }
    }
    let failures = promoted
        .iter()
        .filter(|(run, at)| {
            reverted.contains(run)
                || incidents.iter().any(|i| {
                    i.run_id.as_deref() == Some(*run) && i.onset >= *at && i.onset.minutes() <= at.minutes() + CFR_HORIZON_MIN
                })
        })
        .count();
    let n = promoted.len();
    let days = horizon.map_or(0.0, |h| h.minutes() as f64 / MINUTES_PER_DAY as f64);
    DoraReport {
        lead_time_min: Stat::of(lead),
        deployment_frequency_per_day: (n > 0 && days > 0.0).then(|| n as f64 / days),
        change_failure_rate: (n > 0).then(|| failures as f64 / n as f64),
        mttr_min: Stat::of(incidents.iter().filter_map(|i| i.mttr_minutes()).map(|m| m as f64).collect()),
        promotions: n,
        change_failures: failures,
        incidents: incidents.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AiReport {
    pub decisions: usize,
    pub intervention_accuracy: Option<f64>,
    /// Decisions an operator answered.
    pub human_touched: usize,
    pub human_override_rate: Option<f64>,
    pub protective_proposals: usize,
    pub false_positive_rate: Option<f64>,
    pub true_faults: usize,
    pub false_negative_rate: Option<f64>,
    pub policy_violations_blocked: usize,
    /// Mean minutes a promoted run waited on reviews and approvals.
    pub decision_wait_per_deployment_min: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn decisions(ledger: &[LedgerEntry]) -> Result<Vec<(u64, Payload)>, EvalError> {
    ledger
        .iter()
        .map(|e| e.payload().map(|p| (e.sequence, p)).map_err(|_| EvalError::MalformedEntry(e.sequence)))
        .collect()
}

/// Whether a policy denial stopped an action the agent could otherwise
/// have executed on its own.
fn blocked_autonomy(details: &serde_json::Value) -> bool {
    let tier: Option<TrustTier> = serde_json::from_value(details["trust_tier"].clone()).ok();
    let action: Option<Action> = serde_json::from_value(details["proposed_action"].clone()).ok();
    tier.is_some_and(|t| t >= TrustTier::T2) && action.is_some_and(|a| !a.is_fail_safe())
}

pub fn ai_metrics(ledger: &[LedgerEntry], adjudications: &[Adjudication], events: &[RunEvent]) -> Result<AiReport, EvalError> {
    let by_id: HashMap<&str, &Adjudication> = adjudications.iter().map(|a| (a.decision_id.as_str(), a)).collect();
    let mut records: Vec<DecisionRecord> = Vec::new();
    let mut blocked = 0;
    for (_, p) in decisions(ledger)? {
        match p {
            Payload::Decision(d) => records.push(d),
            Payload::Audit(a) if a.event == AuditKind::PolicyDenial && blocked_autonomy(&a.details) => blocked += 1,
            Payload::Audit(_) => {}
        }
    }
    let mut correct = 0;
    let mut touched = 0;
    let mut overridden = 0;
    for r in &records {
        let adj = by_id.get(r.id.as_str()).ok_or_else(|| EvalError::MissingAdjudication(r.id.clone()))?;
        correct += adj.correct as usize;
        if r.inputs.get("approval").is_some_and(|a| a.get("operator_id").is_some()) {
            touched += 1;
            overridden += (r.human_overridden || adj.resolution == Resolution::Denied) as usize;
        }
    }
    let protective: Vec<&Adjudication> = adjudications.iter().filter(|a| a.proposed_action.is_protective()).collect();
    let fp = protective.iter().filter(|a| a.fault_id.is_none()).count();

    let mut faults: Vec<(&str, SimTime)> = Vec::new();
    let mut waits = Vec::new();
    for e in events {
        match &e.kind {
            EventKind::IncidentOpened { cause, .. } => faults.push((cause, e.timestamp)),
            EventKind::RunFinished {
                outcome: RunOutcome::Promoted,
                decision_wait_min,
                ..
            } => waits.push(*decision_wait_min as f64),
            _ => {}
        }
    }
    let missed = faults
        .iter()
        .filter(|(cause, onset)| {
            !protective.iter().any(|a| {
                a.fault_id.as_deref() == Some(*cause) && a.proposed_at >= *onset && a.proposed_at.minutes() <= onset.minutes() + DETECTION_HORIZON_MIN
            })
        })
        .count();
    Ok(AiReport {
        decisions: records.len(),
        intervention_accuracy: ratio(correct, records.len()),
        human_touched: touched,
        human_override_rate: ratio(overridden, touched),
        protective_proposals: protective.len(),
        false_positive_rate: ratio(fp, protective.len()),
        true_faults: faults.len(),
        false_negative_rate: ratio(missed, faults.len()),
        policy_violations_blocked: blocked,
        decision_wait_per_deployment_min: Stat::of(waits).map(|s| s.mean),
    })
}

// ---- replay ------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageReplay {
    pub decisions: usize,
    pub action_divergence: usize,
    pub verdict_divergence: usize,
    pub hypothetical_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub agent_version: String,
    pub policy_version: String,
    pub decisions_replayed: usize,
    pub divergence_rate: Option<f64>,
    pub verdict_divergence: Option<f64>,
    /// Replayed DENYs of actions the agent could have executed on its own.
    pub hypothetical_violations: usize,
    pub per_stage: BTreeMap<DecisionStage, StageReplay>,
}

/// Reconstructs the agent input and policy context a record was made from.
pub fn replay_inputs(seq: u64, d: &DecisionRecord) -> Result<(AgentInput, EvaluationContext), EvalError> {
    let missing = |what: &str, e: Option<serde_json::Error>| EvalError::InsufficientInputs {
        sequence: seq,
        reason: match e {
            Some(e) => format!("{what}: {e}"),
            None => format!("no {what} snapshot"),
        },
    };
    let obs = d.inputs.get("observation").ok_or_else(|| missing("observation", None))?;
    let ctx = d.inputs.get("context").ok_or_else(|| missing("context", None))?;
    let input: AgentInput = serde_json::from_value(obs.clone()).map_err(|e| missing("observation", Some(e)))?;
    let ctx: EvaluationContext = serde_json::from_value(ctx.clone()).map_err(|e| missing("context", Some(e)))?;
    Ok((input, ctx))
}

/// Re-decides every recorded decision with `agents` and `bundle`. Nothing
/// is executed.
pub fn replay(ledger: &[LedgerEntry], agents: &AgentConfig, bundle: &PolicyBundle) -> Result<ReplayReport, EvalError> {
    let mut per_stage: BTreeMap<DecisionStage, StageReplay> = BTreeMap::new();
    let (mut n, mut div, mut vdiv, mut viol) = (0, 0, 0, 0);
    for (seq, p) in decisions(ledger)? {
        let Payload::Decision(d) = p else { continue };
        let (mut input, ctx) = replay_inputs(seq, &d)?;
        let hard = bundle.thresholds.max_error_delta_pct;
        match &mut input {
            AgentInput::Canary(c) => c.hard_delta_pct = hard,
            AgentInput::Health(h) => h.hard_delta_pct = hard,
            _ => {}
        }
        let trace = d.trace_ids.first().cloned().unwrap_or_default();
        let Some(alt) = propose_or_degrade(&input, agents, &trace) else {
            // the alternate agent stays silent where the original acted
            let s = per_stage.entry(d.stage).or_default();
            s.decisions += 1;
            s.action_divergence += 1;
            s.verdict_divergence += 1;
            n += 1;
            div += 1;
            vdiv += 1;
            continue;
        };
        let o = evaluate_or_escalate(&alt, &ctx, bundle);
        let s = per_stage.entry(d.stage).or_default();
        s.decisions += 1;
        n += 1;
        if alt.action != d.proposed_action {
            s.action_divergence += 1;
            div += 1;
        }
        if o.verdict != d.policy_outcome {
            s.verdict_divergence += 1;
            vdiv += 1;
        }
        if o.verdict == Verdict::Deny && ctx.trust_tier >= TrustTier::T2 && !alt.action.is_fail_safe() {
            s.hypothetical_violations += 1;
            viol += 1;
        }
    }
    Ok(ReplayReport {
        agent_version: agents.version.clone(),
        policy_version: bundle.version.clone(),
        decisions_replayed: n,
        divergence_rate: ratio(div, n),
        verdict_divergence: ratio(vdiv, n),
        hypothetical_violations: viol,
        per_stage,
    })
}

// ---- A/B -----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbRow {
    pub metric: String,
    pub unit: String,
    pub baseline: Option<f64>,
    pub augmented: Option<f64>,
    /// Relative change in percent.
    pub delta_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbReport {
    pub scenario: String,
    pub seed: u64,
    pub rows: Vec<AbRow>,
    /// Baseline minus augmented decision wait per deployment.
    pub time_saved_per_deployment_min: Option<f64>,
}

impl AbReport {
    pub fn row(&self, metric: &str) -> Option<&AbRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }

    pub fn to_markdown(&self) -> String {
        let fmt = |v: Option<f64>, unit: &str| match v {
            None => "n/a".to_string(),
            Some(x) if unit == "%" => format!("{:.1}%", x * 100.0),
            Some(x) if unit == "count" => format!("{x:.0}"),
            Some(x) => format!("{x:.2} {unit}"),
        };
        let mut out = String::from("| Metric | Baseline | AI-Augmented | Delta |\n|---|---|---|---|\n");
        for r in &self.rows {
            let delta = r.delta_pct.map_or("n/a".to_string(), |d| format!("{d:+.1}%"));
            out.push_str(&format!(
                "| {} | {} | {} | {} |\n",
                r.metric,
                fmt(r.baseline, &r.unit),
                fmt(r.augmented, &r.unit),
                delta
            ));
        }
        if let Some(t) = self.time_saved_per_deployment_min {
            out.push_str(&format!("\nTime saved per deployment: {t:.1} min\n"));
        }
        out
    }
}

fn row(metric: &str, unit: &str, b: Option<f64>, a: Option<f64>) -> AbRow {
    let delta_pct = match (b, a) {
        (Some(b), Some(a)) if b == a => Some(0.0),
        (Some(b), Some(a)) if b != 0.0 => Some((a - b) / b * 100.0),
        _ => None,
    };
    AbRow {
        metric: metric.into(),
        unit: unit.into(),
        baseline: b,
        augmented: a,
        delta_pct,
    }
}

pub fn ab_compare(baseline: &RunSummary, augmented: &RunSummary) -> Result<AbReport, EvalError> {
    if baseline.seed != augmented.seed || baseline.scenario != augmented.scenario {
        return Err(EvalError::UnpairedRuns(format!(
            "{}/{} vs {}/{}",
            baseline.scenario, baseline.seed, augmented.scenario, augmented.seed
        )));
    }
    let (b, a) = (&baseline.dora, &augmented.dora);
    let (bi, ai) = (&baseline.ai, &augmented.ai);
    let hours = |s: Option<Stat>| s.map(|s| s.mean / 60.0);
    let rows = vec![
        row("Lead time for changes (mean)", "h", hours(b.lead_time_min), hours(a.lead_time_min)),
        row(
            "Lead time for changes (median)",
            "h",
            b.lead_time_min.map(|s| s.median / 60.0),
            a.lead_time_min.map(|s| s.median / 60.0),
        ),
        row("Deployment frequency", "per day", b.deployment_frequency_per_day, a.deployment_frequency_per_day),
        row("Change failure rate", "%", b.change_failure_rate, a.change_failure_rate),
        row("MTTR", "min", b.mttr_min.map(|s| s.mean), a.mttr_min.map(|s| s.mean)),
        row("Intervention accuracy", "%", bi.intervention_accuracy, ai.intervention_accuracy),
        row("Human override rate", "%", bi.human_override_rate, ai.human_override_rate),
        row("False positive rate", "%", bi.false_positive_rate, ai.false_positive_rate),
        row("False negative rate", "%", bi.false_negative_rate, ai.false_negative_rate),
        row(
            "Policy violations blocked",
            "count",
            Some(bi.policy_violations_blocked as f64),
            Some(ai.policy_violations_blocked as f64),
        ),
        row(
            "Decision wait per deployment",
            "min",
            bi.decision_wait_per_deployment_min,
            ai.decision_wait_per_deployment_min,
        ),
    ];
    let saved = match (bi.decision_wait_per_deployment_min, ai.decision_wait_per_deployment_min) {
        (Some(b), Some(a)) => Some(b - a),
        _ => None,
    };
    Ok(AbReport {
        scenario: baseline.scenario.clone(),
        seed: baseline.seed,
        rows,
        time_saved_per_deployment_min: saved,
    })
}
