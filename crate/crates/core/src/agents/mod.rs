//! Deterministic reference agents behind one proposal interface.
//!
//! Each agent is a pure function of an [`AgentInput`] and an
//! [`AgentConfig`]. The orchestrator stores the input in the decision
//! record, so replay can rebuild any proposal from the ledger alone.

mod flags;
mod observability;
mod postmortem;
mod security;
mod triage;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use flags::{flag_propose, flag_target, FlagInput};
pub use observability::{
    canary_risk, compute_kpi_deltas, decide_canary, decide_canary_deltas, health_propose, CanaryInput, HealthInput, KpiDeltas, Slo,
};
pub use postmortem::{
    incident_propose, postmortem_build, IncidentInput, IncidentPhase, PostmortemReport, Remediation, TimelineEntry,
};
pub use security::{security_propose, Finding, SecurityInput, Severity};
pub use triage::{flakiness_of, flakiness_probability, triage_propose, TestHistory, TestOutcome, TriageInput};

use crate::decision::{validate_proposal, Action, AgentProposal, DecisionStage};

pub const TRIAGE: &str = "triage";
pub const SECURITY: &str = "security";
pub const OBSERVABILITY: &str = "observability";
pub const FEATURE_FLAG: &str = "feature_flag";
pub const POSTMORTEM: &str = "postmortem";

pub const AGENT_IDS: [&str; 5] = [TRIAGE, SECURITY, OBSERVABILITY, FEATURE_FLAG, POSTMORTEM];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("unknown_test: no recorded runs for `{0}`")]
    UnknownTest(String),
    #[error("empty_window: `{0}` has no requests")]
    EmptyWindow(String),
    #[error("misaligned_windows: {0} and {1} cover different intervals")]
    MisalignedWindows(String, String),
    #[error("unknown_incident: `{0}`")]
    UnknownIncident(String),
}

impl AgentError {
    pub fn code(&self) -> &'static str {
        match self {
            AgentError::UnknownTest(_) => "unknown_test",
            AgentError::EmptyWindow(_) => "empty_window",
            AgentError::MisalignedWindows(..) => "misaligned_windows",
            AgentError::UnknownIncident(_) => "unknown_incident",
        }
    }
}

/// Agent constants. A different `version` with different values is what
/// replay calls an alternate agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub version: String,
    pub quarantine_flakiness: f64,
    pub retry_flakiness: f64,
    pub risk_weight_error: f64,
    pub risk_weight_latency: f64,
    pub band_low: f64,
    pub band_high: f64,
    pub flag_step_pct: f64,
    pub saturation_pct: f64,
    pub alert_count: usize,
    pub repeat_offender_runs: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            version: "1.0.0".into(),
            quarantine_flakiness: 0.8,
            retry_flakiness: 0.5,
            risk_weight_error: 0.6,
            risk_weight_latency: 0.4,
            band_low: 0.3,
            band_high: 0.6,
            flag_step_pct: 10.0,
            saturation_pct: 85.0,
            alert_count: 3,
            repeat_offender_runs: 3,
        }
    }
}

impl AgentConfig {
    /// `0.5 + 2 * distance to the nearest band boundary`, clamped.
    pub fn band_confidence(&self, risk: f64) -> f64 {
        let d = (risk - self.band_low).abs().min((risk - self.band_high).abs());
        (0.5 + 2.0 * d).clamp(0.5, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentIdentity {
    pub agent_id: String,
    pub agent_version: String,
    pub model_id: String,
}

/// Everything one proposal is computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "agent_input", rename_all = "snake_case")]
pub enum AgentInput {
    Triage(TriageInput),
    Security(SecurityInput),
    Canary(CanaryInput),
    Health(HealthInput),
    Flag(FlagInput),
    Incident(IncidentInput),
}

impl AgentInput {
    pub fn agent_id(&self) -> &'static str {
        match self {
            AgentInput::Triage(_) => TRIAGE,
            AgentInput::Security(_) => SECURITY,
            AgentInput::Canary(_) | AgentInput::Health(_) => OBSERVABILITY,
            AgentInput::Flag(_) => FEATURE_FLAG,
            AgentInput::Incident(_) => POSTMORTEM,
        }
    }

    pub fn stage(&self) -> DecisionStage {
        match self {
            AgentInput::Triage(_) => DecisionStage::TestFailures,
            AgentInput::Security(_) => DecisionStage::SecurityGate,
            AgentInput::Canary(_) => DecisionStage::CanaryAnalysis,
            AgentInput::Health(_) => DecisionStage::DeploymentHealth,
            AgentInput::Flag(_) => DecisionStage::FeatureFlags,
            AgentInput::Incident(_) => DecisionStage::IncidentResponse,
        }
    }
}

pub fn identity(agent_id: &str, cfg: &AgentConfig) -> AgentIdentity {
    AgentIdentity {
        agent_id: agent_id.to_string(),
        agent_version: cfg.version.clone(),
        model_id: format!("heuristic-{agent_id}-1"),
    }
}

/// What an agent decided, before it becomes a full proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct Draft {
    pub action: Action,
    pub confidence: f64,
    pub evidence: Vec<String>,
    pub rationale: String,
}

impl Draft {
    fn into_proposal(self, stage: DecisionStage, id: AgentIdentity, trace_id: &str) -> AgentProposal {
        AgentProposal {
            stage,
            action: self.action,
            confidence: self.confidence,
            evidence: self.evidence,
            rationale: self.rationale,
            trace_id: trace_id.to_string(),
            agent_id: id.agent_id,
            agent_version: id.agent_version,
            model_id: id.model_id,
        }
    }
}

/// Runs the agent that owns `input`. `Ok(None)` means the agent sees
/// nothing to act on. Every returned proposal validates.
pub fn propose(input: &AgentInput, cfg: &AgentConfig, trace_id: &str) -> Result<Option<AgentProposal>, AgentError> {
    let draft = match input {
        AgentInput::Triage(t) => Some(triage_propose(t, cfg)?),
        AgentInput::Security(s) => Some(security_propose(s)),
        AgentInput::Canary(c) => Some(decide_canary(c, cfg)),
        AgentInput::Health(h) => health_propose(h, cfg),
        AgentInput::Flag(f) => Some(flag_propose(f, cfg)),
        AgentInput::Incident(i) => incident_propose(i),
    };
    Ok(draft.map(|d| {
        let p = d.into_proposal(input.stage(), identity(input.agent_id(), cfg), trace_id);
        debug_assert!(validate_proposal(&p).is_ok(), "{p:?}");
        p
    }))
}

/// [`propose`], except that an agent failure becomes a zero-confidence
/// proposal of the stage's first catalog action, which the confidence floor
/// turns into a human approval.
pub fn propose_or_degrade(input: &AgentInput, cfg: &AgentConfig, trace_id: &str) -> Option<AgentProposal> {
    match propose(input, cfg, trace_id) {
        Ok(p) => p,
        Err(e) => {
            let stage = input.stage();
            let draft = Draft {
                action: stage.allowed_actions()[0],
                confidence: 0.0,
                evidence: vec![e.code().to_string()],
                rationale: format!("agent failed, human approval required: {e}"),
            };
            Some(draft.into_proposal(stage, identity(input.agent_id(), cfg), trace_id))
        }
    }
}

pub(crate) fn fmt_pct(x: f64) -> String {
    format!("{}{:.1}%", if x >= 0.0 { "+" } else { "" }, x)
}
