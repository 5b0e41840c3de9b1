//! Shared decision vocabulary: stages, actions, proposals, policy outcomes
//! and the canonical decision record.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::clock::SimTime;

/// The six decision points of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionStage {
    TestFailures,
    SecurityGate,
    CanaryAnalysis,
    DeploymentHealth,
    FeatureFlags,
    IncidentResponse,
}

impl DecisionStage {
    pub const ALL: [DecisionStage; 6] = [
        DecisionStage::TestFailures,
        DecisionStage::SecurityGate,
        DecisionStage::CanaryAnalysis,
        DecisionStage::DeploymentHealth,
        DecisionStage::FeatureFlags,
        DecisionStage::IncidentResponse,
    ];

    /// The action catalog: actions an agent may propose at this stage.
    pub fn allowed_actions(self) -> &'static [Action] {
        use Action::*;
        match self {
            DecisionStage::TestFailures => &[Retry, Quarantine, Fail],
            DecisionStage::SecurityGate => &[Block, Allow, AutoPr],
            DecisionStage::CanaryAnalysis => &[Promote, Pause, Rollback, TuneFlags],
            DecisionStage::DeploymentHealth => &[AutoScale, Rollback],
            DecisionStage::FeatureFlags => &[RampUp, RampDown, Disable],
            DecisionStage::IncidentResponse => &[RunRunbook, Rollback, OpenPostmortem],
        }
    }

    pub fn allows(self, action: Action) -> bool {
        self.allowed_actions().contains(&action)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DecisionStage::TestFailures => "test_failures",
            DecisionStage::SecurityGate => "security_gate",
            DecisionStage::CanaryAnalysis => "canary_analysis",
            DecisionStage::DeploymentHealth => "deployment_health",
            DecisionStage::FeatureFlags => "feature_flags",
            DecisionStage::IncidentResponse => "incident_response",
        }
    }
}

impl fmt::Display for DecisionStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DecisionStage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DecisionStage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

/// Every action identifier known to the catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Retry,
    Quarantine,
    Fail,
    Block,
    Allow,
    AutoPr,
    Promote,
    Pause,
    Rollback,
    TuneFlags,
    AutoScale,
    RampUp,
    RampDown,
    Disable,
    RunRunbook,
    OpenPostmortem,
}

impl Action {
    pub const ALL: [Action; 16] = [
        Action::Retry,
        Action::Quarantine,
        Action::Fail,
        Action::Block,
        Action::Allow,
        Action::AutoPr,
        Action::Promote,
        Action::Pause,
        Action::Rollback,
        Action::TuneFlags,
        Action::AutoScale,
        Action::RampUp,
        Action::RampDown,
        Action::Disable,
        Action::RunRunbook,
        Action::OpenPostmortem,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Retry => "retry",
            Action::Quarantine => "quarantine",
            Action::Fail => "fail",
            Action::Block => "block",
            Action::Allow => "allow",
            Action::AutoPr => "auto_pr",
            Action::Promote => "promote",
            Action::Pause => "pause",
            Action::Rollback => "rollback",
            Action::TuneFlags => "tune_flags",
            Action::AutoScale => "auto_scale",
            Action::RampUp => "ramp_up",
            Action::RampDown => "ramp_down",
            Action::Disable => "disable",
            Action::RunRunbook => "run_runbook",
            Action::OpenPostmortem => "open_postmortem",
        }
    }

    /// Fail-safe actions: proposing one of these is never an attempt to
    /// escape a guardrail, even when a hard rule denies it.
    pub fn is_fail_safe(self) -> bool {
        matches!(
            self,
            Action::Fail | Action::Block | Action::Rollback | Action::RampDown | Action::Disable
        )
    }

    /// Protective actions count towards false-positive / false-negative
    /// accounting.
    pub fn is_protective(self) -> bool {
        matches!(
            self,
            Action::Rollback
                | Action::Block
                | Action::Pause
                | Action::TuneFlags
                | Action::AutoScale
                | Action::RampDown
                | Action::Disable
                | Action::RunRunbook
        )
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Action {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Action::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown action `{s}`"))
    }
}

/// What an agent wants to do, before any policy has looked at it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentProposal {
    pub stage: DecisionStage,
    pub action: Action,
    pub confidence: f64,
    pub evidence: Vec<String>,
    pub rationale: String,
    pub trace_id: String,
    pub agent_id: String,
    pub agent_version: String,
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("unknown_action_for_stage: `{action}` is not in the `{stage}` catalog")]
    UnknownActionForStage { stage: DecisionStage, action: Action },
    #[error("confidence_out_of_range: {0} is outside [0, 1]")]
    ConfidenceOutOfRange(String),
    #[error("missing_trace_id")]
    MissingTraceId,
}

impl ValidationError {
    pub fn code(&self) -> &'static str {
        match self {
            ValidationError::UnknownActionForStage { .. } => "unknown_action_for_stage",
            ValidationError::ConfidenceOutOfRange(_) => "confidence_out_of_range",
            ValidationError::MissingTraceId => "missing_trace_id",
        }
    }
}

pub fn validate_proposal(p: &AgentProposal) -> Result<(), ValidationError> {
    if !p.stage.allows(p.action) {
        return Err(ValidationError::UnknownActionForStage {
            stage: p.stage,
            action: p.action,
        });
    }
    if !(0.0..=1.0).contains(&p.confidence) {
        return Err(ValidationError::ConfidenceOutOfRange(p.confidence.to_string()));
    }
    if p.trace_id.trim().is_empty() {
        return Err(ValidationError::MissingTraceId);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Allow,
    RequireApproval,
    Deny,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Allow => "ALLOW",
            Verdict::RequireApproval => "REQUIRE_APPROVAL",
            Verdict::Deny => "DENY",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Verdict {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ALLOW" => Ok(Verdict::Allow),
            "REQUIRE_APPROVAL" => Ok(Verdict::RequireApproval),
            "DENY" => Ok(Verdict::Deny),
            _ => Err(format!("unknown verdict `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    Hard,
    Soft,
    Confidence,
}

/// Observed-versus-threshold pair captured while a rule was evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub field: String,
    pub observed: serde_json::Value,
    pub threshold: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggeredRule {
    pub rule_id: String,
    pub kind: RuleKind,
    pub matched: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub observations: Vec<Observation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyOutcome {
    pub verdict: Verdict,
    pub triggered_rules: Vec<TriggeredRule>,
    pub policy_version: String,
    /// Safe action a hard rule substitutes for the denied proposal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forced_action: Option<Action>,
}

impl PolicyOutcome {
    pub fn matched(&self) -> impl Iterator<Item = &TriggeredRule> {
        self.triggered_rules.iter().filter(|r| r.matched)
    }

    pub fn matched_rule_ids(&self) -> Vec<String> {
        self.matched().map(|r| r.rule_id.clone()).collect()
    }

    pub fn warnings(&self) -> Vec<String> {
        self.matched()
            .filter(|r| r.kind == RuleKind::Soft)
            .map(|r| r.rule_id.clone())
            .collect()
    }

    /// Checks the verdict/trace consistency invariant.
    pub fn is_consistent(&self) -> bool {
        match self.verdict {
            Verdict::Allow => self.matched().all(|r| r.kind == RuleKind::Soft),
            Verdict::RequireApproval | Verdict::Deny => self.matched().any(|r| r.kind != RuleKind::Soft),
        }
    }
}

/// How a proposal was finally resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "resolution", content = "action")]
pub enum Resolution {
    /// Executed autonomously after an ALLOW.
    Auto,
    /// A human approved the proposal as-is.
    Approved,
    /// Denied, by policy or by a human.
    Denied,
    /// A human replaced the proposal with another action.
    Overridden(Action),
    /// Recorded as a recommendation only; nothing executed.
    RecommendOnly,
    /// Approval window lapsed; the stage fallback (if any) executed.
    Expired(Option<Action>),
}

/// `final_action` is an action identifier or the literal `none`.
pub mod final_action_serde {
    use super::*;

    pub fn serialize<S: Serializer>(a: &Option<Action>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(a.map(Action::as_str).unwrap_or("none"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Action>, D::Error> {
        let s = String::deserialize(d)?;
        if s == "none" {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(serde::de::Error::custom)
        }
    }
}

/// The immutable audit unit of one agent decision.
///
/// Field order is the canonical serialization order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionRecord {
    pub id: String,
    pub timestamp: SimTime,
    pub stage: DecisionStage,
    pub agent_version: String,
    pub model: String,
    pub inputs: serde_json::Value,
    pub policy_version: String,
    pub proposed_action: Action,
    pub confidence: f64,
    pub policy_outcome: Verdict,
    #[serde(with = "final_action_serde")]
    pub final_action: Option<Action>,
    pub human_overridden: bool,
    pub rationale: String,
    pub trace_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FinalizeError {
    #[error("inconsistent_resolution: {resolution} cannot follow a {verdict} verdict")]
    InconsistentResolution { verdict: Verdict, resolution: String },
    #[error("invalid proposal: {0}")]
    InvalidProposal(#[from] ValidationError),
    #[error("override action `{action}` is not in the `{stage}` catalog")]
    OverrideOutsideCatalog { stage: DecisionStage, action: Action },
}

/// Everything besides the proposal and verdict that a record carries.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordMeta {
    pub id: String,
    pub timestamp: SimTime,
    pub inputs: serde_json::Value,
    pub extra_trace_ids: Vec<String>,
    /// Appended to the proposal rationale (e.g. an approval-timeout note).
    pub note: Option<String>,
}

pub fn finalize_record(
    p: &AgentProposal,
    o: &PolicyOutcome,
    resolution: Resolution,
    meta: RecordMeta,
) -> Result<DecisionRecord, FinalizeError> {
    validate_proposal(p)?;
    let inconsistent = || FinalizeError::InconsistentResolution {
        verdict: o.verdict,
        resolution: format!("{resolution:?}"),
    };
    let (final_action, human_overridden) = match resolution {
        Resolution::Auto => {
            if o.verdict != Verdict::Allow {
                return Err(inconsistent());
            }
            (Some(p.action), false)
        }
        Resolution::Approved => {
            if o.verdict == Verdict::Deny {
                return Err(inconsistent());
            }
            (Some(p.action), false)
        }
        Resolution::Denied => match o.verdict {
            Verdict::Deny => (o.forced_action.filter(|a| *a != p.action), false),
            _ => (None, false),
        },
        Resolution::Overridden(action) => {
            if o.verdict == Verdict::Deny {
                return Err(inconsistent());
            }
            if !p.stage.allows(action) {
                return Err(FinalizeError::OverrideOutsideCatalog { stage: p.stage, action });
            }
            (Some(action), true)
        }
        Resolution::RecommendOnly => (None, false),
        Resolution::Expired(fallback) => {
            if o.verdict == Verdict::Deny {
                return Err(inconsistent());
            }
            (fallback, false)
        }
    };
    let mut trace_ids = vec![p.trace_id.clone()];
    for t in meta.extra_trace_ids {
        if !trace_ids.contains(&t) {
            trace_ids.push(t);
        }
    }
    let rationale = match meta.note {
        Some(note) => format!("{note}; {}", p.rationale),
        None => p.rationale.clone(),
    };
    Ok(DecisionRecord {
        id: meta.id,
        timestamp: meta.timestamp,
        stage: p.stage,
        agent_version: p.agent_version.clone(),
        model: p.model_id.clone(),
        inputs: meta.inputs,
        policy_version: o.policy_version.clone(),
        proposed_action: p.action,
        confidence: p.confidence,
        policy_outcome: o.verdict,
        final_action,
        human_overridden,
        rationale,
        trace_ids,
    })
}

impl DecisionRecord {
    /// Deterministic byte encoding: fixed key order, compact JSON.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("decision records always serialize")
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }

    /// The authority the record was resolved under, from the `inputs`
    /// snapshot (`recommend_only`, `needs_approval`, `autonomous`, `blocked`).
    pub fn authority(&self) -> Option<&str> {
        self.inputs.get("authority").and_then(|v| v.as_str())
    }

    /// Whether the record was written for a recommend-only (T0 or
    /// kill-switched) decision.
    pub fn is_recommendation(&self) -> bool {
        self.authority() == Some("recommend_only")
    }

    /// Record-level invariants.
    pub fn check_invariants(&self) -> Result<(), String> {
        if !self.stage.allows(self.proposed_action) {
            return Err(format!("{} not allowed at {}", self.proposed_action, self.stage));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err("confidence out of range".into());
        }
        if let Some(a) = self.final_action {
            if !self.stage.allows(a) {
                return Err(format!("final action {a} not allowed at {}", self.stage));
            }
        }
        match self.authority() {
            Some("autonomous") => {
                if self.policy_outcome != Verdict::Allow || self.human_overridden {
                    return Err("autonomous execution without an ALLOW".into());
                }
                if self.final_action != Some(self.proposed_action) {
                    return Err("autonomous ALLOW must execute the proposed action".into());
                }
            }
            Some("recommend_only") if self.final_action.is_some() || self.human_overridden => {
                return Err("a recommendation executed an action".into());
            }
            _ => {}
        }
        if !self.human_overridden
            && self.policy_outcome == Verdict::Deny
            && self.final_action == Some(self.proposed_action)
        {
            return Err("DENY executed the proposed action".into());
        }
        if self.trace_ids.is_empty() {
            return Err("no trace ids".into());
        }
        Ok(())
    }
}
