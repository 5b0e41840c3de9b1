//! Structured audit events written to the ledger next to decision records.

use serde::{Deserialize, Serialize};

use crate::clock::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditKind {
    PolicyDenial,
    PolicyEscalation,
    ApprovalRequested,
    ApprovalTimeout,
    KillSwitch,
    TierChange,
    ManualAction,
    Postmortem,
    BundleSwap,
}

impl AuditKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AuditKind::PolicyDenial => "policy_denial",
            AuditKind::PolicyEscalation => "policy_escalation",
            AuditKind::ApprovalRequested => "approval_requested",
            AuditKind::ApprovalTimeout => "approval_timeout",
            AuditKind::KillSwitch => "kill_switch",
            AuditKind::TierChange => "tier_change",
            AuditKind::ManualAction => "manual_action",
            AuditKind::Postmortem => "postmortem",
            AuditKind::BundleSwap => "bundle_swap",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditEvent {
    pub event: AuditKind,
    pub timestamp: SimTime,
    /// Decision, approval request, agent or incident the event is about.
    pub subject: String,
    #[serde(default)]
    pub trace_id: Option<String>,
    #[serde(default)]
    pub rule_ids: Vec<String>,
    #[serde(default)]
    pub evidence: Vec<String>,
    #[serde(default)]
    pub rationale: String,
    #[serde(default)]
    pub operator_id: Option<String>,
    #[serde(default)]
    pub details: serde_json::Value,
}

impl AuditEvent {
    pub fn new(event: AuditKind, timestamp: SimTime, subject: impl Into<String>) -> Self {
        AuditEvent {
            event,
            timestamp,
            subject: subject.into(),
            trace_id: None,
            rule_ids: Vec::new(),
            evidence: Vec::new(),
            rationale: String::new(),
            operator_id: None,
            details: serde_json::Value::Null,
        }
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("audit events always serialize")
    }
}
