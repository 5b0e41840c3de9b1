//! Run events: the discrete-event log a simulation run exports, and the
//! records DORA metrics are computed from.

use serde::{Deserialize, Serialize};

use crate::clock::SimTime;
use crate::decision::{Action, DecisionStage, Verdict};
use crate::trust::{Authority, TrustTier};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Baseline,
    Augmented,
}

impl Arm {
    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Baseline => "baseline",
            Arm::Augmented => "augmented",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageName {
    Build,
    Tests,
    Security,
    Canary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageOutcome {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeploymentChange {
    CanaryStarted,
    Ramp,
    Promoted,
    /// Canary traffic removed after a rollback decision.
    RolledBack,
    /// Canary torn down because a gate denied promotion.
    Aborted,
    /// A promoted change reverted in production.
    ProdRolledBack,
    FlagRamp,
    FlagDisabled,
    Scaled,
    RunbookExecuted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Handler {
    /// An agent decision carried the action.
    Agent,
    /// A human acted without an agent proposal.
    Human,
    /// The stage's approval-timeout fallback.
    Fallback,
    /// A scheduled pipeline step (e.g. the canary ramp step).
    Pipeline,
}

/// Terminal state of one pipeline run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunOutcome {
    Promoted,
    /// Canary rolled back.
    RolledBack,
    /// Canary torn down after a denied promotion.
    Aborted,
    TestsFailed,
    SecurityBlocked,
    /// Still in flight at the horizon.
    Unfinished,
}

/// A production-impacting fault from onset to resolution. Times are the
/// true onset (not detection).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incident {
    pub incident_id: String,
    /// Fault id, or `unknown`.
    pub cause: String,
    pub run_id: Option<String>,
    pub onset: SimTime,
    pub detected_at: Option<SimTime>,
    pub resolved_at: Option<SimTime>,
    /// Decision id, `manual`, or `expired` for faults that ended on their own.
    pub resolving_action: Option<String>,
    pub decision_ids: Vec<String>,
}

impl Incident {
    pub fn mttr_minutes(&self) -> Option<u64> {
        self.resolved_at.map(|r| r.saturating_sub(self.onset))
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        if let Some(d) = self.detected_at {
            if d < self.onset {
                return Err("detected before onset".into());
            }
            if self.resolved_at.is_some_and(|r| r < d) {
                return Err("resolved before detection".into());
            }
        }
        if self.resolved_at.is_some_and(|r| r < self.onset) {
            return Err("resolved before onset".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    SimulationStarted {
        scenario: String,
        seed: u64,
        arm: Arm,
        horizon: SimTime,
        policy_version: String,
        agent_version: String,
    },
    SimulationFinished {
        ledger_entries: u64,
    },
    Commit {
        commit_id: String,
        epoch: u64,
    },
    RunStarted {
        run_id: String,
        commit_ids: Vec<String>,
    },
    RunFinished {
        run_id: String,
        outcome: RunOutcome,
        /// Minutes the run spent waiting on human reviews and approvals.
        decision_wait_min: u64,
    },
    StageFinished {
        run_id: String,
        stage: StageName,
        started: SimTime,
        outcome: StageOutcome,
        decision_ids: Vec<String>,
    },
    Decision {
        decision_id: String,
        ledger_sequence: u64,
        agent_id: String,
        stage: DecisionStage,
        proposed_action: Action,
        verdict: Verdict,
        authority: Authority,
        tier: TrustTier,
        final_action: Option<Action>,
    },
    ApprovalRequested {
        request_id: String,
        decision_id: String,
        deadline: SimTime,
    },
    ApprovalResolved {
        request_id: String,
        decision_id: String,
        resolution: String,
        operator_id: Option<String>,
    },
    Deployment {
        run_id: String,
        change: DeploymentChange,
        ramp_pct: f64,
        handler: Handler,
        decision_id: Option<String>,
    },
    HumanAction {
        run_id: Option<String>,
        action: Action,
        stage: DecisionStage,
        reason: String,
    },
    FaultOnset {
        fault_id: String,
        run_id: Option<String>,
    },
    /// Opened at the true fault onset (the event timestamp).
    IncidentOpened {
        incident_id: String,
        cause: String,
        run_id: Option<String>,
    },
    IncidentDetected {
        incident_id: String,
    },
    IncidentResolved {
        incident: Incident,
    },
    TierChange {
        agent_id: String,
        from: TrustTier,
        to: TrustTier,
        reason: String,
    },
    KillSwitch {
        engaged: bool,
        operator_id: String,
    },
    Postmortem {
        incident_id: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEvent {
    pub seq: u64,
    pub tick: u64,
    pub timestamp: SimTime,
    #[serde(flatten)]
    pub kind: EventKind,
}
