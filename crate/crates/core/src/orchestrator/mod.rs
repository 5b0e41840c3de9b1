//! Discrete-event simulation of the pipeline.
//!
//! One tick is one simulated minute. Every tick runs the same fixed sequence
//! (kill-switch events, phase ceiling, commit arrivals, fault activations,
//! approval expiry, human tasks, stage progress, telemetry, agents, deferred
//! trust samples), so a run is a pure function of scenario, seed, arm and
//! bundle. API calls mutate the state between ticks and are stamped with
//! the next tick's time.

mod artifacts;
mod decide;
mod pipeline;
mod world;

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use artifacts::{read_run_dir, write_run_dir, Adjudication, ArtifactError, FaultRecord, RunArtifacts, RunSummary};
pub use decide::{ApprovalState, ApprovalVerdict, ApprovalView};

use crate::agents::{PostmortemReport, TestHistory, AGENT_IDS};
use crate::audit::AuditEvent;
use crate::clock::SimTime;
use crate::decision::DecisionRecord;
use crate::events::{Arm, EventKind, RunEvent};
use crate::ledger::{Ledger, LedgerError, Payload};
use crate::policy::PolicyBundle;
use crate::rng::Seed;
use crate::scenario::{CommitPlan, Scenario, ScenarioError};
use crate::telemetry::TelemetryWindow;
use crate::trust::{TrustManager, TrustTier};

use decide::{Approval, DeferredSample};
use pipeline::Run;
use world::{FaultState, FlagRollout, IncidentState};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Eval(#[from] crate::evaluation::EvalError),
    #[error("internal: {0}")]
    Internal(String),
}

impl SimError {
    pub fn code(&self) -> &'static str {
        match self {
            SimError::Scenario(e) => e.code(),
            SimError::Ledger(_) => "ledger_error",
            SimError::Eval(e) => e.code(),
            SimError::Internal(_) => "internal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ApprovalError {
    #[error("unknown_request: `{0}`")]
    UnknownRequest(String),
    #[error("already_resolved: `{0}`")]
    AlreadyResolved(String),
    #[error("expired: `{0}` passed its deadline")]
    Expired(String),
    #[error("invalid_override: {0}")]
    InvalidOverride(String),
}

impl ApprovalError {
    pub fn code(&self) -> &'static str {
        match self {
            ApprovalError::UnknownRequest(_) => "unknown_request",
            ApprovalError::AlreadyResolved(_) => "already_resolved",
            ApprovalError::Expired(_) => "expired",
            ApprovalError::InvalidOverride(_) => "invalid_override",
        }
    }
}

/// Snapshot for `GET /run`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub scenario: String,
    pub seed: u64,
    pub arm: Arm,
    pub tick: u64,
    pub now: SimTime,
    pub horizon: SimTime,
    pub finished: bool,
    pub runs_started: usize,
    pub runs_promoted: usize,
    pub active_runs: Vec<ActiveRun>,
    pub canary_run: Option<String>,
    pub open_incidents: usize,
    pub pending_approvals: usize,
    pub ledger_entries: usize,
    pub kill_switch_engaged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveRun {
    pub run_id: String,
    pub phase: String,
    pub commit_ids: Vec<String>,
}

/// Snapshot for `GET /tier`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierView {
    pub kill_switch_engaged: bool,
    pub ceiling: TrustTier,
    pub agents: Vec<AgentTier>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTier {
    pub agent_id: String,
    pub tier: TrustTier,
    pub effective_tier: TrustTier,
    pub window_len: usize,
    pub violations_in_window: u32,
}

pub struct Simulation {
    pub(crate) sc: Scenario,
    pub(crate) arm: Arm,
    pub(crate) bundle: PolicyBundle,
    pub(crate) seed: Seed,
    pub(crate) now: SimTime,
    pub(crate) horizon: SimTime,
    pub(crate) plans: Vec<CommitPlan>,
    pub(crate) ledger: Ledger,
    pub(crate) records: Vec<DecisionRecord>,
    pub(crate) events: Vec<RunEvent>,
    pub(crate) adjudications: Vec<Adjudication>,
    pub(crate) postmortems: Vec<PostmortemReport>,
    pub(crate) telemetry_log: Vec<TelemetryWindow>,
    pub(crate) trust: TrustManager,
    pub(crate) ceiling: TrustTier,
    pub(crate) runs: Vec<Run>,
    pub(crate) lane: VecDeque<usize>,
    pub(crate) canary_run: Option<usize>,
    pub(crate) carry: Vec<String>,
    pub(crate) history: TestHistory,
    pub(crate) faults: Vec<FaultState>,
    pub(crate) incidents: Vec<IncidentState>,
    pub(crate) flags: Vec<FlagRollout>,
    pub(crate) prod_windows: VecDeque<TelemetryWindow>,
    pub(crate) approvals: BTreeMap<String, Approval>,
    pub(crate) tasks: BTreeMap<(SimTime, u64), pipeline::Task>,
    pub(crate) deferred: Vec<DeferredSample>,
    pub(crate) health_episode: Option<crate::decision::Action>,
    pub(crate) runbook_episode: bool,
    pub(crate) next_decision: u64,
    pub(crate) next_request: u64,
    pub(crate) task_seq: u64,
    pub(crate) finished: bool,
}

impl Simulation {
    pub fn new(sc: Scenario, arm: Arm, bundle: PolicyBundle) -> Result<Self, SimError> {
        sc.validate()?;
        let faults = sc.fault_schedule()?.into_iter().map(FaultState::new).collect();
        let mut trust = TrustManager::new(sc.trust.criteria.clone(), &AGENT_IDS, sc.trust.initial_tier);
        for (id, st) in trust.agents.iter_mut() {
            st.tier = sc.trust.initial(id);
        }
        let mut sim = Simulation {
            arm,
            seed: Seed(sc.seed),
            now: SimTime::ZERO,
            horizon: sc.horizon(),
            plans: sc.commit_plans(),
            ledger: Ledger::new(),
            records: Vec::new(),
            events: Vec::new(),
            adjudications: Vec::new(),
            postmortems: Vec::new(),
            telemetry_log: Vec::new(),
            trust,
            ceiling: sc.trust.ceiling(SimTime::ZERO),
            runs: Vec::new(),
            lane: VecDeque::new(),
            canary_run: None,
            carry: Vec::new(),
            history: TestHistory::new(sc.suite.suite_id.clone()),
            faults,
            incidents: Vec::new(),
            flags: Vec::new(),
            prod_windows: VecDeque::new(),
            approvals: BTreeMap::new(),
            tasks: BTreeMap::new(),
            deferred: Vec::new(),
            health_episode: None,
            runbook_episode: false,
            next_decision: 0,
            next_request: 0,
            task_seq: 0,
            finished: false,
            bundle,
            sc,
        };
        sim.emit(EventKind::SimulationStarted {
            scenario: sim.sc.name.clone(),
            seed: sim.sc.seed,
            arm,
            horizon: sim.horizon,
            policy_version: sim.bundle.version.clone(),
            agent_version: sim.sc.agents.version.clone(),
        });
        Ok(sim)
    }

    /// Runs to the horizon.
    pub fn run(mut self) -> Result<RunArtifacts, SimError> {
        while !self.finished {
            self.step()?;
        }
        self.artifacts()
    }

    /// Processes the current tick and advances the clock by one minute.
    pub fn step(&mut self) -> Result<(), SimError> {
        if self.finished {
            return Ok(());
        }
        if self.now >= self.horizon {
            return self.finish();
        }
        self.scenario_kill_switch()?;
        self.phase_ceiling()?;
        self.commit_arrivals();
        self.activate_faults()?;
        self.expire_approvals()?;
        self.run_human_tasks()?;
        self.advance_runs()?;
        if self.now.minutes() > 0 {
            self.gen_telemetry();
            if self.arm == Arm::Augmented {
                self.observe()?;
            }
            self.flag_tick()?;
        }
        self.settle_deferred()?;
        self.now = self.now + 1;
        Ok(())
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn arm(&self) -> Arm {
        self.arm
    }

    pub fn scenario(&self) -> &Scenario {
        &self.sc
    }

    pub fn bundle(&self) -> &PolicyBundle {
        &self.bundle
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn events(&self) -> &[RunEvent] {
        &self.events
    }

    pub fn records(&self) -> &[DecisionRecord] {
        &self.records
    }

    pub fn adjudications(&self) -> &[Adjudication] {
        &self.adjudications
    }

    /// Telemetry windows generated so far (only when the scenario exports them).
    pub fn telemetry(&self) -> &[TelemetryWindow] {
        &self.telemetry_log
    }

    pub fn status(&self) -> RunStatus {
        RunStatus {
            scenario: self.sc.name.clone(),
            seed: self.sc.seed,
            arm: self.arm,
            tick: self.now.minutes(),
            now: self.now,
            horizon: self.horizon,
            finished: self.finished,
            runs_started: self.runs.len(),
            runs_promoted: self.runs.iter().filter(|r| r.outcome() == Some(crate::events::RunOutcome::Promoted)).count(),
            active_runs: self
                .runs
                .iter()
                .filter(|r| !r.is_done())
                .map(|r| ActiveRun {
                    run_id: r.id.clone(),
                    phase: r.phase.name().into(),
                    commit_ids: r.commit_ids.clone(),
                })
                .collect(),
            canary_run: self.canary_run.map(|i| self.runs[i].id.clone()),
            open_incidents: self.incidents.iter().filter(|i| i.inc.resolved_at.is_none()).count(),
            pending_approvals: self.approvals.values().filter(|a| a.state == ApprovalState::Pending).count(),
            ledger_entries: self.ledger.len(),
            kill_switch_engaged: self.trust.kill_switch_engaged,
        }
    }

    pub fn tiers(&self) -> TierView {
        TierView {
            kill_switch_engaged: self.trust.kill_switch_engaged,
            ceiling: self.ceiling,
            agents: self
                .trust
                .agents
                .values()
                .map(|s| AgentTier {
                    agent_id: s.agent_id.clone(),
                    tier: s.tier,
                    effective_tier: s.effective_tier(),
                    window_len: s.window.len(),
                    violations_in_window: s.violations_in_window,
                })
                .collect(),
        }
    }

    /// Engages or releases the kill switch. Returns whether the state changed.
    pub fn set_kill_switch(&mut self, engage: bool, operator_id: &str) -> Result<bool, SimError> {
        let Some(ev) = self.trust.kill_switch(engage, operator_id, self.now) else {
            return Ok(false);
        };
        self.audit(ev)?;
        self.emit(EventKind::KillSwitch {
            engaged: engage,
            operator_id: operator_id.to_string(),
        });
        if !engage {
            // every agent restarts at T0; pending T2 samples no longer match
            self.deferred.clear();
        }
        Ok(true)
    }

    fn scenario_kill_switch(&mut self) -> Result<(), SimError> {
        let due: Vec<_> = self
            .sc
            .kill_switch
            .iter()
            .filter(|k| k.at_min == self.now.minutes())
            .map(|k| (k.engage, k.operator_id.clone()))
            .collect();
        for (engage, op) in due {
            self.set_kill_switch(engage, &op)?;
        }
        Ok(())
    }

    fn phase_ceiling(&mut self) -> Result<(), SimError> {
        let c = self.sc.trust.ceiling(self.now);
        if c != self.ceiling {
            self.ceiling = c;
            for id in AGENT_IDS {
                self.evaluate_tier(id)?;
            }
        }
        Ok(())
    }

    pub(crate) fn emit(&mut self, kind: EventKind) {
        self.events.push(RunEvent {
            seq: self.events.len() as u64,
            tick: self.now.minutes(),
            timestamp: self.now,
            kind,
        });
    }

    pub(crate) fn audit(&mut self, ev: AuditEvent) -> Result<u64, SimError> {
        Ok(self.ledger.append(&Payload::Audit(ev))?.sequence)
    }

    fn finish(&mut self) -> Result<(), SimError> {
        for i in 0..self.runs.len() {
            if !self.runs[i].is_done() {
                self.end_run(i, crate::events::RunOutcome::Unfinished);
            }
        }
        for i in 0..self.incidents.len() {
            if self.incidents[i].postmortem.is_none() {
                self.write_postmortem(i)?;
            }
        }
        self.finished = true;
        self.emit(EventKind::SimulationFinished {
            ledger_entries: self.ledger.len() as u64,
        });
        Ok(())
    }

    /// Running DORA and decision-quality snapshot.
    pub fn metrics(&self) -> Result<(crate::evaluation::DoraReport, crate::evaluation::AiReport), SimError> {
        let dora = crate::evaluation::dora_metrics(&self.events);
        let ai = crate::evaluation::ai_metrics(self.ledger.entries(), &self.adjudications, &self.events)?;
        Ok((dora, ai))
    }

    /// Everything a finished (or in-flight) run exports.
    pub fn artifacts(&self) -> Result<RunArtifacts, SimError> {
        Ok(RunArtifacts::collect(self)?)
    }
}
