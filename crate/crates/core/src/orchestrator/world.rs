//! Ground truth of the simulated service: faults, incidents, production
//! promotions, flag rollouts and the per-tick telemetry they produce.

use std::collections::VecDeque;

use serde_json::json;

use super::decide::{Effect, Target};
use super::{SimError, Simulation};
use crate::agents::{IncidentInput, IncidentPhase};
use crate::audit::{AuditEvent, AuditKind};
use crate::clock::SimTime;
use crate::decision::{Action, DecisionStage};
use crate::events::{DeploymentChange, EventKind, Handler, Incident};
use crate::telemetry::{gen_window, FaultAnchor, FaultEffects, FaultKind, FaultSpec, FaultTarget, Population, TelemetryWindow};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum FaultStatus {
    /// Waiting for its change to reach the anchoring stage.
    Dormant,
    Scheduled(SimTime),
    Active,
    Resolved,
}

/// Where an active fault shows up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Loc {
    Infra,
    Canary(usize),
    Prod(usize),
    Flag(usize),
}

#[derive(Debug, Clone)]
pub(crate) struct FaultState {
    pub spec: FaultSpec,
    pub status: FaultStatus,
    pub loc: Option<Loc>,
    pub run: Option<usize>,
    pub onset: Option<SimTime>,
    pub resolved_at: Option<SimTime>,
    pub resolution: Option<String>,
    pub incident: Option<usize>,
}

impl FaultState {
    pub fn new(spec: FaultSpec) -> Self {
        FaultState {
            spec,
            status: FaultStatus::Dormant,
            loc: None,
            run: None,
            onset: None,
            resolved_at: None,
            resolution: None,
            incident: None,
        }
    }

    pub fn is_active(&self) -> bool {
        self.status == FaultStatus::Active
    }
}

#[derive(Debug, Clone)]
pub(crate) struct IncidentState {
    pub inc: Incident,
    pub fault: usize,
    pub postmortem: Option<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct FlagRollout {
    pub run: usize,
    pub flag_id: String,
    pub ramp: f64,
    pub started: SimTime,
    pub next_eval: SimTime,
    pub awaiting: bool,
    pub done: bool,
    /// (prod, segment) window pairs, most recent last.
    pub windows: VecDeque<(TelemetryWindow, TelemetryWindow)>,
}

/// A population telemetry is generated for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pop {
    Prod,
    Canary(usize),
    Flag(usize),
}

impl Simulation {
    pub(crate) fn fault_index(&self, fault_id: &str) -> Option<usize> {
        self.faults.iter().position(|f| f.spec.fault_id == fault_id)
    }

    fn flag_scoped(&self, f: &FaultSpec, run: usize) -> bool {
        f.kind == FaultKind::ErrorSpike && f.flag_attributable && self.runs[run].flag_id.is_some()
    }

    /// Called when `run` enters canary.
    pub(crate) fn arm_canary_faults(&mut self, run: usize) {
        let start = self.now;
        for i in 0..self.faults.len() {
            let f = &self.faults[i];
            if f.status != FaultStatus::Dormant
                || f.spec.anchor() != FaultAnchor::CanaryStart
                || !self.runs[run].epochs.contains(&f.spec.epoch)
            {
                continue;
            }
            let scoped = self.flag_scoped(&f.spec, run);
            let offset = f.spec.onset_offset_min;
            let f = &mut self.faults[i];
            f.run = Some(run);
            if !scoped {
                f.status = FaultStatus::Scheduled(start + offset);
                f.loc = Some(Loc::Canary(run));
            }
        }
    }

    /// Called when `run` is promoted.
    pub(crate) fn arm_prod_faults(&mut self, run: usize) {
        let at = self.now;
        for i in 0..self.faults.len() {
            let anchor = self.faults[i].spec.anchor();
            let mine = self.faults[i].run == Some(run) || self.runs[run].epochs.contains(&self.faults[i].spec.epoch);
            if !mine || matches!(anchor, FaultAnchor::EpochStart | FaultAnchor::TestRun) {
                continue;
            }
            let scoped = self.flag_scoped(&self.faults[i].spec, run);
            let f = &mut self.faults[i];
            match f.status {
                FaultStatus::Active if f.loc == Some(Loc::Canary(run)) => f.loc = Some(Loc::Prod(run)),
                FaultStatus::Dormant if !scoped && anchor == FaultAnchor::Promotion => {
                    f.run = Some(run);
                    f.status = FaultStatus::Scheduled(at + f.spec.onset_offset_min);
                    f.loc = Some(Loc::Prod(run));
                }
                _ => {}
            }
        }
    }

    /// Called when the flag of `run` starts rolling out.
    pub(crate) fn arm_flag_faults(&mut self, run: usize) {
        let at = self.now;
        for i in 0..self.faults.len() {
            let f = &self.faults[i];
            if f.status != FaultStatus::Dormant
                || !self.runs[run].epochs.contains(&f.spec.epoch)
                || !self.flag_scoped(&f.spec, run)
            {
                continue;
            }
            let f = &mut self.faults[i];
            f.run = Some(run);
            f.status = FaultStatus::Scheduled(at + f.spec.onset_offset_min);
            f.loc = Some(Loc::Flag(run));
        }
    }

    /// Faults whose change never reached the population they were waiting for.
    pub(crate) fn disarm_faults(&mut self, pred: impl Fn(Loc) -> bool) {
        for f in &mut self.faults {
            if matches!(f.status, FaultStatus::Scheduled(_)) && f.loc.is_some_and(&pred) {
                f.status = FaultStatus::Resolved;
                f.resolution = Some("never_manifested".into());
            }
        }
    }

    /// Activates due faults and expires infrastructure faults.
    pub(crate) fn activate_faults(&mut self) -> Result<(), SimError> {
        for i in 0..self.faults.len() {
            let f = &self.faults[i];
            if f.status == FaultStatus::Dormant && f.spec.anchor() == FaultAnchor::EpochStart {
                if let Some(plan) = self.plans.get(f.spec.epoch as usize) {
                    let at = plan.at + f.spec.onset_offset_min;
                    let f = &mut self.faults[i];
                    f.status = FaultStatus::Scheduled(at);
                    f.loc = Some(Loc::Infra);
                }
            }
            let f = &self.faults[i];
            match f.status {
                FaultStatus::Scheduled(at) if at <= self.now => {
                    let live = match f.loc {
                        Some(Loc::Canary(r)) => self.canary_run == Some(r),
                        Some(Loc::Prod(r)) => self.runs[r].promoted_at.is_some() && !self.runs[r].reverted,
                        Some(Loc::Flag(r)) => self.flags.iter().any(|fl| fl.run == r && !fl.done && fl.ramp > 0.0),
                        Some(Loc::Infra) => true,
                        None => false,
                    };
                    if live {
                        self.start_fault(i)?;
                    } else {
                        let f = &mut self.faults[i];
                        f.status = FaultStatus::Resolved;
                        f.resolution = Some("never_manifested".into());
                    }
                }
                FaultStatus::Active if f.loc == Some(Loc::Infra) && f.onset.is_some_and(|o| o + f.spec.duration <= self.now) => {
                    self.resolve_fault(i, "expired".into(), None)?;
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn start_fault(&mut self, i: usize) -> Result<(), SimError> {
        let now = self.now;
        let f = &mut self.faults[i];
        f.status = FaultStatus::Active;
        f.onset = Some(now);
        let run_id = f.run.map(|r| self.runs[r].id.clone());
        let fault_id = f.spec.fault_id.clone();
        let impacting = f.spec.kind.is_service_impacting();
        self.emit(EventKind::FaultOnset {
            fault_id: fault_id.clone(),
            run_id: run_id.clone(),
        });
        if impacting {
            let idx = self.incidents.len();
            let incident_id = format!("inc-{:03}", idx + 1);
            self.incidents.push(IncidentState {
                inc: Incident {
                    incident_id: incident_id.clone(),
                    cause: fault_id.clone(),
                    run_id: run_id.clone(),
                    onset: now,
                    detected_at: None,
                    resolved_at: None,
                    resolving_action: None,
                    decision_ids: Vec::new(),
                },
                fault: i,
                postmortem: None,
            });
            self.faults[i].incident = Some(idx);
            self.emit(EventKind::IncidentOpened {
                incident_id,
                cause: fault_id,
                run_id,
            });
            let h = &self.sc.human;
            let detect = now + h.detection_min;
            let fix = detect + h.action_min;
            self.schedule(detect, super::pipeline::Task::IncidentDetect { incident: idx });
            self.schedule(fix, super::pipeline::Task::IncidentFix { incident: idx });
        }
        Ok(())
    }

    /// Ends an active fault; `decision` is the resolving decision, if any.
    pub(crate) fn resolve_fault(&mut self, i: usize, resolution: String, decision: Option<&str>) -> Result<(), SimError> {
        let f = &mut self.faults[i];
        if f.status != FaultStatus::Active {
            return Ok(());
        }
        f.status = FaultStatus::Resolved;
        f.resolved_at = Some(self.now);
        f.resolution = Some(resolution.clone());
        if let Some(idx) = f.incident {
            self.resolve_incident(idx, decision.map(str::to_string).unwrap_or(resolution))?;
        }
        Ok(())
    }

    pub(crate) fn mark_detected(&mut self, idx: usize) {
        if self.incidents[idx].inc.detected_at.is_none() {
            self.incidents[idx].inc.detected_at = Some(self.now);
            let incident_id = self.incidents[idx].inc.incident_id.clone();
            self.emit(EventKind::IncidentDetected { incident_id });
        }
    }

    fn resolve_incident(&mut self, idx: usize, resolving: String) -> Result<(), SimError> {
        if self.incidents[idx].inc.resolved_at.is_some() {
            return Ok(());
        }
        self.mark_detected(idx);
        let inc = &mut self.incidents[idx].inc;
        inc.resolved_at = Some(self.now);
        inc.resolving_action = Some(resolving);
        let incident = inc.clone();
        self.emit(EventKind::IncidentResolved { incident });
        self.write_postmortem(idx)?;
        if self.arm == crate::events::Arm::Augmented {
            self.propose_postmortem(idx)?;
        }
        Ok(())
    }

    pub(crate) fn write_postmortem(&mut self, idx: usize) -> Result<(), SimError> {
        let incidents: Vec<Incident> = self.incidents.iter().map(|s| s.inc.clone()).collect();
        let id = self.incidents[idx].inc.incident_id.clone();
        let report = crate::agents::postmortem_build(
            &incidents,
            &self.records,
            &self.history,
            self.bundle.thresholds.max_error_delta_pct,
            &id,
            self.sc.agents.repeat_offender_runs,
        )
        .map_err(|e| SimError::Internal(e.to_string()))?;
        let mut ev = AuditEvent::new(AuditKind::Postmortem, self.now, id.clone());
        ev.rationale = format!("postmortem for {id} ({})", report.cause);
        ev.details = json!({
            "decision_ids": report.decision_ids,
            "mttr_minutes": report.mttr_minutes,
            "remediations": report.remediations,
        });
        self.audit(ev)?;
        self.incidents[idx].postmortem = Some(self.postmortems.len());
        self.postmortems.push(report);
        self.emit(EventKind::Postmortem { incident_id: id });
        Ok(())
    }

    fn propose_postmortem(&mut self, idx: usize) -> Result<(), SimError> {
        let Some(window) = crate::telemetry::merge_windows(self.prod_windows.make_contiguous()) else {
            return Ok(());
        };
        let input = crate::agents::AgentInput::Incident(IncidentInput {
            incident_id: self.incidents[idx].inc.incident_id.clone(),
            phase: IncidentPhase::Resolved,
            window,
            slo: self.sc.slo,
        });
        let ctx = crate::policy::EvaluationContext::new(crate::policy::Environment::Prod, crate::trust::TrustTier::T0);
        self.decide(input, ctx, Target::Incident { incident: Some(idx) }, 0.0, Vec::new(), "prod")?;
        Ok(())
    }

    // ---- effects ------------------------------------------------------

    pub(crate) fn scale_out(&mut self, decision: Option<&str>, handler: Handler) -> Result<(), SimError> {
        self.emit(EventKind::Deployment {
            run_id: "prod".into(),
            change: DeploymentChange::Scaled,
            ramp_pct: 100.0,
            handler,
            decision_id: decision.map(str::to_string),
        });
        self.resolve_infra(FaultKind::ResourceSaturation, decision)
    }

    pub(crate) fn run_runbook(&mut self, decision: Option<&str>, handler: Handler) -> Result<(), SimError> {
        self.emit(EventKind::Deployment {
            run_id: "prod".into(),
            change: DeploymentChange::RunbookExecuted,
            ramp_pct: 100.0,
            handler,
            decision_id: decision.map(str::to_string),
        });
        self.resolve_infra(FaultKind::LatencySpike, decision)
    }

    fn resolve_infra(&mut self, kind: FaultKind, decision: Option<&str>) -> Result<(), SimError> {
        let how = if decision.is_some() { "mitigated" } else { "manual" };
        for i in 0..self.faults.len() {
            let f = &self.faults[i];
            if f.is_active() && f.loc == Some(Loc::Infra) && f.spec.kind == kind {
                self.resolve_fault(i, how.into(), decision)?;
            }
        }
        Ok(())
    }

    /// Reverts a promoted change in production.
    pub(crate) fn prod_revert(&mut self, run: usize, decision: Option<&str>, handler: Handler) -> Result<(), SimError> {
        if self.runs[run].promoted_at.is_none() || self.runs[run].reverted {
            return Ok(());
        }
        self.runs[run].reverted = true;
        self.emit(EventKind::Deployment {
            run_id: self.runs[run].id.clone(),
            change: DeploymentChange::ProdRolledBack,
            ramp_pct: 0.0,
            handler,
            decision_id: decision.map(str::to_string),
        });
        for fl in &mut self.flags {
            if fl.run == run {
                fl.done = true;
                fl.ramp = 0.0;
            }
        }
        let how = if decision.is_some() { "rolled_back" } else { "manual" };
        for i in 0..self.faults.len() {
            let f = &self.faults[i];
            if f.is_active() && matches!(f.loc, Some(Loc::Prod(r)) | Some(Loc::Flag(r)) if r == run) {
                self.resolve_fault(i, how.into(), decision)?;
            }
        }
        self.disarm_faults(|l| matches!(l, Loc::Prod(r) | Loc::Flag(r) if r == run));
        Ok(())
    }

    /// Sets the ramp of the rollout for `run`; 0 disables the flag.
    pub(crate) fn set_flag_ramp(&mut self, run: usize, ramp: f64, decision: Option<&str>, handler: Handler) -> Result<(), SimError> {
        let Some(k) = self.flags.iter().position(|f| f.run == run && !f.done) else {
            return Ok(());
        };
        let ramp = ramp.clamp(0.0, 100.0);
        self.flags[k].ramp = ramp;
        let disabled = ramp <= 0.0;
        if disabled || ramp >= 100.0 {
            self.flags[k].done = true;
        }
        self.emit(EventKind::Deployment {
            run_id: self.runs[run].id.clone(),
            change: if disabled { DeploymentChange::FlagDisabled } else { DeploymentChange::FlagRamp },
            ramp_pct: ramp,
            handler,
            decision_id: decision.map(str::to_string),
        });
        if disabled {
            let how = if decision.is_some() { "flag_disabled" } else { "manual" };
            for i in 0..self.faults.len() {
                let f = &self.faults[i];
                if f.is_active() && f.loc == Some(Loc::Flag(run)) {
                    self.resolve_fault(i, how.into(), decision)?;
                }
            }
            self.disarm_faults(|l| l == Loc::Flag(run));
        }
        Ok(())
    }

    pub(crate) fn start_flag_rollout(&mut self, run: usize) -> Result<(), SimError> {
        let Some(flag_id) = self.runs[run].flag_id.clone() else {
            return Ok(());
        };
        if self.runs[run].flag_dark {
            // tuned off during canary: its flag-scoped faults never ship
            for f in &mut self.faults {
                if f.status == FaultStatus::Dormant && f.run == Some(run) {
                    f.status = FaultStatus::Resolved;
                    f.resolution = Some("never_manifested".into());
                }
            }
            return Ok(());
        }
        let ramp = self.sc.stages.flag_initial_ramp_pct;
        self.flags.push(FlagRollout {
            run,
            flag_id,
            ramp,
            started: self.now,
            next_eval: self.now + self.sc.stages.flag_eval_every_min,
            awaiting: false,
            done: false,
            windows: VecDeque::new(),
        });
        self.emit(EventKind::Deployment {
            run_id: self.runs[run].id.clone(),
            change: DeploymentChange::FlagRamp,
            ramp_pct: ramp,
            handler: Handler::Pipeline,
            decision_id: None,
        });
        self.arm_flag_faults(run);
        Ok(())
    }

    // ---- telemetry ----------------------------------------------------

    fn effects(&self, pop: Pop) -> FaultEffects {
        let mut e = FaultEffects::default();
        for f in self.faults.iter().filter(|f| f.is_active()) {
            match (f.loc, pop) {
                (Some(Loc::Infra), Pop::Prod) => e.add(&f.spec),
                (Some(Loc::Infra), _) if f.spec.kind != FaultKind::NoisyAlerts => e.add(&f.spec),
                (Some(Loc::Canary(r)), Pop::Canary(c)) if r == c => e.add(&f.spec),
                (Some(Loc::Prod(_)), Pop::Prod) => e.add(&f.spec),
                (Some(Loc::Flag(r)), Pop::Flag(c)) if r == c => e.add(&f.spec),
                (Some(Loc::Flag(r)), Pop::Prod) => {
                    let ramp = self.flags.iter().find(|fl| fl.run == r && !fl.done).map_or(0.0, |fl| fl.ramp);
                    let mut scaled = f.spec.clone();
                    scaled.magnitude *= ramp / 100.0;
                    e.add(&scaled);
                }
                _ => {}
            }
        }
        e
    }

    /// Generates the windows for `[now - 1, now)`.
    pub(crate) fn gen_telemetry(&mut self) {
        let start = SimTime(self.now.minutes() - 1);
        let t = start.minutes();
        let canary = self.canary_run.and_then(|r| self.runs[r].canary().filter(|c| c.started <= start).map(|c| (r, c.ramp)));
        let canary_ramp = canary.map_or(0.0, |(_, ramp)| ramp);
        let prod_share = 100.0 - canary_ramp;
        let profile = &self.sc.service;
        let mut rng = self.seed.stream("telemetry", &[0, t]);
        let prod = gen_window(profile, "prod", Population::Baseline, start, 1, prod_share, &self.effects(Pop::Prod), &mut rng);
        let keep = self.sc.stages.observation_ticks as usize;

        if let Some((r, ramp)) = canary {
            let mut rng = self.seed.stream("telemetry", &[1, t]);
            let id = self.runs[r].id.clone();
            let w = gen_window(profile, &id, Population::Canary, start, 1, ramp, &self.effects(Pop::Canary(r)), &mut rng);
            if self.sc.export_telemetry {
                self.telemetry_log.push(w.clone());
            }
            if let Some(c) = self.runs[r].canary_mut() {
                c.windows.push_back((prod.clone(), w));
                while c.windows.len() > keep {
                    c.windows.pop_front();
                }
            }
        }
        for k in 0..self.flags.len() {
            let fl = &self.flags[k];
            if fl.done || fl.ramp <= 0.0 || fl.started > start {
                continue;
            }
            let r = fl.run;
            let share = fl.ramp * prod_share / 100.0;
            let mut rng = self.seed.stream("telemetry", &[2, self.runs[r].epoch, t]);
            let id = fl.flag_id.clone();
            let w = gen_window(profile, &id, Population::Canary, start, 1, share, &self.effects(Pop::Flag(r)), &mut rng);
            if self.sc.export_telemetry {
                self.telemetry_log.push(w.clone());
            }
            let fl = &mut self.flags[k];
            fl.windows.push_back((prod.clone(), w));
            while fl.windows.len() > keep {
                fl.windows.pop_front();
            }
        }
        if self.sc.export_telemetry {
            self.telemetry_log.push(prod.clone());
        }
        self.prod_windows.push_back(prod);
        while self.prod_windows.len() > keep {
            self.prod_windows.pop_front();
        }
    }

    // ---- ground truth -------------------------------------------------

    fn active_faults(&self, pred: impl Fn(&FaultState) -> bool) -> Vec<usize> {
        (0..self.faults.len()).filter(|&i| self.faults[i].is_active() && pred(&self.faults[i])).collect()
    }

    /// Correct actions for a decision about `target`, and the true fault
    /// (if any) the decision is about.
    pub(crate) fn oracle(&self, target: &Target, stage: DecisionStage) -> (Vec<Action>, Option<String>) {
        use Action::*;
        let id = |i: usize| Some(self.faults[i].spec.fault_id.clone());
        match target {
            Target::Triage { run, test_id, attempt } => {
                let rev = self.runs[*run].epoch;
                let suite = |kind: FaultKind| {
                    self.faults.iter().position(|f| {
                        f.spec.target == FaultTarget::Suite
                            && f.spec.kind == kind
                            && f.spec.tests.contains(test_id)
                            && rev >= f.spec.epoch
                            && rev < f.spec.epoch + f.spec.duration
                    })
                };
                if let Some(i) = suite(FaultKind::RegressionInCommit) {
                    return (vec![Fail], id(i));
                }
                let fault = suite(FaultKind::FlakyBurst).and_then(id);
                if *attempt < self.bundle.thresholds.retry_cap_preprod {
                    (vec![Retry, Quarantine], fault)
                } else {
                    (vec![Quarantine, Fail], fault)
                }
            }
            Target::Security { run } => {
                let d = crate::agents::security_propose(&crate::agents::SecurityInput {
                    findings: self.runs[*run].findings.clone(),
                });
                let fault = self.runs[*run]
                    .findings
                    .iter()
                    .find(|f| f.severity >= crate::agents::Severity::High)
                    .map(|f| f.cve_id.clone());
                (vec![d.action], fault)
            }
            Target::Canary { run } => {
                let r = *run;
                if self.runs[r].cve_disclosed {
                    return (vec![Rollback, Pause], self.runs[r].late_cve.clone());
                }
                if let Some(&i) = self.active_faults(|f| f.loc == Some(Loc::Canary(r))).first() {
                    return (vec![Rollback], id(i));
                }
                let infra = self.active_faults(|f| f.loc == Some(Loc::Infra) && f.spec.kind.is_service_impacting());
                if let Some(&i) = infra.first() {
                    return (vec![Pause, Promote], id(i));
                }
                (vec![Promote], None)
            }
            Target::Health { run } => {
                let mut set = Vec::new();
                let mut fault = None;
                if let Some(r) = *run {
                    if let Some(&i) = self.active_faults(|f| matches!(f.loc, Some(Loc::Prod(x)) | Some(Loc::Flag(x)) if x == r)).first() {
                        set.push(Rollback);
                        fault = id(i);
                    }
                }
                let sat = self.active_faults(|f| f.loc == Some(Loc::Infra) && f.spec.kind == FaultKind::ResourceSaturation);
                if let Some(&i) = sat.first() {
                    set.push(AutoScale);
                    fault = fault.or_else(|| id(i));
                }
                (set, fault)
            }
            Target::Flag { run } => {
                let r = *run;
                match self.active_faults(|f| f.loc == Some(Loc::Flag(r))).first() {
                    Some(&i) => (vec![Disable, RampDown], id(i)),
                    None => (vec![RampUp], None),
                }
            }
            Target::Incident { incident } => {
                if stage == DecisionStage::IncidentResponse {
                    if let Some(idx) = incident {
                        if self.incidents[*idx].inc.resolved_at.is_some() {
                            return (vec![OpenPostmortem], Some(self.incidents[*idx].inc.cause.clone()));
                        }
                    }
                }
                let lat = self.active_faults(|f| f.loc == Some(Loc::Infra) && f.spec.kind == FaultKind::LatencySpike);
                match lat.first() {
                    Some(&i) => (vec![RunRunbook], id(i)),
                    None => (vec![], None),
                }
            }
        }
    }

    /// The incident (if open) caused by `fault_id`.
    pub(crate) fn open_incident_of(&self, fault_id: &str) -> Option<usize> {
        let f = self.fault_index(fault_id)?;
        let idx = self.faults[f].incident?;
        self.incidents[idx].inc.resolved_at.is_none().then_some(idx)
    }

    /// Open incident caused by a latency fault, if any.
    fn latency_incident(&self) -> Option<usize> {
        self.active_faults(|f| f.loc == Some(Loc::Infra) && f.spec.kind == FaultKind::LatencySpike)
            .into_iter()
            .find_map(|i| self.faults[i].incident)
    }

    /// Whether an incident attributed to `run` started in `(from, to]`.
    pub(crate) fn incident_from_run(&self, run: usize, from: SimTime, to: SimTime) -> bool {
        let id = &self.runs[run].id;
        self.incidents
            .iter()
            .any(|s| s.inc.run_id.as_deref() == Some(id.as_str()) && s.inc.onset > from && s.inc.onset <= to)
    }

    // ---- human safety net ---------------------------------------------

    pub(crate) fn human_fix_incident(&mut self, idx: usize) -> Result<(), SimError> {
        if self.incidents[idx].inc.resolved_at.is_some() {
            return Ok(());
        }
        let fi = self.incidents[idx].fault;
        let (loc, kind) = (self.faults[fi].loc, self.faults[fi].spec.kind);
        let incident_id = self.incidents[idx].inc.incident_id.clone();
        let (action, stage, run) = match (loc, kind) {
            (Some(Loc::Canary(r)), _) => (Action::Rollback, DecisionStage::CanaryAnalysis, Some(r)),
            (Some(Loc::Prod(r)), _) => (Action::Rollback, DecisionStage::DeploymentHealth, Some(r)),
            (Some(Loc::Flag(r)), _) => (Action::Disable, DecisionStage::FeatureFlags, Some(r)),
            (_, FaultKind::ResourceSaturation) => (Action::AutoScale, DecisionStage::DeploymentHealth, None),
            _ => (Action::RunRunbook, DecisionStage::IncidentResponse, None),
        };
        self.human_action(run, action, stage, &format!("on-call response to {incident_id}"))?;
        match (action, run) {
            (Action::Rollback, Some(r)) if loc == Some(Loc::Canary(r)) => {
                self.apply(&Target::Canary { run: r }, Effect::act(Action::Rollback, Handler::Human, None))?
            }
            (Action::Rollback, Some(r)) => self.prod_revert(r, None, Handler::Human)?,
            (Action::Disable, Some(r)) => self.set_flag_ramp(r, 0.0, None, Handler::Human)?,
            (Action::AutoScale, _) => self.scale_out(None, Handler::Human)?,
            _ => self.run_runbook(None, Handler::Human)?,
        }
        // a fault the action could not reach still ends here
        self.resolve_fault(fi, "manual".into(), None)
    }

    /// Logs a human action as an event and a ledger audit entry.
    pub(crate) fn human_action(&mut self, run: Option<usize>, action: Action, stage: DecisionStage, reason: &str) -> Result<(), SimError> {
        let run_id = run.map(|r| self.runs[r].id.clone());
        let mut ev = AuditEvent::new(AuditKind::ManualAction, self.now, run_id.clone().unwrap_or_else(|| "prod".into()));
        ev.operator_id = Some("oncall".into());
        ev.rationale = reason.to_string();
        ev.details = json!({ "action": action, "stage": stage, "arm": self.arm });
        self.audit(ev)?;
        self.emit(EventKind::HumanAction {
            run_id,
            action,
            stage,
            reason: reason.to_string(),
        });
        Ok(())
    }

    // ---- production-side agents ----------------------------------------

    /// Most recent live promotion still inside the production rollback window.
    fn rollback_candidate(&self) -> Option<usize> {
        let window = self.sc.stages.prod_rollback_window_min;
        (0..self.runs.len())
            .filter(|&r| {
                let run = &self.runs[r];
                !run.reverted && run.promoted_at.is_some_and(|p| self.now.saturating_sub(p) <= window)
            })
            .max_by_key(|&r| self.runs[r].promoted_at)
    }

    pub(crate) fn observe_health(&mut self) -> Result<(), SimError> {
        let Some(window) = self.prod_windows.back().cloned() else {
            return Ok(());
        };
        let candidate = self.rollback_candidate();
        let input = crate::agents::AgentInput::Health(crate::agents::HealthInput {
            nominal_error_rate_pct: self.sc.service.error_rate_pct,
            hard_delta_pct: self.bundle.thresholds.max_error_delta_pct,
            promoted_run: candidate.map(|r| self.runs[r].id.clone()),
            window: window.clone(),
        });
        let Some(p) = crate::agents::propose_or_degrade(&input, &self.sc.agents, "peek") else {
            self.health_episode = None;
            return Ok(());
        };
        if self.health_episode == Some(p.action) {
            return Ok(());
        }
        self.health_episode = Some(p.action);
        let mut ctx = crate::policy::EvaluationContext::new(crate::policy::Environment::Prod, crate::trust::TrustTier::T0);
        ctx.error_rate_delta_pp = Some(window.error_rate - self.sc.service.error_rate_pct);
        ctx.p95_latency_ms = Some(window.p95_ms);
        ctx.saturation_pct = Some(window.saturation);
        ctx.noisy_alerts = window.alerts.iter().any(|a| a.noisy);
        let ramp = if p.action == Action::Rollback { 100.0 } else { 0.0 };
        ctx.current_ramp_pct = ramp;
        self.decide(input, ctx, Target::Health { run: candidate }, ramp, vec![window.window_id], "prod")?;
        Ok(())
    }

    pub(crate) fn observe_incidents(&mut self) -> Result<(), SimError> {
        if self.prod_windows.len() < self.sc.stages.observation_ticks as usize {
            return Ok(());
        }
        let Some(window) = crate::telemetry::merge_windows(self.prod_windows.make_contiguous()) else {
            return Ok(());
        };
        if window.p95_ms <= self.sc.slo.p95_slo_ms {
            self.runbook_episode = false;
            return Ok(());
        }
        if self.runbook_episode {
            return Ok(());
        }
        self.runbook_episode = true;
        let incident = self.latency_incident();
        let incident_id = incident.map_or_else(|| format!("alert-{}", self.now.minutes()), |i| self.incidents[i].inc.incident_id.clone());
        let traces = self.prod_windows.iter().map(|w| w.window_id.clone()).collect();
        let mut ctx = crate::policy::EvaluationContext::new(crate::policy::Environment::Prod, crate::trust::TrustTier::T0);
        ctx.p95_latency_ms = Some(window.p95_ms);
        ctx.saturation_pct = Some(window.saturation);
        let input = crate::agents::AgentInput::Incident(IncidentInput {
            incident_id,
            phase: IncidentPhase::Open,
            window,
            slo: self.sc.slo,
        });
        self.decide(input, ctx, Target::Incident { incident }, 0.0, traces, "prod")?;
        Ok(())
    }

    /// Flag rollouts: the agent in the augmented arm, the human schedule
    /// otherwise (and whenever the agent only recommends).
    pub(crate) fn flag_tick(&mut self) -> Result<(), SimError> {
        let step = self.sc.agents.flag_step_pct;
        let every = self.sc.stages.flag_eval_every_min;
        for k in 0..self.flags.len() {
            let fl = &self.flags[k];
            if fl.done || fl.awaiting || fl.next_eval > self.now {
                continue;
            }
            let run = fl.run;
            self.flags[k].next_eval = self.now + every;
            let agent_tier = self.trust.state(crate::agents::FEATURE_FLAG).map_or(crate::trust::TrustTier::T0, |s| s.effective_tier());
            let mut recommended = false;
            if self.arm == crate::events::Arm::Augmented {
                let fl = &self.flags[k];
                if fl.windows.len() < self.sc.stages.observation_ticks as usize {
                    continue;
                }
                let prod: Vec<_> = fl.windows.iter().map(|(p, _)| p.clone()).collect();
                let seg: Vec<_> = fl.windows.iter().map(|(_, s)| s.clone()).collect();
                let (Some(baseline), Some(segment)) = (crate::telemetry::merge_windows(&prod), crate::telemetry::merge_windows(&seg)) else {
                    continue;
                };
                let traces = vec![baseline.window_id.clone(), segment.window_id.clone()];
                let mut ctx = crate::policy::EvaluationContext::new(crate::policy::Environment::Prod, crate::trust::TrustTier::T0);
                ctx.error_rate_delta_pp = Some(segment.error_rate - baseline.error_rate);
                ctx.p95_latency_ms = Some(segment.p95_ms);
                ctx.current_ramp_pct = fl.ramp;
                let input = crate::agents::AgentInput::Flag(crate::agents::FlagInput {
                    flag_id: fl.flag_id.clone(),
                    baseline,
                    segment,
                    slo: self.sc.slo,
                    current_ramp_pct: fl.ramp,
                });
                let Some(p) = crate::agents::propose_or_degrade(&input, &self.sc.agents, "peek") else {
                    continue;
                };
                let target_ramp = crate::agents::flag_target(p.action, fl.ramp, step);
                self.decide(input, ctx, Target::Flag { run }, target_ramp, traces, &self.runs[run].id.clone())?;
                recommended = agent_tier == crate::trust::TrustTier::T0;
            }
            if self.arm == crate::events::Arm::Baseline || recommended {
                let Some(fl) = self.flags.iter().find(|f| f.run == run && !f.done) else {
                    continue;
                };
                let ramp = (fl.ramp + step).min(100.0);
                self.set_flag_ramp(run, ramp, None, Handler::Human)?;
            }
        }
        self.flags.retain(|f| !f.done || f.awaiting);
        Ok(())
    }
}
