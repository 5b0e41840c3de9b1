//! Pipeline runs: build, tests and triage, security gate, the single canary
//! lane, and the human tasks that stand in for the baseline process.

use std::collections::VecDeque;

use super::decide::{Effect, Target};
use super::world::Loc;
use super::{SimError, Simulation};
use crate::agents::{AgentInput, CanaryInput, Finding, SecurityInput, TestOutcome, TriageInput};
use crate::clock::SimTime;
use crate::decision::{Action, DecisionStage};
use crate::events::{Arm, DeploymentChange, EventKind, Handler, RunOutcome, StageName, StageOutcome};
use crate::policy::{EvaluationContext, Environment};
use crate::telemetry::{gen_test_run, FaultTarget, SuiteFault, TelemetryWindow};
use crate::trust::TrustTier;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct TriageItem {
    pub test_id: String,
    pub action: Option<Action>,
    pub pending: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct CanaryState {
    pub started: SimTime,
    pub ramp: f64,
    pub next_step: SimTime,
    pub soak_end: SimTime,
    pub paused: bool,
    pub awaiting: bool,
    pub last_action: Option<Action>,
    /// (prod, canary) window pairs, most recent last.
    pub windows: VecDeque<(TelemetryWindow, TelemetryWindow)>,
}

#[derive(Debug, Clone)]
pub(crate) enum Phase {
    Building { until: SimTime },
    Testing { attempt: u32, tests: Vec<String>, until: SimTime },
    Triage { attempt: u32, items: Vec<TriageItem>, since: SimTime },
    Scanning { until: SimTime },
    SecurityReview { since: SimTime },
    Queued,
    Canary(CanaryState),
    Done(RunOutcome),
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::Building { .. } => "building",
            Phase::Testing { .. } => "testing",
            Phase::Triage { .. } => "triage",
            Phase::Scanning { .. } => "scanning",
            Phase::SecurityReview { .. } => "security_review",
            Phase::Queued => "queued",
            Phase::Canary(_) => "canary",
            Phase::Done(_) => "done",
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Run {
    pub id: String,
    pub epoch: u64,
    pub epochs: Vec<u64>,
    pub commit_ids: Vec<String>,
    pub flag_id: Option<String>,
    pub flag_dark: bool,
    pub findings: Vec<Finding>,
    pub coverage_changed: bool,
    pub late_cve: Option<String>,
    pub cve_disclosed: bool,
    pub phase: Phase,
    pub stage_started: SimTime,
    pub stage_decisions: Vec<String>,
    pub wait_min: u64,
    pub awaiting: bool,
    pub promoted_at: Option<SimTime>,
    pub reverted: bool,
}

impl Run {
    pub fn is_done(&self) -> bool {
        matches!(self.phase, Phase::Done(_))
    }

    pub fn outcome(&self) -> Option<RunOutcome> {
        match self.phase {
            Phase::Done(o) => Some(o),
            _ => None,
        }
    }

    pub fn canary(&self) -> Option<&CanaryState> {
        match &self.phase {
            Phase::Canary(c) => Some(c),
            _ => None,
        }
    }

    pub fn canary_mut(&mut self) -> Option<&mut CanaryState> {
        match &mut self.phase {
            Phase::Canary(c) => Some(c),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Task {
    TriageReview { run: usize },
    SecurityReview { run: usize },
    PromotionGate { run: usize },
    ApprovalAnswer { request_id: String },
    IncidentDetect { incident: usize },
    IncidentFix { incident: usize },
}

impl Simulation {
    pub(crate) fn schedule(&mut self, at: SimTime, task: Task) {
        self.task_seq += 1;
        self.tasks.insert((at, self.task_seq), task);
    }

    pub(crate) fn commit_arrivals(&mut self) {
        let due: Vec<_> = self.plans.iter().filter(|p| p.at == self.now).cloned().collect();
        for plan in due {
            self.emit(EventKind::Commit {
                commit_id: plan.commit_id.clone(),
                epoch: plan.epoch,
            });
            let mut carried = std::mem::take(&mut self.carry);
            carried.push(plan.commit_id.clone());
            let epochs = carried.iter().filter_map(|c| c.strip_prefix("c-")?.parse().ok()).collect();
            let id = format!("run-{:04}", plan.epoch);
            self.emit(EventKind::RunStarted {
                run_id: id.clone(),
                commit_ids: carried.clone(),
            });
            self.runs.push(Run {
                id,
                epoch: plan.epoch,
                epochs,
                commit_ids: carried,
                flag_id: plan.flag_id,
                flag_dark: false,
                findings: plan.findings,
                coverage_changed: plan.coverage_changed,
                late_cve: plan.late_cve,
                cve_disclosed: false,
                phase: Phase::Building {
                    until: self.now + self.sc.stages.build_min,
                },
                stage_started: self.now,
                stage_decisions: Vec::new(),
                wait_min: 0,
                awaiting: false,
                promoted_at: None,
                reverted: false,
            });
        }
    }

    pub(crate) fn run_human_tasks(&mut self) -> Result<(), SimError> {
        while let Some(entry) = self.tasks.first_entry() {
            if entry.key().0 > self.now {
                break;
            }
            match entry.remove() {
                Task::TriageReview { run } => self.human_triage(run)?,
                Task::SecurityReview { run } => self.human_security(run)?,
                Task::PromotionGate { run } => self.human_gate(run)?,
                Task::ApprovalAnswer { request_id } => self.auto_answer(&request_id)?,
                Task::IncidentDetect { incident } => {
                    if self.incidents[incident].inc.resolved_at.is_none() {
                        self.mark_detected(incident);
                    }
                }
                Task::IncidentFix { incident } => self.human_fix_incident(incident)?,
            }
        }
        Ok(())
    }

    fn finish_stage(&mut self, run: usize, stage: StageName, outcome: StageOutcome) {
        let r = &mut self.runs[run];
        let decision_ids = std::mem::take(&mut r.stage_decisions);
        let started = std::mem::replace(&mut r.stage_started, self.now);
        let run_id = r.id.clone();
        self.emit(EventKind::StageFinished {
            run_id,
            stage,
            started,
            outcome,
            decision_ids,
        });
    }

    pub(crate) fn end_run(&mut self, run: usize, outcome: RunOutcome) {
        let r = &mut self.runs[run];
        r.phase = Phase::Done(outcome);
        let (run_id, wait) = (r.id.clone(), r.wait_min);
        if matches!(outcome, RunOutcome::TestsFailed | RunOutcome::SecurityBlocked | RunOutcome::RolledBack | RunOutcome::Aborted) {
            // fix-forward: the next run ships these commits again
            let mut ids = r.commit_ids.clone();
            ids.append(&mut self.carry);
            self.carry = ids;
        }
        if self.canary_run == Some(run) {
            self.canary_run = None;
        }
        self.lane.retain(|&i| i != run);
        self.emit(EventKind::RunFinished {
            run_id,
            outcome,
            decision_wait_min: wait,
        });
    }

    pub(crate) fn advance_runs(&mut self) -> Result<(), SimError> {
        for i in 0..self.runs.len() {
            self.advance_run(i)?;
        }
        if self.canary_run.is_none() {
            if let Some(next) = self.lane.pop_front() {
                self.start_canary(next)?;
            }
        }
        Ok(())
    }

    fn advance_run(&mut self, i: usize) -> Result<(), SimError> {
        let now = self.now;
        match &self.runs[i].phase {
            Phase::Building { until } if *until <= now => {
                self.finish_stage(i, StageName::Build, StageOutcome::Pass);
                self.start_tests(i, 0);
            }
            Phase::Testing { until, .. } if *until <= now => self.run_tests(i)?,
            Phase::Scanning { until } if *until <= now => {
                if self.runs[i].findings.is_empty() {
                    self.finish_stage(i, StageName::Security, StageOutcome::Pass);
                    self.enqueue(i);
                } else {
                    self.runs[i].phase = Phase::SecurityReview { since: now };
                    self.schedule(now + self.sc.human.approval_min, Task::SecurityReview { run: i });
                    if self.arm == Arm::Augmented {
                        self.propose_security(i)?;
                    }
                }
            }
            Phase::Canary(_) => self.advance_canary(i)?,
            _ => {}
        }
        Ok(())
    }

    fn start_tests(&mut self, i: usize, attempt: u32) {
        let tests: Vec<String> = self
            .sc
            .suite
            .test_ids()
            .into_iter()
            .filter(|t| !self.history.quarantined.contains(t))
            .collect();
        let wait = if attempt == 0 { self.sc.stages.tests_min } else { self.sc.stages.retry_min };
        self.runs[i].phase = Phase::Testing {
            attempt,
            tests,
            until: self.now + wait,
        };
    }

    fn run_tests(&mut self, i: usize) -> Result<(), SimError> {
        let Phase::Testing { attempt, tests, .. } = self.runs[i].phase.clone() else {
            return Ok(());
        };
        let rev = self.runs[i].epoch;
        let specs: Vec<_> = self.faults.iter().filter(|f| f.spec.target == FaultTarget::Suite).map(|f| f.spec.clone()).collect();
        let suite_faults: Vec<SuiteFault<'_>> = specs
            .iter()
            .map(|spec| SuiteFault {
                spec,
                from_revision: spec.epoch,
            })
            .collect();
        let mut rng = self.seed.stream("tests", &[rev, attempt as u64]);
        let results = gen_test_run(&self.sc.suite, &tests, rev, &suite_faults, &mut rng);
        let run_id = self.runs[i].id.clone();
        let mut failing = Vec::new();
        for (t, passed) in results {
            self.history.record(
                &t,
                TestOutcome {
                    run_id: run_id.clone(),
                    revision: rev,
                    passed,
                },
            );
            if !passed {
                failing.push(t);
            }
        }
        // suite faults surface when a run first hits them
        for f in &mut self.faults {
            if f.spec.target == FaultTarget::Suite
                && f.onset.is_none()
                && rev >= f.spec.epoch
                && rev < f.spec.epoch + f.spec.duration
                && failing.iter().any(|t| f.spec.tests.contains(t))
            {
                f.onset = Some(self.now);
                f.run = Some(i);
                f.status = super::world::FaultStatus::Active;
            }
        }
        if failing.is_empty() {
            self.finish_stage(i, StageName::Tests, StageOutcome::Pass);
            self.start_scan(i);
            return Ok(());
        }
        self.runs[i].phase = Phase::Triage {
            attempt,
            items: failing
                .iter()
                .map(|t| TriageItem {
                    test_id: t.clone(),
                    action: None,
                    pending: false,
                })
                .collect(),
            since: self.now,
        };
        self.schedule(self.now + self.sc.human.detection_min, Task::TriageReview { run: i });
        if self.arm == Arm::Augmented {
            for t in failing {
                if !matches!(self.runs[i].phase, Phase::Triage { .. }) {
                    break;
                }
                self.propose_triage(i, &t, attempt)?;
            }
        }
        Ok(())
    }

    fn propose_triage(&mut self, i: usize, test_id: &str, attempt: u32) -> Result<(), SimError> {
        let used = self.history.quarantined.len() as u32;
        let budget = self.bundle.thresholds.quarantine_budget.saturating_sub(used);
        let input = TriageInput::from_history(&self.history, test_id, budget, self.runs[i].coverage_changed);
        let mut ctx = EvaluationContext::new(Environment::Preprod, TrustTier::T0);
        ctx.retry_count_so_far = attempt;
        ctx.flakiness_probability = crate::agents::flakiness_probability(&self.history, test_id).ok();
        ctx.coverage_changed = self.runs[i].coverage_changed;
        ctx.quarantine_used = used;
        let target = Target::Triage {
            run: i,
            test_id: test_id.to_string(),
            attempt,
        };
        let scope = self.runs[i].id.clone();
        self.decide(AgentInput::Triage(input), ctx, target, 0.0, Vec::new(), &scope)?;
        Ok(())
    }

    pub(crate) fn apply_triage(&mut self, i: usize, test_id: &str, effect: Effect) -> Result<(), SimError> {
        let Phase::Triage { items, .. } = &mut self.runs[i].phase else {
            return Ok(());
        };
        let Some(item) = items.iter_mut().find(|t| t.test_id == test_id) else {
            return Ok(());
        };
        item.pending = effect == Effect::Awaiting;
        if let Effect::Act { action, .. } = effect {
            item.action = Some(action);
        }
        self.check_triage(i)
    }

    /// The on-call engineer looks at the failures nobody has handled.
    fn human_triage(&mut self, i: usize) -> Result<(), SimError> {
        let Phase::Triage { attempt, items, .. } = self.runs[i].phase.clone() else {
            return Ok(());
        };
        for item in items.iter().filter(|t| t.action.is_none() && !t.pending) {
            let target = Target::Triage {
                run: i,
                test_id: item.test_id.clone(),
                attempt,
            };
            let (oracle, _) = self.oracle(&target, DecisionStage::TestFailures);
            let action = if oracle == [Action::Fail] || attempt >= self.bundle.thresholds.retry_cap_preprod {
                Action::Fail
            } else {
                Action::Retry
            };
            if let Phase::Triage { items, .. } = &mut self.runs[i].phase {
                if let Some(t) = items.iter_mut().find(|t| t.test_id == item.test_id) {
                    t.action = Some(action);
                }
            }
        }
        self.check_triage(i)
    }

    fn check_triage(&mut self, i: usize) -> Result<(), SimError> {
        let Phase::Triage { attempt, items, since } = self.runs[i].phase.clone() else {
            return Ok(());
        };
        if items.iter().any(|t| t.action.is_none()) {
            return Ok(());
        }
        self.runs[i].wait_min += self.now - since;
        if items.iter().any(|t| t.action == Some(Action::Fail)) {
            self.finish_stage(i, StageName::Tests, StageOutcome::Fail);
            self.end_run(i, RunOutcome::TestsFailed);
            return Ok(());
        }
        for t in items.iter().filter(|t| t.action == Some(Action::Quarantine)) {
            self.history.quarantined.insert(t.test_id.clone());
        }
        if items.iter().any(|t| t.action == Some(Action::Retry)) {
            self.start_tests(i, attempt + 1);
        } else {
            self.finish_stage(i, StageName::Tests, StageOutcome::Pass);
            self.start_scan(i);
        }
        Ok(())
    }

    fn start_scan(&mut self, i: usize) {
        self.runs[i].phase = Phase::Scanning {
            until: self.now + self.sc.stages.security_min,
        };
    }

    fn propose_security(&mut self, i: usize) -> Result<(), SimError> {
        let s = SecurityInput {
            findings: self.runs[i].findings.clone(),
        };
        let mut ctx = EvaluationContext::new(Environment::Preprod, TrustTier::T0);
        ctx.critical_cve_count = s.critical_count();
        ctx.high_cve_count = s.high_count();
        ctx.reachable_high_cve_count = s.reachable_high_count();
        let scope = self.runs[i].id.clone();
        self.decide(AgentInput::Security(s), ctx, Target::Security { run: i }, 0.0, Vec::new(), &scope)?;
        Ok(())
    }

    fn human_security(&mut self, i: usize) -> Result<(), SimError> {
        if !matches!(self.runs[i].phase, Phase::SecurityReview { .. }) || self.runs[i].awaiting {
            return Ok(());
        }
        let (oracle, _) = self.oracle(&Target::Security { run: i }, DecisionStage::SecurityGate);
        let action = oracle.first().copied().unwrap_or(Action::Block);
        self.apply_security(i, Effect::act(action, Handler::Human, None))
    }

    pub(crate) fn apply_security(&mut self, i: usize, effect: Effect) -> Result<(), SimError> {
        let Phase::SecurityReview { since } = self.runs[i].phase else {
            return Ok(());
        };
        self.runs[i].awaiting = effect == Effect::Awaiting;
        let pass = match effect {
            Effect::Act { action: Action::Allow | Action::AutoPr, .. } => true,
            Effect::Act { .. } | Effect::Denied { .. } => false,
            Effect::Recommended | Effect::Awaiting => return Ok(()),
        };
        self.runs[i].wait_min += self.now - since;
        if pass {
            self.finish_stage(i, StageName::Security, StageOutcome::Pass);
            self.enqueue(i);
        } else {
            self.finish_stage(i, StageName::Security, StageOutcome::Fail);
            self.end_run(i, RunOutcome::SecurityBlocked);
        }
        Ok(())
    }

    fn enqueue(&mut self, i: usize) {
        self.runs[i].phase = Phase::Queued;
        self.runs[i].stage_started = self.now;
        self.lane.push_back(i);
    }

    // ---- canary -----------------------------------------------------------

    fn start_canary(&mut self, i: usize) -> Result<(), SimError> {
        let st = &self.sc.stages;
        let now = self.now;
        let c = CanaryState {
            started: now,
            ramp: st.canary_initial_ramp_pct,
            next_step: now + st.canary_step_every_min,
            soak_end: now + st.soak_min,
            paused: false,
            awaiting: false,
            last_action: None,
            windows: VecDeque::new(),
        };
        let gate = c.soak_end + self.sc.human.promotion_gate_min;
        let ramp = c.ramp;
        self.runs[i].phase = Phase::Canary(c);
        self.runs[i].stage_started = now;
        self.canary_run = Some(i);
        self.emit(EventKind::Deployment {
            run_id: self.runs[i].id.clone(),
            change: DeploymentChange::CanaryStarted,
            ramp_pct: ramp,
            handler: Handler::Pipeline,
            decision_id: None,
        });
        self.schedule(gate, Task::PromotionGate { run: i });
        self.arm_canary_faults(i);
        Ok(())
    }

    fn advance_canary(&mut self, i: usize) -> Result<(), SimError> {
        let (step, max, cve_at) = (
            self.sc.stages.canary_step_pct,
            self.sc.stages.canary_max_ramp_pct,
            self.sc.stages.late_cve_offset_min,
        );
        let now = self.now;
        let run_id = self.runs[i].id.clone();
        let has_cve = self.runs[i].late_cve.is_some();
        let Some(c) = self.runs[i].canary_mut() else {
            return Ok(());
        };
        let disclose = has_cve && now == c.started + cve_at;
        let mut stepped = None;
        if !c.paused && c.ramp < max && c.next_step <= now {
            c.ramp = (c.ramp + step).min(max);
            c.next_step = now + self.sc.stages.canary_step_every_min;
            stepped = Some(c.ramp);
        }
        if disclose {
            self.runs[i].cve_disclosed = true;
        }
        if let Some(ramp) = stepped {
            self.emit(EventKind::Deployment {
                run_id,
                change: DeploymentChange::Ramp,
                ramp_pct: ramp,
                handler: Handler::Pipeline,
                decision_id: None,
            });
        }
        Ok(())
    }

    /// The manual promotion gate after the soak; it runs in both arms and
    /// is a no-op once an agent decision has ended the canary.
    fn human_gate(&mut self, i: usize) -> Result<(), SimError> {
        let Some(c) = self.runs[i].canary() else {
            return Ok(());
        };
        if c.awaiting {
            // retried once the approval resolves
            self.schedule(self.now + 1, Task::PromotionGate { run: i });
            return Ok(());
        }
        let cve = self.runs[i].cve_disclosed;
        let change_fault = self.faults.iter().any(|f| f.is_active() && f.loc == Some(Loc::Canary(i)));
        let (action, reason) = if cve {
            (Action::Rollback, "critical CVE disclosed during canary")
        } else if change_fault {
            (Action::Rollback, "canary regression")
        } else {
            (Action::Promote, "promotion gate passed")
        };
        self.human_action(Some(i), action, DecisionStage::CanaryAnalysis, reason)?;
        if cve {
            self.abort_canary(i, None, Handler::Human)
        } else {
            self.apply_canary(i, Effect::act(action, Handler::Human, None))
        }
    }

    pub(crate) fn apply_canary(&mut self, i: usize, effect: Effect) -> Result<(), SimError> {
        let now = self.now;
        let Some(c) = self.runs[i].canary_mut() else {
            return Ok(());
        };
        c.awaiting = effect == Effect::Awaiting;
        let soak_end = c.soak_end;
        match effect {
            Effect::Act { action, handler, decision } => match action {
                Action::Promote => {
                    self.runs[i].wait_min += now.saturating_sub(soak_end);
                    self.promote(i, decision, handler)?;
                }
                Action::Rollback => self.rollback_canary(i, decision, handler)?,
                Action::Pause => c.paused = true,
                Action::TuneFlags => {
                    c.paused = true;
                    self.runs[i].flag_dark = true;
                }
                _ => {}
            },
            Effect::Denied { proposed: Action::Promote } => self.abort_canary(i, None, Handler::Pipeline)?,
            _ => {}
        }
        Ok(())
    }

    fn promote(&mut self, i: usize, decision: Option<String>, handler: Handler) -> Result<(), SimError> {
        self.runs[i].promoted_at = Some(self.now);
        self.emit(EventKind::Deployment {
            run_id: self.runs[i].id.clone(),
            change: DeploymentChange::Promoted,
            ramp_pct: 100.0,
            handler,
            decision_id: decision,
        });
        self.finish_stage(i, StageName::Canary, StageOutcome::Pass);
        self.end_run(i, RunOutcome::Promoted);
        self.arm_prod_faults(i);
        self.start_flag_rollout(i)
    }

    fn teardown(&mut self, i: usize, change: DeploymentChange, outcome: RunOutcome, decision: Option<String>, handler: Handler) -> Result<(), SimError> {
        self.emit(EventKind::Deployment {
            run_id: self.runs[i].id.clone(),
            change,
            ramp_pct: 0.0,
            handler,
            decision_id: decision.clone(),
        });
        let how = if decision.is_some() { "rolled_back" } else { "manual" };
        for k in 0..self.faults.len() {
            if self.faults[k].is_active() && self.faults[k].loc == Some(Loc::Canary(i)) {
                self.resolve_fault(k, how.into(), decision.as_deref())?;
            }
        }
        self.disarm_faults(|l| l == Loc::Canary(i));
        // a change that never ships takes its dormant faults with it
        for f in &mut self.faults {
            if f.status == super::world::FaultStatus::Dormant && f.run == Some(i) {
                f.run = None;
            }
        }
        self.finish_stage(i, StageName::Canary, StageOutcome::Fail);
        self.end_run(i, outcome);
        Ok(())
    }

    fn rollback_canary(&mut self, i: usize, decision: Option<String>, handler: Handler) -> Result<(), SimError> {
        self.teardown(i, DeploymentChange::RolledBack, RunOutcome::RolledBack, decision, handler)
    }

    fn abort_canary(&mut self, i: usize, decision: Option<String>, handler: Handler) -> Result<(), SimError> {
        self.teardown(i, DeploymentChange::Aborted, RunOutcome::Aborted, decision, handler)
    }

    /// Agent-side observation for the current tick (augmented arm).
    pub(crate) fn observe(&mut self) -> Result<(), SimError> {
        self.observe_canary()?;
        self.observe_health()?;
        self.observe_incidents()?;
        Ok(())
    }

    fn observe_canary(&mut self) -> Result<(), SimError> {
        let Some(i) = self.canary_run else {
            return Ok(());
        };
        let need = self.sc.stages.observation_ticks as usize;
        let Some(c) = self.runs[i].canary() else {
            return Ok(());
        };
        if c.windows.len() < need {
            return Ok(());
        }
        let prod: Vec<_> = c.windows.iter().map(|(p, _)| p.clone()).collect();
        let can: Vec<_> = c.windows.iter().map(|(_, w)| w.clone()).collect();
        let (Some(baseline), Some(canary)) = (crate::telemetry::merge_windows(&prod), crate::telemetry::merge_windows(&can)) else {
            return Ok(());
        };
        let (ramp, soak_end, last, awaiting) = (c.ramp, c.soak_end, c.last_action, c.awaiting);
        let input = CanaryInput {
            run_id: self.runs[i].id.clone(),
            baseline: baseline.clone(),
            canary: canary.clone(),
            slo: self.sc.slo,
            hard_delta_pct: self.bundle.thresholds.max_error_delta_pct,
            flag_regression: false,
            current_ramp_pct: ramp,
        };
        let input = AgentInput::Canary(input);
        let Some(p) = crate::agents::propose_or_degrade(&input, &self.sc.agents, "peek") else {
            return Ok(());
        };
        if (p.action == Action::Promote && self.now < soak_end) || last == Some(p.action) {
            return Ok(());
        }
        // only the hard rollback path may jump a pending approval
        let hard = p.action == Action::Rollback && p.confidence >= 1.0;
        if awaiting && !hard {
            return Ok(());
        }
        if awaiting {
            self.supersede_approvals(&Target::Canary { run: i })?;
        }
        if let Some(c) = self.runs[i].canary_mut() {
            c.last_action = Some(p.action);
        }
        let mut ctx = EvaluationContext::new(Environment::Canary, TrustTier::T0);
        ctx.error_rate_delta_pp = Some(canary.error_rate - baseline.error_rate);
        ctx.p95_latency_ms = Some(canary.p95_ms);
        if baseline.p95_ms > 0.0 {
            ctx.latency_delta_pct = Some((canary.p95_ms - baseline.p95_ms) / baseline.p95_ms * 100.0);
        }
        ctx.saturation_pct = Some(canary.saturation);
        ctx.critical_cve_count = self.runs[i].cve_disclosed as u32;
        ctx.current_ramp_pct = ramp;
        let traces = vec![baseline.window_id, canary.window_id];
        let scope = self.runs[i].id.clone();
        self.decide(input, ctx, Target::Canary { run: i }, ramp, traces, &scope)?;
        Ok(())
    }
}
