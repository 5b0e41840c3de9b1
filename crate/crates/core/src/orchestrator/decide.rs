//! The decision path: proposal, policy, authority, approval, record,
//! adjudication and trust samples.

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::artifacts::Adjudication;
use super::{ApprovalError, SimError, Simulation};
use crate::agents::{propose_or_degrade, AgentInput};
use crate::audit::{AuditEvent, AuditKind};
use crate::clock::SimTime;
use crate::decision::{finalize_record, Action, AgentProposal, DecisionRecord, DecisionStage, PolicyOutcome, RecordMeta, Resolution, Verdict};
use crate::events::{EventKind, Handler};
use crate::ledger::Payload;
use crate::policy::{audit_denial, evaluate_or_escalate, EvaluationContext};
use crate::trust::{authority, Authority, Envelope, OutcomeSample, SampleKind, Transition, TrustTier};

/// What a decision is about.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Target {
    Triage { run: usize, test_id: String, attempt: u32 },
    Security { run: usize },
    Canary { run: usize },
    /// Production health; `run` is the rollback candidate.
    Health { run: Option<usize> },
    Flag { run: usize },
    Incident { incident: Option<usize> },
}

impl Target {
    pub fn run(&self) -> Option<usize> {
        match self {
            Target::Triage { run, .. } | Target::Security { run } | Target::Canary { run } | Target::Flag { run } => Some(*run),
            Target::Health { run } => *run,
            Target::Incident { .. } => None,
        }
    }
}

/// The consequence of a decision for its target.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Effect {
    Act {
        action: Action,
        handler: Handler,
        decision: Option<String>,
    },
    /// Nothing executes; `proposed` was refused.
    Denied { proposed: Action },
    /// Recorded only; the human path keeps the stage.
    Recommended,
    /// Waiting for an approval.
    Awaiting,
}

impl Effect {
    pub fn act(action: Action, handler: Handler, decision: Option<String>) -> Self {
        Effect::Act { action, handler, decision }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state", content = "action")]
pub enum ApprovalState {
    Pending,
    Approved,
    Denied,
    Overridden(Action),
    Expired,
    /// Withdrawn because a later hard-path decision replaced it.
    Superseded,
}

/// An operator's answer to an approval request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "verdict", content = "action")]
pub enum ApprovalVerdict {
    Approve,
    Deny,
    Override(Action),
}

/// An approval request as the API shows it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApprovalView {
    pub request_id: String,
    pub decision_id: String,
    pub run_id: Option<String>,
    pub agent_id: String,
    pub stage: DecisionStage,
    pub proposed_action: Action,
    pub confidence: f64,
    pub verdict: Verdict,
    pub triggered_rules: Vec<String>,
    pub evidence: Vec<String>,
    pub rationale: String,
    pub trace_id: String,
    pub created: SimTime,
    pub deadline: SimTime,
    pub state: ApprovalState,
    pub operator_id: Option<String>,
}

#[derive(Debug, Clone)]
pub(crate) struct Approval {
    pub request_id: String,
    pub decision_id: String,
    pub proposal: AgentProposal,
    pub outcome: PolicyOutcome,
    pub inputs: serde_json::Value,
    pub extra_traces: Vec<String>,
    pub target: Target,
    pub authority: Authority,
    pub tier: TrustTier,
    pub sample_tier: TrustTier,
    pub oracle: Vec<Action>,
    pub fault_id: Option<String>,
    pub created: SimTime,
    pub deadline: SimTime,
    pub state: ApprovalState,
    pub operator_id: Option<String>,
}

impl Approval {
    fn view(&self) -> ApprovalView {
        ApprovalView {
            request_id: self.request_id.clone(),
            decision_id: self.decision_id.clone(),
            run_id: self.inputs["run_id"].as_str().map(str::to_string),
            agent_id: self.proposal.agent_id.clone(),
            stage: self.proposal.stage,
            proposed_action: self.proposal.action,
            confidence: self.proposal.confidence,
            verdict: self.outcome.verdict,
            triggered_rules: self.outcome.matched_rule_ids(),
            evidence: self.proposal.evidence.clone(),
            rationale: self.proposal.rationale.clone(),
            trace_id: self.proposal.trace_id.clone(),
            created: self.created,
            deadline: self.deadline,
            state: self.state,
            operator_id: self.operator_id.clone(),
        }
    }
}

/// An autonomous decision whose success is judged after the attribution horizon.
#[derive(Debug, Clone)]
pub(crate) struct DeferredSample {
    pub agent_id: String,
    pub decision_id: String,
    pub run: Option<usize>,
    pub proposed_at: SimTime,
    pub due: SimTime,
    pub correct: bool,
}

/// Fields shared by the record and its adjudication.
struct Pending<'a> {
    id: &'a str,
    p: &'a AgentProposal,
    outcome: &'a PolicyOutcome,
    inputs: serde_json::Value,
    extra: Vec<String>,
    authority: Authority,
    tier: TrustTier,
    oracle: &'a [Action],
    fault_id: Option<String>,
    proposed_at: SimTime,
}

fn internal(e: impl std::fmt::Display) -> SimError {
    SimError::Internal(e.to_string())
}

/// Fallback applied when an approval lapses.
fn timeout_fallback(stage: DecisionStage) -> Option<Action> {
    match stage {
        DecisionStage::CanaryAnalysis => Some(Action::Rollback),
        DecisionStage::TestFailures => Some(Action::Fail),
        _ => None,
    }
}

impl Simulation {
    /// Runs one agent decision end to end. Returns the decision id, or
    /// `None` when the agent had nothing to propose.
    pub(crate) fn decide(
        &mut self,
        input: AgentInput,
        mut ctx: EvaluationContext,
        target: Target,
        ramp_pct: f64,
        extra_traces: Vec<String>,
        scope: &str,
    ) -> Result<Option<String>, SimError> {
        let id = format!("dec-{:05}", self.next_decision + 1);
        let trace = format!("{scope}/{id}");
        let Some(p) = propose_or_degrade(&input, &self.sc.agents, &trace) else {
            return Ok(None);
        };
        self.next_decision += 1;
        let agent = input.agent_id();
        let st = self.trust.state(agent).map_err(internal)?;
        let (tier, sample_tier) = (st.effective_tier(), st.tier);
        ctx.trust_tier = tier;
        let outcome = evaluate_or_escalate(&p, &ctx, &self.bundle);
        let envelope = Envelope {
            ramp_pct,
            max_ramp_pct: self.bundle.thresholds.max_canary_ramp_pct,
            destructive: ctx.destructive,
        };
        let auth = authority(tier, p.stage, p.action, outcome.verdict, &envelope);
        if let Some(mut ev) = audit_denial(&outcome, &p, &id, self.now) {
            ev.details["trust_tier"] = json!(tier);
            self.audit(ev)?;
        }
        let (oracle, fault_id) = self.oracle(&target, p.stage);
        let correct = oracle.contains(&p.action);
        if let Some(idx) = fault_id.as_deref().and_then(|f| self.open_incident_of(f)) {
            self.incidents[idx].inc.decision_ids.push(id.clone());
            self.mark_detected(idx);
        }
        let run_id = target.run().map(|r| self.runs[r].id.clone());
        if let Some(r) = target.run() {
            self.runs[r].stage_decisions.push(id.clone());
        }
        let inputs = json!({
            "agent_id": agent,
            "run_id": run_id,
            "tier": tier,
            "authority": auth,
            "observation": input,
            "context": ctx,
            "proposed_at": self.now,
        });
        let pending = Pending {
            id: &id,
            p: &p,
            outcome: &outcome,
            inputs: inputs.clone(),
            extra: extra_traces.clone(),
            authority: auth,
            tier,
            oracle: &oracle,
            fault_id: fault_id.clone(),
            proposed_at: self.now,
        };
        let violation = outcome.verdict == Verdict::Deny && !p.action.is_fail_safe();
        let effect = match auth {
            Authority::Autonomous => {
                self.write_record(pending, Resolution::Auto, None, None)?;
                Effect::act(p.action, Handler::Agent, Some(id.clone()))
            }
            Authority::RecommendOnly => {
                self.write_record(pending, Resolution::RecommendOnly, None, None)?;
                Effect::Recommended
            }
            Authority::Blocked => {
                let rec = self.write_record(pending, Resolution::Denied, None, None)?;
                match rec.final_action {
                    Some(a) => Effect::act(a, Handler::Agent, Some(id.clone())),
                    None => Effect::Denied { proposed: p.action },
                }
            }
            Authority::NeedsApproval => {
                self.next_request += 1;
                let request_id = format!("apr-{:04}", self.next_request);
                let deadline = self.now + self.sc.human.approval_window_min;
                let mut ev = AuditEvent::new(AuditKind::ApprovalRequested, self.now, id.clone());
                ev.trace_id = Some(p.trace_id.clone());
                ev.rule_ids = outcome.matched_rule_ids();
                ev.evidence = p.evidence.clone();
                ev.rationale = p.rationale.clone();
                ev.details = json!({
                    "request_id": request_id,
                    "stage": p.stage,
                    "proposed_action": p.action,
                    "deadline": deadline,
                    "trust_tier": tier,
                });
                self.audit(ev)?;
                self.emit(EventKind::ApprovalRequested {
                    request_id: request_id.clone(),
                    decision_id: id.clone(),
                    deadline,
                });
                if self.sc.human.auto_respond {
                    let at = self.now + self.sc.human.approval_response_min;
                    self.schedule(at, super::pipeline::Task::ApprovalAnswer {
                        request_id: request_id.clone(),
                    });
                }
                self.approvals.insert(
                    request_id.clone(),
                    Approval {
                        request_id,
                        decision_id: id.clone(),
                        proposal: p.clone(),
                        outcome: outcome.clone(),
                        inputs,
                        extra_traces,
                        target: target.clone(),
                        authority: auth,
                        tier,
                        sample_tier,
                        oracle: oracle.clone(),
                        fault_id,
                        created: self.now,
                        deadline,
                        state: ApprovalState::Pending,
                        operator_id: None,
                    },
                );
                Effect::Awaiting
            }
        };

        // trust evidence available right away
        match sample_tier {
            TrustTier::T0 => self.record_sample(agent, &id, SampleKind::RecommendationAccuracy, correct, false)?,
            TrustTier::T1 if auth == Authority::Blocked => self.record_sample(agent, &id, SampleKind::ApprovalAlignment, correct, false)?,
            TrustTier::T2 | TrustTier::T3 if violation => self.record_sample(agent, &id, SampleKind::AutonomousSuccess, false, true)?,
            TrustTier::T2 | TrustTier::T3 if !self.trust.kill_switch_engaged => self.deferred.push(DeferredSample {
                agent_id: agent.to_string(),
                decision_id: id.clone(),
                run: target.run(),
                proposed_at: self.now,
                due: self.now + self.trust.config.attribution_horizon_minutes,
                correct,
            }),
            _ => {}
        }

        self.apply(&target, effect)?;
        Ok(Some(id))
    }

    fn write_record(
        &mut self,
        d: Pending<'_>,
        resolution: Resolution,
        note: Option<String>,
        approval: Option<serde_json::Value>,
    ) -> Result<DecisionRecord, SimError> {
        let mut inputs = d.inputs;
        inputs["resolution"] = json!(resolution);
        if let Some(a) = approval {
            inputs["approval"] = a;
        }
        let rec = finalize_record(
            d.p,
            d.outcome,
            resolution,
            RecordMeta {
                id: d.id.to_string(),
                timestamp: self.now,
                inputs,
                extra_trace_ids: d.extra,
                note,
            },
        )
        .map_err(internal)?;
        let seq = self.ledger.append(&Payload::Decision(rec.clone()))?.sequence;
        self.records.push(rec.clone());
        self.emit(EventKind::Decision {
            decision_id: rec.id.clone(),
            ledger_sequence: seq,
            agent_id: d.p.agent_id.clone(),
            stage: rec.stage,
            proposed_action: rec.proposed_action,
            verdict: rec.policy_outcome,
            authority: d.authority,
            tier: d.tier,
            final_action: rec.final_action,
        });
        self.adjudications.push(Adjudication {
            decision_id: rec.id.clone(),
            agent_id: d.p.agent_id.clone(),
            stage: rec.stage,
            proposed_action: rec.proposed_action,
            final_action: rec.final_action,
            resolution,
            oracle_actions: d.oracle.to_vec(),
            correct: d.oracle.contains(&rec.proposed_action),
            fault_id: d.fault_id,
            proposed_at: d.proposed_at,
            timestamp: self.now,
        });
        Ok(rec)
    }

    fn record_sample(&mut self, agent: &str, decision_id: &str, kind: SampleKind, correct: bool, violation: bool) -> Result<(), SimError> {
        if self.trust.kill_switch_engaged {
            return Ok(());
        }
        let cfg = self.trust.config.clone();
        let st = self.trust.state_mut(agent).map_err(internal)?;
        let sample = OutcomeSample {
            decision_id: decision_id.to_string(),
            kind,
            correct,
            policy_violation_attempt: violation,
            timestamp: self.now,
        };
        // a sample of the wrong kind belongs to a tier the agent has left
        if st.record_outcome(sample, &cfg).is_ok() {
            self.evaluate_tier(agent)?;
        }
        Ok(())
    }

    pub(crate) fn evaluate_tier(&mut self, agent: &str) -> Result<(), SimError> {
        if self.trust.kill_switch_engaged {
            return Ok(());
        }
        let cfg = self.trust.config.clone();
        let (ceiling, now) = (self.ceiling, self.now);
        let st = self.trust.state_mut(agent).map_err(internal)?;
        let (from, to, reason) = match st.evaluate_transition(&cfg, ceiling, now) {
            Transition::Stay => return Ok(()),
            Transition::Promote { from, to } => (from, to, "promotion criteria met"),
            Transition::Demote { from, to } => (from, to, "policy violation attempt in window"),
        };
        let mut ev = AuditEvent::new(AuditKind::TierChange, now, agent);
        ev.rationale = reason.into();
        ev.details = json!({ "from": from, "to": to, "ceiling": ceiling });
        self.audit(ev)?;
        self.emit(EventKind::TierChange {
            agent_id: agent.to_string(),
            from,
            to,
            reason: reason.into(),
        });
        Ok(())
    }

    pub(crate) fn settle_deferred(&mut self) -> Result<(), SimError> {
        let now = self.now;
        let (due, rest): (Vec<_>, Vec<_>) = std::mem::take(&mut self.deferred).into_iter().partition(|d| d.due <= now);
        self.deferred = rest;
        for d in due {
            let harmed = d.run.is_some_and(|r| self.incident_from_run(r, d.proposed_at, d.due));
            self.record_sample(&d.agent_id, &d.decision_id, SampleKind::AutonomousSuccess, d.correct && !harmed, false)?;
        }
        Ok(())
    }

    // ---- approvals ------------------------------------------------------

    pub fn pending_approvals(&self) -> Vec<ApprovalView> {
        self.approvals.values().filter(|a| a.state == ApprovalState::Pending).map(Approval::view).collect()
    }

    pub fn approval(&self, request_id: &str) -> Option<ApprovalView> {
        self.approvals.get(request_id).map(Approval::view)
    }

    /// Applies an operator's answer at the current tick.
    pub fn submit_approval(&mut self, request_id: &str, verdict: ApprovalVerdict, operator_id: &str) -> Result<ApprovalView, ApprovalError> {
        let a = self
            .approvals
            .get(request_id)
            .ok_or_else(|| ApprovalError::UnknownRequest(request_id.into()))?;
        match a.state {
            ApprovalState::Expired => return Err(ApprovalError::Expired(request_id.into())),
            ApprovalState::Pending if self.now >= a.deadline => return Err(ApprovalError::Expired(request_id.into())),
            ApprovalState::Pending => {}
            _ => return Err(ApprovalError::AlreadyResolved(request_id.into())),
        }
        if let ApprovalVerdict::Override(action) = verdict {
            if !a.proposal.stage.allows(action) {
                return Err(ApprovalError::InvalidOverride(format!(
                    "`{}` is not in the `{}` catalog",
                    action.as_str(),
                    a.proposal.stage.as_str()
                )));
            }
        }
        self.resolve_approval(request_id, verdict, operator_id)
            .map_err(|e| ApprovalError::InvalidOverride(e.to_string()))?;
        Ok(self.approvals[request_id].view())
    }

    pub(crate) fn resolve_approval(&mut self, request_id: &str, verdict: ApprovalVerdict, operator_id: &str) -> Result<(), SimError> {
        let a = self.approvals.get_mut(request_id).ok_or_else(|| internal(request_id))?;
        let verdict = match verdict {
            ApprovalVerdict::Override(x) if x == a.proposal.action => ApprovalVerdict::Approve,
            v => v,
        };
        let (state, resolution, label) = match verdict {
            ApprovalVerdict::Approve => (ApprovalState::Approved, Resolution::Approved, "approved".to_string()),
            ApprovalVerdict::Deny => (ApprovalState::Denied, Resolution::Denied, "denied".to_string()),
            ApprovalVerdict::Override(x) => (ApprovalState::Overridden(x), Resolution::Overridden(x), format!("overridden:{}", x.as_str())),
        };
        a.state = state;
        a.operator_id = Some(operator_id.to_string());
        let a = a.clone();
        self.emit(EventKind::ApprovalResolved {
            request_id: a.request_id.clone(),
            decision_id: a.decision_id.clone(),
            resolution: label,
            operator_id: Some(operator_id.to_string()),
        });
        let approval = json!({
            "request_id": a.request_id,
            "operator_id": operator_id,
            "answered_at": self.now,
            "deadline": a.deadline,
        });
        let rec = self.write_record(Self::pending_of(&a), resolution, None, Some(approval))?;
        let effect = match resolution {
            Resolution::Approved => Effect::act(a.proposal.action, Handler::Agent, Some(rec.id.clone())),
            Resolution::Overridden(x) => Effect::act(x, Handler::Human, Some(rec.id.clone())),
            _ => Effect::Denied {
                proposed: a.proposal.action,
            },
        };
        if a.sample_tier == TrustTier::T1 {
            let aligned = resolution == Resolution::Approved;
            self.record_sample(&a.proposal.agent_id, &a.decision_id, SampleKind::ApprovalAlignment, aligned, false)?;
        }
        self.apply(&a.target, effect)
    }

    fn pending_of(a: &Approval) -> Pending<'_> {
        Pending {
            id: &a.decision_id,
            p: &a.proposal,
            outcome: &a.outcome,
            inputs: a.inputs.clone(),
            extra: a.extra_traces.clone(),
            authority: a.authority,
            tier: a.tier,
            oracle: &a.oracle,
            fault_id: a.fault_id.clone(),
            proposed_at: a.created,
        }
    }

    /// Withdraws pending approvals on `target` ahead of a decision that
    /// replaces them. Nothing executes for the withdrawn requests.
    pub(crate) fn supersede_approvals(&mut self, target: &Target) -> Result<(), SimError> {
        let ids: Vec<String> = self
            .approvals
            .values()
            .filter(|a| a.state == ApprovalState::Pending && &a.target == target)
            .map(|a| a.request_id.clone())
            .collect();
        for request_id in ids {
            let a = self.approvals.get_mut(&request_id).expect("listed above");
            a.state = ApprovalState::Superseded;
            let a = a.clone();
            self.emit(EventKind::ApprovalResolved {
                request_id: a.request_id.clone(),
                decision_id: a.decision_id.clone(),
                resolution: "superseded".into(),
                operator_id: None,
            });
            let approval = json!({ "request_id": a.request_id, "deadline": a.deadline });
            self.write_record(Self::pending_of(&a), Resolution::Expired(None), Some("superseded".into()), Some(approval))?;
        }
        Ok(())
    }

    /// Lapses every pending approval whose deadline has arrived.
    pub(crate) fn expire_approvals(&mut self) -> Result<(), SimError> {
        let due: Vec<String> = self
            .approvals
            .values()
            .filter(|a| a.state == ApprovalState::Pending && a.deadline <= self.now)
            .map(|a| a.request_id.clone())
            .collect();
        for request_id in due {
            let a = self.approvals.get_mut(&request_id).expect("listed above");
            a.state = ApprovalState::Expired;
            let a = a.clone();
            let fallback = timeout_fallback(a.proposal.stage);
            let mut ev = AuditEvent::new(AuditKind::ApprovalTimeout, self.now, a.decision_id.clone());
            ev.trace_id = Some(a.proposal.trace_id.clone());
            ev.rationale = format!("no answer by {}", a.deadline);
            ev.details = json!({
                "request_id": a.request_id,
                "stage": a.proposal.stage,
                "proposed_action": a.proposal.action,
                "fallback": fallback,
            });
            self.audit(ev)?;
            self.emit(EventKind::ApprovalResolved {
                request_id: a.request_id.clone(),
                decision_id: a.decision_id.clone(),
                resolution: "expired".into(),
                operator_id: None,
            });
            let approval = json!({ "request_id": a.request_id, "deadline": a.deadline });
            let rec = self.write_record(Self::pending_of(&a), Resolution::Expired(fallback), Some("approval_timeout".into()), Some(approval))?;
            let effect = match fallback {
                Some(x) => Effect::act(x, Handler::Fallback, Some(rec.id.clone())),
                None => Effect::Denied {
                    proposed: a.proposal.action,
                },
            };
            self.apply(&a.target, effect)?;
        }
        Ok(())
    }

    /// The simulated operator's answer: approve a correct proposal, replace
    /// a wrong one with the right action, deny when nothing should happen.
    pub(crate) fn auto_answer(&mut self, request_id: &str) -> Result<(), SimError> {
        let Some(a) = self.approvals.get(request_id) else {
            return Ok(());
        };
        if a.state != ApprovalState::Pending || a.deadline <= self.now {
            return Ok(());
        }
        let (oracle, _) = self.oracle(&a.target, a.proposal.stage);
        let verdict = if oracle.contains(&a.proposal.action) {
            ApprovalVerdict::Approve
        } else if let Some(&x) = oracle.first() {
            ApprovalVerdict::Override(x)
        } else {
            ApprovalVerdict::Deny
        };
        self.resolve_approval(request_id, verdict, "oncall")
    }

    /// Carries a decision's effect out on its target.
    pub(crate) fn apply(&mut self, target: &Target, effect: Effect) -> Result<(), SimError> {
        match target {
            Target::Triage { run, test_id, .. } => self.apply_triage(*run, test_id, effect),
            Target::Security { run } => self.apply_security(*run, effect),
            Target::Canary { run } => self.apply_canary(*run, effect),
            Target::Health { run } => match effect {
                Effect::Act { action: Action::Rollback, handler, decision } => match run {
                    Some(r) => self.prod_revert(*r, decision.as_deref(), handler),
                    None => Ok(()),
                },
                Effect::Act { action: Action::AutoScale, handler, decision } => self.scale_out(decision.as_deref(), handler),
                _ => Ok(()),
            },
            Target::Flag { run } => {
                if let Some(fl) = self.flags.iter_mut().find(|f| f.run == *run && !f.done) {
                    fl.awaiting = effect == Effect::Awaiting;
                }
                if let Effect::Act { action, handler, decision } = effect {
                    let current = self.flags.iter().find(|f| f.run == *run && !f.done).map(|f| f.ramp);
                    if let Some(current) = current {
                        let to = crate::agents::flag_target(action, current, self.sc.agents.flag_step_pct);
                        if to != current {
                            self.set_flag_ramp(*run, to, decision.as_deref(), handler)?;
                        }
                    }
                }
                Ok(())
            }
            Target::Incident { .. } => match effect {
                Effect::Act { action: Action::RunRunbook, handler, decision } => self.run_runbook(decision.as_deref(), handler),
                _ => Ok(()),
            },
        }
    }
}
