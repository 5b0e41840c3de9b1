use pipekeeper_core::clock::SimTime;
use pipekeeper_core::decision::{Action, DecisionStage, Resolution, Verdict};
use pipekeeper_core::events::{Arm, DeploymentChange, EventKind, Handler, RunOutcome};
use pipekeeper_core::ledger::{verify_chain, Payload};
use pipekeeper_core::orchestrator::{ApprovalState, ApprovalVerdict, RunArtifacts, Simulation};
use pipekeeper_core::policy::default_bundle;
use pipekeeper_core::scenario::{Scenario, TrustPhase};
use pipekeeper_core::telemetry::{FaultKind, FaultSpec, FaultTarget};
use pipekeeper_core::trust::TrustTier;

/// A short scenario with no chaos, no findings and no flags, every agent
/// pinned at `tier`.
fn quiet(hours: f64, tier: TrustTier) -> Scenario {
    let mut sc = Scenario::canonical();
    sc.name = "quiet".into();
    sc.horizon_days = hours / 24.0;
    sc.chaos.rate = 0.0;
    sc.commits.finding_rate = 0.0;
    sc.commits.critical_finding_rate = 0.0;
    sc.commits.flag_share = 0.0;
    sc.commits.coverage_change_rate = 0.0;
    sc.suite.flaky_tests = 0;
    sc.late_cves.clear();
    sc.trust.initial_tier = tier;
    sc.trust.phases = vec![TrustPhase {
        from_hour: 0,
        ceiling: tier,
    }];
    sc
}

fn canary_spike(epoch: u64, pp: f64) -> FaultSpec {
    FaultSpec {
        fault_id: format!("f-canary-{epoch}"),
        kind: FaultKind::ErrorSpike,
        magnitude: pp,
        target: FaultTarget::Canary,
        epoch,
        onset_offset_min: 5,
        duration: 240,
        tests: Vec::new(),
        flag_attributable: false,
    }
}

fn run(sc: Scenario, arm: Arm) -> RunArtifacts {
    Simulation::new(sc, arm, default_bundle()).unwrap().run().unwrap()
}

fn records(a: &RunArtifacts) -> Vec<pipekeeper_core::decision::DecisionRecord> {
    a.ledger
        .iter()
        .filter_map(|e| match e.payload().unwrap() {
            Payload::Decision(d) => Some(d),
            _ => None,
        })
        .collect()
}

/// Steps until a pending canary-analysis approval exists.
fn until_canary_approval(sim: &mut Simulation) -> String {
    while !sim.is_finished() {
        sim.step().unwrap();
        if let Some(a) = sim.pending_approvals().into_iter().find(|a| a.stage == DecisionStage::CanaryAnalysis) {
            return a.request_id;
        }
    }
    panic!("no canary approval was requested");
}

#[test]
fn healthy_t3_run_promotes_autonomously() {
    let a = run(quiet(6.0, TrustTier::T3), Arm::Augmented);
    let recs = records(&a);
    let promote = recs.iter().find(|r| r.proposed_action == Action::Promote).expect("a promote decision");
    assert_eq!(promote.policy_outcome, Verdict::Allow);
    assert_eq!(promote.final_action, Some(Action::Promote));
    assert_eq!(promote.authority(), Some("autonomous"));
    assert!(a.summary.dora.promotions >= 1);
    assert_eq!(a.summary.incidents, 0);
}

#[test]
fn t2_canary_error_spike_rolls_back_autonomously() {
    let mut sc = quiet(6.0, TrustTier::T2);
    sc.faults.push(canary_spike(1, 5.0));
    let a = run(sc, Arm::Augmented);
    let rb = records(&a)
        .into_iter()
        .find(|r| r.stage == DecisionStage::CanaryAnalysis && r.proposed_action == Action::Rollback)
        .expect("a rollback decision");
    assert_eq!(rb.final_action, Some(Action::Rollback));
    assert_eq!(rb.authority(), Some("autonomous"));
    assert!(!rb.trace_ids.is_empty());
    assert!(a.events.iter().any(|e| matches!(
        &e.kind,
        EventKind::Deployment { change: DeploymentChange::RolledBack, handler: Handler::Agent, .. }
    )));
}

#[test]
fn t0_agents_only_recommend() {
    let mut sc = quiet(6.0, TrustTier::T0);
    sc.faults.push(canary_spike(1, 5.0));
    let a = run(sc, Arm::Augmented);
    let recs = records(&a);
    assert!(!recs.is_empty());
    for r in &recs {
        assert!(r.is_recommendation(), "{} was not a recommendation", r.id);
        assert_eq!(r.final_action, None);
    }
    assert!(!a.events.iter().any(|e| matches!(&e.kind, EventKind::Deployment { handler: Handler::Agent, .. })));
}

#[test]
fn unanswered_canary_approval_falls_back_to_rollback_at_deadline() {
    let mut sc = quiet(6.0, TrustTier::T1);
    sc.human.auto_respond = false;
    sc.faults.push(canary_spike(1, 5.0));
    let mut sim = Simulation::new(sc, Arm::Augmented, default_bundle()).unwrap();
    let id = until_canary_approval(&mut sim);
    let deadline = sim.approval(&id).unwrap().deadline;
    let decision_id = sim.approval(&id).unwrap().decision_id;
    while sim.now() <= deadline {
        sim.step().unwrap();
    }
    assert_eq!(sim.approval(&id).unwrap().state, ApprovalState::Expired);
    let a = sim.artifacts().unwrap();
    let rec = records(&a).into_iter().find(|r| r.id == decision_id).unwrap();
    assert_eq!(rec.timestamp, deadline);
    assert_eq!(rec.final_action, Some(Action::Rollback));
    assert!(rec.rationale.starts_with("approval_timeout"));
    let adj = a.adjudications.iter().find(|x| x.decision_id == decision_id).unwrap();
    assert_eq!(adj.resolution, Resolution::Expired(Some(Action::Rollback)));
    let fallback = a
        .events
        .iter()
        .find(|e| matches!(&e.kind, EventKind::Deployment { handler: Handler::Fallback, .. }))
        .expect("fallback effect");
    assert_eq!(fallback.timestamp, deadline);
    assert!(matches!(
        fallback.kind,
        EventKind::Deployment { change: DeploymentChange::RolledBack, .. }
    ));
}

#[test]
fn answer_at_deadline_is_rejected_as_expired() {
    let mut sc = quiet(6.0, TrustTier::T1);
    sc.human.auto_respond = false;
    sc.faults.push(canary_spike(1, 5.0));
    let mut sim = Simulation::new(sc, Arm::Augmented, default_bundle()).unwrap();
    let id = until_canary_approval(&mut sim);
    let deadline = sim.approval(&id).unwrap().deadline;
    while sim.now() < deadline {
        sim.step().unwrap();
    }
    assert_eq!(sim.now(), deadline);
    let err = sim.submit_approval(&id, ApprovalVerdict::Approve, "alice").unwrap_err();
    assert_eq!(err.code(), "expired");
}

#[test]
fn approve_executes_the_proposal_and_conflicts_after() {
    let mut sc = quiet(6.0, TrustTier::T1);
    sc.human.auto_respond = false;
    sc.faults.push(canary_spike(1, 5.0));
    let mut sim = Simulation::new(sc, Arm::Augmented, default_bundle()).unwrap();
    let id = until_canary_approval(&mut sim);
    let view = sim.submit_approval(&id, ApprovalVerdict::Approve, "alice").unwrap();
    assert_eq!(view.state, ApprovalState::Approved);
    assert_eq!(view.operator_id.as_deref(), Some("alice"));
    let again = sim.submit_approval(&id, ApprovalVerdict::Deny, "bob").unwrap_err();
    assert_eq!(again.code(), "already_resolved");
    assert_eq!(sim.submit_approval("apr-9999", ApprovalVerdict::Approve, "x").unwrap_err().code(), "unknown_request");
    let a = sim.artifacts().unwrap();
    let rec = records(&a).into_iter().find(|r| r.id == view.decision_id).unwrap();
    assert_eq!(rec.final_action, Some(view.proposed_action));
    assert_eq!(rec.inputs["approval"]["operator_id"], "alice");
}

#[test]
fn override_and_deny_are_recorded() {
    for verdict in [ApprovalVerdict::Override(Action::Pause), ApprovalVerdict::Deny] {
        let mut sc = quiet(6.0, TrustTier::T1);
        sc.human.auto_respond = false;
        sc.faults.push(canary_spike(1, 5.0));
        let mut sim = Simulation::new(sc, Arm::Augmented, default_bundle()).unwrap();
        let id = until_canary_approval(&mut sim);
        let view = sim.submit_approval(&id, verdict, "alice").unwrap();
        let a = sim.artifacts().unwrap();
        let rec = records(&a).into_iter().find(|r| r.id == view.decision_id).unwrap();
        match verdict {
            ApprovalVerdict::Override(x) => {
                assert_eq!(view.state, ApprovalState::Overridden(x));
                assert_eq!(rec.final_action, Some(x));
                assert!(rec.human_overridden);
            }
            _ => {
                assert_eq!(view.state, ApprovalState::Denied);
                assert_eq!(rec.final_action, None);
            }
        }
        assert_eq!(a.summary.ai.human_override_rate, Some(1.0));
    }
}

#[test]
fn override_outside_catalog_is_invalid() {
    let mut sc = quiet(6.0, TrustTier::T1);
    sc.human.auto_respond = false;
    sc.faults.push(canary_spike(1, 5.0));
    let mut sim = Simulation::new(sc, Arm::Augmented, default_bundle()).unwrap();
    let id = until_canary_approval(&mut sim);
    let err = sim.submit_approval(&id, ApprovalVerdict::Override(Action::Quarantine), "alice").unwrap_err();
    assert_eq!(err.code(), "invalid_override");
    assert_eq!(sim.approval(&id).unwrap().state, ApprovalState::Pending);
}

#[test]
fn kill_switch_stops_autonomous_effects() {
    let mut sc = quiet(12.0, TrustTier::T3);
    sc.faults.push(canary_spike(3, 5.0));
    let mut sim = Simulation::new(sc, Arm::Augmented, default_bundle()).unwrap();
    sim.step().unwrap();
    assert!(sim.set_kill_switch(true, "alice").unwrap());
    assert!(sim.tiers().kill_switch_engaged);
    // idempotent
    assert!(!sim.set_kill_switch(true, "alice").unwrap());
    while !sim.is_finished() {
        sim.step().unwrap();
    }
    let a = sim.artifacts().unwrap();
    for r in records(&a) {
        assert_ne!(r.authority(), Some("autonomous"), "{}", r.id);
    }
    let engaged = a
        .ledger
        .iter()
        .filter(|e| matches!(e.payload().unwrap(), Payload::Audit(x) if x.event == pipekeeper_core::audit::AuditKind::KillSwitch))
        .count();
    assert_eq!(engaged, 1);
}

#[test]
fn zero_fault_scenario_gives_identical_outcomes_in_both_arms() {
    let sc = quiet(24.0, TrustTier::T2);
    let outcomes = |a: &RunArtifacts| -> Vec<(String, RunOutcome)> {
        a.events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::RunFinished { run_id, outcome, .. } => Some((run_id.clone(), *outcome)),
                _ => None,
            })
            .collect()
    };
    let b = run(sc.clone(), Arm::Baseline);
    let a = run(sc, Arm::Augmented);
    assert!(!outcomes(&b).is_empty());
    assert_eq!(outcomes(&b), outcomes(&a));
}

#[test]
fn baseline_mttr_is_larger_for_the_same_error_spike() {
    let mut sc = quiet(12.0, TrustTier::T2);
    sc.faults.push(canary_spike(2, 5.0));
    let b = run(sc.clone(), Arm::Baseline);
    let a = run(sc, Arm::Augmented);
    let mttr = |x: &RunArtifacts| x.summary.dora.mttr_min.expect("one incident").mean;
    assert!(mttr(&b) > mttr(&a), "baseline {} vs augmented {}", mttr(&b), mttr(&a));
    let onset = |x: &RunArtifacts| x.faults.iter().find(|f| f.fault_id == "f-canary-2").unwrap().onset;
    assert_eq!(onset(&b), onset(&a));
}

#[test]
fn same_seed_gives_same_fault_schedule_in_both_arms() {
    let sc = Scenario::canonical();
    let sched = sc.fault_schedule().unwrap();
    assert_eq!(sched, sc.clone().fault_schedule().unwrap());
    let mut other = sc.clone();
    other.seed = 7;
    assert_ne!(sched, other.fault_schedule().unwrap());
}

#[test]
fn runs_are_deterministic() {
    let mut sc = Scenario::canonical();
    sc.horizon_days = 2.0;
    let x = run(sc.clone(), Arm::Augmented);
    let y = run(sc, Arm::Augmented);
    assert_eq!(x.summary.ledger_head, y.summary.ledger_head);
    assert_eq!(x, y);
}

#[test]
fn canonical_run_invariants() {
    let mut sc = Scenario::canonical();
    sc.horizon_days = 4.0;
    sc.trust.phases = vec![TrustPhase {
        from_hour: 0,
        ceiling: TrustTier::T2,
    }];
    sc.trust.initial_tier = TrustTier::T2;
    let a = run(sc, Arm::Augmented);
    verify_chain(&a.ledger).unwrap();

    // ledger before effect: every agent-carried effect follows its record
    let seq_of = |id: &str| {
        a.events.iter().find_map(|e| match &e.kind {
            EventKind::Decision { decision_id, .. } if decision_id == id => Some(e.seq),
            _ => None,
        })
    };
    for e in &a.events {
        if let EventKind::Deployment {
            decision_id: Some(id), ..
        } = &e.kind
        {
            let d = seq_of(id).unwrap_or_else(|| panic!("effect of unrecorded decision {id}"));
            assert!(d < e.seq, "effect of {id} precedes its record");
        }
    }

    // authority soundness: autonomous execution only after ALLOW at T2+
    for r in records(&a) {
        r.check_invariants().unwrap();
        if r.authority() == Some("autonomous") {
            assert_eq!(r.policy_outcome, Verdict::Allow);
            assert!(!r.human_overridden);
        }
        if r.stage == DecisionStage::CanaryAnalysis && r.final_action == Some(Action::Rollback) {
            assert!(!r.trace_ids.is_empty());
        }
    }

    // one postmortem per resolved incident
    let mut resolved = Vec::new();
    for e in &a.events {
        if let EventKind::IncidentResolved { incident } = &e.kind {
            incident.check_invariants().unwrap();
            resolved.push(incident.incident_id.clone());
        }
    }
    assert!(!resolved.is_empty());
    for id in &resolved {
        let n = a.postmortems.iter().filter(|p| &p.incident_id == id).count();
        assert_eq!(n, 1, "{id} has {n} postmortems");
    }
    assert!(a.events.windows(2).all(|w| w[0].seq < w[1].seq && w[0].timestamp <= w[1].timestamp));
}

#[test]
fn decision_timestamps_never_precede_proposals() {
    let mut sc = Scenario::canonical();
    sc.horizon_days = 2.0;
    let a = run(sc, Arm::Augmented);
    for adj in &a.adjudications {
        assert!(adj.proposed_at <= adj.timestamp);
    }
    assert_eq!(a.adjudications.len(), a.summary.decisions);
    assert!(a.summary.ended_at >= SimTime::from_hours(48));
}
