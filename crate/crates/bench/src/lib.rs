//! Shared fixtures for the benchmarks.

use pipekeeper_core::agents::{identity, AgentConfig};
use pipekeeper_core::audit::{AuditEvent, AuditKind};
use pipekeeper_core::clock::SimTime;
use pipekeeper_core::decision::{Action, AgentProposal, DecisionStage};
use pipekeeper_core::ledger::{Ledger, Payload};
use pipekeeper_core::policy::{Environment, EvaluationContext};
use pipekeeper_core::scenario::{Scenario, TrustPhase};
use pipekeeper_core::trust::TrustTier;

pub fn proposal(stage: DecisionStage, action: Action, confidence: f64) -> AgentProposal {
    let id = identity("observability", &AgentConfig::default());
    AgentProposal {
        stage,
        action,
        confidence,
        evidence: vec!["bench".into()],
        rationale: "bench".into(),
        trace_id: "t/bench".into(),
        agent_id: id.agent_id,
        agent_version: id.agent_version,
        model_id: id.model_id,
    }
}

/// Every context field filled, so no rule escalates for missing data.
pub fn context(env: Environment, tier: TrustTier, error_delta_pp: f64, critical_cves: u32) -> EvaluationContext {
    let mut ctx = EvaluationContext::new(env, tier);
    ctx.error_rate_delta_pp = Some(error_delta_pp);
    ctx.p95_latency_ms = Some(120.0);
    ctx.latency_delta_pct = Some(0.0);
    ctx.saturation_pct = Some(40.0);
    ctx.flakiness_probability = Some(0.1);
    ctx.critical_cve_count = critical_cves;
    ctx
}

pub fn audit_ledger(n: usize) -> Ledger {
    let mut l = Ledger::new();
    for i in 0..n {
        let ev = AuditEvent::new(AuditKind::ManualAction, SimTime::from_minutes(i as u64), format!("subject-{i}"));
        l.append(&Payload::Audit(ev)).expect("in-memory append");
    }
    l
}

/// The canonical scenario cut to `hours`, trust pinned at T2.
pub fn short_scenario(hours: f64, seed: u64) -> Scenario {
    let mut sc = Scenario::canonical();
    sc.seed = seed;
    sc.horizon_days = hours / 24.0;
    sc.trust.initial_tier = TrustTier::T2;
    sc.trust.phases = vec![TrustPhase {
        from_hour: 0,
        ceiling: TrustTier::T2,
    }];
    sc
}
