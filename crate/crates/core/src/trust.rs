//! Trust tiers, authority, promotion/demotion and the kill switch.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{AuditEvent, AuditKind};
use crate::clock::SimTime;
use crate::decision::{Action, DecisionStage, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TrustTier {
    T0,
    T1,
    T2,
    T3,
}

impl TrustTier {
    pub const ALL: [TrustTier; 4] = [TrustTier::T0, TrustTier::T1, TrustTier::T2, TrustTier::T3];

    pub fn rank(self) -> u8 {
        self as u8
    }

    pub fn up(self) -> TrustTier {
        match self {
            TrustTier::T0 => TrustTier::T1,
            TrustTier::T1 => TrustTier::T2,
            TrustTier::T2 | TrustTier::T3 => TrustTier::T3,
        }
    }

    pub fn down(self) -> TrustTier {
        match self {
            TrustTier::T0 | TrustTier::T1 => TrustTier::T0,
            TrustTier::T2 => TrustTier::T1,
            TrustTier::T3 => TrustTier::T2,
        }
    }

    /// Sample kind collected while an agent sits at this tier.
    pub fn sample_kind(self) -> SampleKind {
        match self {
            TrustTier::T0 => SampleKind::RecommendationAccuracy,
            TrustTier::T1 => SampleKind::ApprovalAlignment,
            TrustTier::T2 | TrustTier::T3 => SampleKind::AutonomousSuccess,
        }
    }
}

impl fmt::Display for TrustTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{}", self.rank())
    }
}

impl FromStr for TrustTier {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "T0" => Ok(TrustTier::T0),
            "T1" => Ok(TrustTier::T1),
            "T2" => Ok(TrustTier::T2),
            "T3" => Ok(TrustTier::T3),
            _ => Err(format!("unknown tier `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Authority {
    RecommendOnly,
    NeedsApproval,
    Autonomous,
    /// Policy denied; nothing may execute.
    Blocked,
}

impl Authority {
    pub fn as_str(self) -> &'static str {
        match self {
            Authority::RecommendOnly => "recommend_only",
            Authority::NeedsApproval => "needs_approval",
            Authority::Autonomous => "autonomous",
            Authority::Blocked => "blocked",
        }
    }
}

/// The bounded envelope checked for T2 autonomy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelope {
    pub ramp_pct: f64,
    pub max_ramp_pct: f64,
    pub destructive: bool,
}

impl Envelope {
    pub fn contains(&self) -> bool {
        self.ramp_pct <= self.max_ramp_pct && !self.destructive
    }
}

/// Maps (effective tier, verdict) onto what may actually happen.
pub fn authority(tier: TrustTier, _stage: DecisionStage, _action: Action, verdict: Verdict, envelope: &Envelope) -> Authority {
    if tier == TrustTier::T0 {
        return Authority::RecommendOnly;
    }
    match verdict {
        Verdict::Deny => Authority::Blocked,
        Verdict::RequireApproval => Authority::NeedsApproval,
        Verdict::Allow => match tier {
            TrustTier::T0 => unreachable!(),
            TrustTier::T1 => Authority::NeedsApproval,
            TrustTier::T2 if envelope.contains() => Authority::Autonomous,
            TrustTier::T2 => Authority::NeedsApproval,
            TrustTier::T3 => Authority::Autonomous,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    RecommendationAccuracy,
    ApprovalAlignment,
    AutonomousSuccess,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSample {
    pub decision_id: String,
    pub kind: SampleKind,
    pub correct: bool,
    pub policy_violation_attempt: bool,
    pub timestamp: SimTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrustConfig {
    pub window_cap: usize,
    pub t0_window: usize,
    pub t0_min_pct: u32,
    pub t1_window: usize,
    pub t1_min_pct: u32,
    pub t2_window: usize,
    pub t2_min_pct: u32,
    /// Minutes after an autonomous action in which an incident counts against it.
    pub attribution_horizon_minutes: u64,
}

impl Default for TrustConfig {
    fn default() -> Self {
        TrustConfig {
            window_cap: 200,
            t0_window: 30,
            t0_min_pct: 85,
            t1_window: 50,
            t1_min_pct: 90,
            t2_window: 100,
            t2_min_pct: 95,
            attribution_horizon_minutes: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TrustError {
    #[error("kind_tier_mismatch: {kind:?} sample recorded at {tier}")]
    KindTierMismatch { kind: SampleKind, tier: TrustTier },
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "transition")]
pub enum Transition {
    Stay,
    Promote { from: TrustTier, to: TrustTier },
    Demote { from: TrustTier, to: TrustTier },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustState {
    pub agent_id: String,
    pub tier: TrustTier,
    pub window: VecDeque<OutcomeSample>,
    pub violations_in_window: u32,
    pub kill_switch_engaged: bool,
    pub last_transition: SimTime,
}

impl TrustState {
    pub fn new(agent_id: impl Into<String>, tier: TrustTier) -> Self {
        TrustState {
            agent_id: agent_id.into(),
            tier,
            window: VecDeque::new(),
            violations_in_window: 0,
            kill_switch_engaged: false,
            last_transition: SimTime::ZERO,
        }
    }

    /// Tier used for authority decisions.
    pub fn effective_tier(&self) -> TrustTier {
        if self.kill_switch_engaged {
            TrustTier::T0
        } else {
            self.tier
        }
    }

    pub fn record_outcome(&mut self, sample: OutcomeSample, cfg: &TrustConfig) -> Result<(), TrustError> {
        if sample.kind != self.tier.sample_kind() {
            return Err(TrustError::KindTierMismatch {
                kind: sample.kind,
                tier: self.tier,
            });
        }
        if sample.policy_violation_attempt {
            self.violations_in_window += 1;
        }
        self.window.push_back(sample);
        while self.window.len() > cfg.window_cap {
            if let Some(old) = self.window.pop_front() {
                if old.policy_violation_attempt {
                    self.violations_in_window -= 1;
                }
            }
        }
        Ok(())
    }

    fn clear_window(&mut self) {
        self.window.clear();
        self.violations_in_window = 0;
    }

    fn last_n(&self, n: usize) -> Option<impl Iterator<Item = &OutcomeSample>> {
        (self.window.len() >= n).then(|| self.window.iter().skip(self.window.len() - n))
    }

    /// `correct * 100 >= pct * n` over the most recent `n` samples.
    fn meets(&self, n: usize, pct: u32, require_no_violation: bool) -> bool {
        let Some(samples) = self.last_n(n) else {
            return false;
        };
        let mut correct = 0u64;
        for s in samples {
            if require_no_violation && s.policy_violation_attempt {
                return false;
            }
            correct += s.correct as u64;
        }
        correct * 100 >= pct as u64 * n as u64
    }

    /// Applies the tier transition rules. `ceiling` caps promotion (the
    /// calendar phase plan); demotion always applies.
    pub fn evaluate_transition(&mut self, cfg: &TrustConfig, ceiling: TrustTier, now: SimTime) -> Transition {
        let from = self.tier;
        if matches!(from, TrustTier::T2 | TrustTier::T3) && self.violations_in_window > 0 {
            self.tier = from.down();
            self.clear_window();
            self.last_transition = now;
            return Transition::Demote { from, to: self.tier };
        }
        if from >= ceiling {
            return Transition::Stay;
        }
        let promote = match from {
            TrustTier::T0 => self.meets(cfg.t0_window, cfg.t0_min_pct, false),
            TrustTier::T1 => self.meets(cfg.t1_window, cfg.t1_min_pct, false),
            TrustTier::T2 => self.meets(cfg.t2_window, cfg.t2_min_pct, true),
            TrustTier::T3 => false,
        };
        if promote {
            self.tier = from.up();
            self.clear_window();
            self.last_transition = now;
            Transition::Promote { from, to: self.tier }
        } else {
            Transition::Stay
        }
    }
}

/// All agents' trust states plus the global kill switch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustManager {
    pub config: TrustConfig,
    pub agents: BTreeMap<String, TrustState>,
    pub kill_switch_engaged: bool,
}

impl TrustManager {
    pub fn new(config: TrustConfig, agent_ids: &[&str], initial: TrustTier) -> Self {
        TrustManager {
            config,
            agents: agent_ids.iter().map(|id| (id.to_string(), TrustState::new(*id, initial))).collect(),
            kill_switch_engaged: false,
        }
    }

    pub fn state(&self, agent_id: &str) -> Result<&TrustState, TrustError> {
        self.agents.get(agent_id).ok_or_else(|| TrustError::UnknownAgent(agent_id.into()))
    }

    pub fn state_mut(&mut self, agent_id: &str) -> Result<&mut TrustState, TrustError> {
        self.agents.get_mut(agent_id).ok_or_else(|| TrustError::UnknownAgent(agent_id.into()))
    }

    /// Engages or releases the kill switch. Returns an audit event only when
    /// the state actually changes. Releasing resets every agent to T0.
    pub fn kill_switch(&mut self, engage: bool, operator_id: &str, now: SimTime) -> Option<AuditEvent> {
        if self.kill_switch_engaged == engage {
            return None;
        }
        self.kill_switch_engaged = engage;
        for st in self.agents.values_mut() {
            st.kill_switch_engaged = engage;
            if !engage {
                st.tier = TrustTier::T0;
                st.clear_window();
                st.last_transition = now;
            }
        }
        let mut ev = AuditEvent::new(AuditKind::KillSwitch, now, "all-agents");
        ev.operator_id = Some(operator_id.to_string());
        ev.rationale = if engage {
            "autonomy disabled; all agents recommend-only".into()
        } else {
            "kill switch released; agents restart at T0".into()
        };
        ev.details = serde_json::json!({ "engaged": engage });
        Some(ev)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(i: usize, kind: SampleKind, correct: bool, violation: bool) -> OutcomeSample {
        OutcomeSample {
            decision_id: format!("d{i}"),
            kind,
            correct,
            policy_violation_attempt: violation,
            timestamp: SimTime(i as u64),
        }
    }

    fn state_with(tier: TrustTier, n: usize, correct: usize, violations: usize) -> TrustState {
        let cfg = TrustConfig::default();
        let mut st = TrustState::new("observability", tier);
        for i in 0..n {
            let v = i < violations;
            st.record_outcome(sample(i, tier.sample_kind(), i >= n - correct, v), &cfg).unwrap();
        }
        st
    }

    fn env(ramp: f64, destructive: bool) -> Envelope {
        Envelope {
            ramp_pct: ramp,
            max_ramp_pct: 20.0,
            destructive,
        }
    }

    #[test]
    fn authority_table() {
        use Action::*;
        use DecisionStage::*;
        assert_eq!(
            authority(TrustTier::T0, CanaryAnalysis, Rollback, Verdict::Allow, &env(10.0, false)),
            Authority::RecommendOnly
        );
        assert_eq!(
            authority(TrustTier::T1, CanaryAnalysis, Rollback, Verdict::Allow, &env(10.0, false)),
            Authority::NeedsApproval
        );
        assert_eq!(
            authority(TrustTier::T2, CanaryAnalysis, Rollback, Verdict::Allow, &env(15.0, false)),
            Authority::Autonomous
        );
        assert_eq!(
            authority(TrustTier::T2, CanaryAnalysis, Rollback, Verdict::Allow, &env(30.0, false)),
            Authority::NeedsApproval
        );
        assert_eq!(
            authority(TrustTier::T2, IncidentResponse, Rollback, Verdict::Allow, &env(0.0, true)),
            Authority::NeedsApproval
        );
        assert_eq!(
            authority(TrustTier::T3, IncidentResponse, Rollback, Verdict::RequireApproval, &env(0.0, true)),
            Authority::NeedsApproval
        );
        assert_eq!(
            authority(TrustTier::T3, CanaryAnalysis, Promote, Verdict::Allow, &env(100.0, false)),
            Authority::Autonomous
        );
        for tier in [TrustTier::T1, TrustTier::T2, TrustTier::T3] {
            assert_eq!(
                authority(tier, CanaryAnalysis, Promote, Verdict::Deny, &env(10.0, false)),
                Authority::Blocked
            );
        }
    }

    #[test]
    fn record_outcome_window_and_violations() {
        let st = state_with(TrustTier::T0, 30, 30, 0);
        assert_eq!(st.window.len(), 30);
        let st = state_with(TrustTier::T2, 3, 3, 1);
        assert_eq!(st.violations_in_window, 1);
        let mut st = TrustState::new("a", TrustTier::T1);
        let e = st
            .record_outcome(sample(0, SampleKind::AutonomousSuccess, true, false), &TrustConfig::default())
            .unwrap_err();
        assert!(matches!(e, TrustError::KindTierMismatch { .. }));
    }

    #[test]
    fn window_is_capped() {
        let cfg = TrustConfig::default();
        let mut st = TrustState::new("a", TrustTier::T2);
        for i in 0..250 {
            st.record_outcome(sample(i, SampleKind::AutonomousSuccess, true, i == 10), &cfg).unwrap();
        }
        assert_eq!(st.window.len(), 200);
        // the violation at i = 10 was evicted
        assert_eq!(st.violations_in_window, 0);
    }

    #[test]
    fn boundaries_are_exact() {
        let cfg = TrustConfig::default();
        let cases = [
            (TrustTier::T0, 30, 25, false),
            (TrustTier::T0, 30, 26, true),
            (TrustTier::T1, 50, 44, false),
            (TrustTier::T1, 50, 45, true),
            (TrustTier::T2, 100, 94, false),
            (TrustTier::T2, 100, 95, true),
        ];
        for (tier, n, correct, promotes) in cases {
            let mut st = state_with(tier, n, correct, 0);
            let t = st.evaluate_transition(&cfg, TrustTier::T3, SimTime(1000));
            if promotes {
                assert_eq!(t, Transition::Promote { from: tier, to: tier.up() }, "{tier} {correct}/{n}");
                assert!(st.window.is_empty());
            } else {
                assert_eq!(t, Transition::Stay, "{tier} {correct}/{n}");
            }
        }
    }

    #[test]
    fn too_few_samples_stays() {
        let mut st = state_with(TrustTier::T0, 29, 29, 0);
        assert_eq!(st.evaluate_transition(&TrustConfig::default(), TrustTier::T3, SimTime(0)), Transition::Stay);
    }

    #[test]
    fn violation_demotes_before_promotion() {
        let cfg = TrustConfig::default();
        let mut st = state_with(TrustTier::T2, 100, 96, 1);
        let t = st.evaluate_transition(&cfg, TrustTier::T3, SimTime(5));
        assert_eq!(t, Transition::Demote { from: TrustTier::T2, to: TrustTier::T1 });
        assert!(st.window.is_empty());
        assert_eq!(st.violations_in_window, 0);
    }

    #[test]
    fn ceiling_blocks_promotion() {
        let mut st = state_with(TrustTier::T1, 50, 50, 0);
        assert_eq!(st.evaluate_transition(&TrustConfig::default(), TrustTier::T1, SimTime(0)), Transition::Stay);
        assert_eq!(
            st.evaluate_transition(&TrustConfig::default(), TrustTier::T2, SimTime(0)),
            Transition::Promote { from: TrustTier::T1, to: TrustTier::T2 }
        );
    }

    #[test]
    fn kill_switch_semantics() {
        let mut m = TrustManager::new(TrustConfig::default(), &["observability"], TrustTier::T3);
        let ev = m.kill_switch(true, "alice", SimTime(10));
        assert!(ev.is_some());
        assert!(m.kill_switch(true, "alice", SimTime(11)).is_none(), "double engage is idempotent");
        let st = m.state("observability").unwrap();
        assert_eq!(st.effective_tier(), TrustTier::T0);
        assert_eq!(
            authority(
                st.effective_tier(),
                DecisionStage::CanaryAnalysis,
                Action::Rollback,
                Verdict::Allow,
                &env(5.0, false)
            ),
            Authority::RecommendOnly
        );
        let ev = m.kill_switch(false, "alice", SimTime(20)).unwrap();
        assert_eq!(ev.operator_id.as_deref(), Some("alice"));
        let st = m.state("observability").unwrap();
        assert_eq!(st.tier, TrustTier::T0);
        assert_eq!(st.effective_tier(), TrustTier::T0);
    }
}
