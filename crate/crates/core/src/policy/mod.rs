//! Policy-as-code: versioned rule bundles and the proposal evaluator.
//!
//! Verdict precedence is fixed: any matching hard rule denies; otherwise any
//! matching confidence rule (including the built-in confidence floor)
//! requires approval; otherwise the proposal is allowed and soft-rule
//! matches are carried as warnings.

mod context;
mod predicate;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use context::{EvaluationContext, Environment, FieldValue, KNOWN_FIELDS};
pub use predicate::{BoolTest, CmpOp, Comparison, Membership, Operand, Predicate};

use crate::audit::{AuditEvent, AuditKind};
use crate::clock::SimTime;
use crate::decision::{
    validate_proposal, Action, AgentProposal, DecisionStage, Observation, PolicyOutcome, RuleKind, TriggeredRule, ValidationError,
    Verdict,
};
use crate::trust::TrustTier;
use predicate::Evaluator;

pub const CONFIDENCE_FLOOR_RULE: &str = "confidence_floor";
pub const DESTRUCTIVE_GATE_RULE: &str = "destructive_gate";

const DEFAULT_BUNDLE: &str = include_str!("../../policies/default.toml");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("parse_error: {0}")]
    Parse(String),
    #[error("inconsistent_rule_kind: rule `{rule_id}` of kind {kind:?} cannot have effect {effect:?}")]
    InconsistentRuleKind { rule_id: String, kind: RuleKind, effect: Effect },
    #[error("unknown_field_in_predicate: rule `{rule_id}` reads unknown field `{field}`")]
    UnknownFieldInPredicate { rule_id: String, field: String },
    #[error("unknown threshold `{name}` in rule `{rule_id}`")]
    UnknownThreshold { rule_id: String, name: String },
    #[error("duplicate rule id `{0}`")]
    DuplicateRule(String),
    #[error("rule `{0}`: force_action effect needs a catalog action")]
    BadForcedAction(String),
    #[error("invalid threshold: {0}")]
    BadThreshold(String),
    #[error("context_missing_field: rule `{rule_id}` needs `{field}`")]
    ContextMissingField { rule_id: String, field: String },
    #[error("rule `{rule_id}` compares `{field}` with a value of the wrong type")]
    TypeMismatch { rule_id: String, field: String },
    #[error("invalid proposal: {0}")]
    InvalidProposal(#[from] ValidationError),
}

impl PolicyError {
    pub fn code(&self) -> &'static str {
        match self {
            PolicyError::Parse(_) => "parse_error",
            PolicyError::InconsistentRuleKind { .. } => "inconsistent_rule_kind",
            PolicyError::UnknownFieldInPredicate { .. } => "unknown_field_in_predicate",
            PolicyError::UnknownThreshold { .. } => "unknown_threshold",
            PolicyError::DuplicateRule(_) => "duplicate_rule",
            PolicyError::BadForcedAction(_) => "bad_forced_action",
            PolicyError::BadThreshold(_) => "bad_threshold",
            PolicyError::ContextMissingField { .. } => "context_missing_field",
            PolicyError::TypeMismatch { .. } => "type_mismatch",
            PolicyError::InvalidProposal(_) => "invalid_proposal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub min_confidence: f64,
    pub retry_cap_preprod: u32,
    pub supervisor_retry_extra: u32,
    pub max_error_delta_pct: f64,
    pub latency_warn_ms: f64,
    pub max_canary_ramp_pct: f64,
    pub quarantine_budget: u32,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            min_confidence: 0.8,
            retry_cap_preprod: 2,
            supervisor_retry_extra: 1,
            max_error_delta_pct: 2.0,
            latency_warn_ms: 150.0,
            max_canary_ramp_pct: 20.0,
            quarantine_budget: 2,
        }
    }
}

impl Thresholds {
    pub const NAMES: &'static [&'static str] = &[
        "min_confidence",
        "retry_cap_preprod",
        "supervisor_retry_extra",
        "retry_cap_supervised",
        "max_error_delta_pct",
        "latency_warn_ms",
        "max_canary_ramp_pct",
        "quarantine_budget",
    ];

    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "min_confidence" => self.min_confidence,
            "retry_cap_preprod" => self.retry_cap_preprod as f64,
            "supervisor_retry_extra" => self.supervisor_retry_extra as f64,
            "retry_cap_supervised" => (self.retry_cap_preprod + self.supervisor_retry_extra) as f64,
            "max_error_delta_pct" => self.max_error_delta_pct,
            "latency_warn_ms" => self.latency_warn_ms,
            "max_canary_ramp_pct" => self.max_canary_ramp_pct,
            "quarantine_budget" => self.quarantine_budget as f64,
            _ => return None,
        })
    }

    fn validate(&self) -> Result<(), PolicyError> {
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return Err(PolicyError::BadThreshold("min_confidence must lie in [0, 1]".into()));
        }
        if !(0.0..=100.0).contains(&self.max_canary_ramp_pct) {
            return Err(PolicyError::BadThreshold("max_canary_ramp_pct must lie in [0, 100]".into()));
        }
        if self.max_error_delta_pct < 0.0 || self.latency_warn_ms < 0.0 {
            return Err(PolicyError::BadThreshold("thresholds must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    Deny,
    RequireApproval,
    Warn,
    ForceAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyRule {
    pub id: String,
    pub kind: RuleKind,
    pub effect: Effect,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub force_action: Option<Action>,
    /// Below this tier a force_action rule degrades to a plain deny.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub force_min_tier: Option<TrustTier>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<DecisionStage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actions: Option<Vec<Action>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub environment: Option<Environment>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub when: Option<Predicate>,
}

impl PolicyRule {
    fn applies(&self, p: &AgentProposal, ctx: &EvaluationContext) -> bool {
        self.stage.is_none_or(|s| s == p.stage)
            && self.actions.as_ref().is_none_or(|a| a.contains(&p.action))
            && self.environment.is_none_or(|e| e == ctx.environment)
    }

    fn validate(&self) -> Result<(), PolicyError> {
        let ok = matches!(
            (self.kind, self.effect),
            (RuleKind::Hard, Effect::Deny)
                | (RuleKind::Hard, Effect::ForceAction)
                | (RuleKind::Soft, Effect::Warn)
                | (RuleKind::Confidence, Effect::RequireApproval)
        );
        if !ok {
            return Err(PolicyError::InconsistentRuleKind {
                rule_id: self.id.clone(),
                kind: self.kind,
                effect: self.effect,
            });
        }
        if self.effect == Effect::ForceAction {
            let Some(a) = self.force_action else {
                return Err(PolicyError::BadForcedAction(self.id.clone()));
            };
            if self.stage.is_some_and(|s| !s.allows(a)) {
                return Err(PolicyError::BadForcedAction(self.id.clone()));
            }
        }
        if let Some(pred) = &self.when {
            let mut fields = Vec::new();
            pred.fields(&mut fields);
            if let Some(f) = fields.into_iter().find(|f| !KNOWN_FIELDS.contains(&f.as_str())) {
                return Err(PolicyError::UnknownFieldInPredicate {
                    rule_id: self.id.clone(),
                    field: f,
                });
            }
            let mut names = Vec::new();
            pred.thresholds(&mut names);
            if let Some(n) = names.into_iter().find(|n| !Thresholds::NAMES.contains(&n.as_str())) {
                return Err(PolicyError::UnknownThreshold {
                    rule_id: self.id.clone(),
                    name: n,
                });
            }
        }
        Ok(())
    }
}

/// The on-disk policy document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyDocument {
    pub version: String,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub rules: Vec<PolicyRule>,
}

/// An immutable, validated rule set. `version` is the declared version plus
/// a SHA-256 digest of the canonical rule content.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyBundle {
    pub version: String,
    pub declared_version: String,
    pub digest: String,
    pub thresholds: Thresholds,
    pub rules: Vec<PolicyRule>,
}

#[derive(Serialize)]
struct CanonicalContent<'a> {
    thresholds: &'a Thresholds,
    rules: &'a [PolicyRule],
}

impl PolicyBundle {
    pub fn from_document(doc: PolicyDocument) -> Result<Self, PolicyError> {
        doc.thresholds.validate()?;
        let mut seen = BTreeSet::new();
        for r in &doc.rules {
            if r.id == CONFIDENCE_FLOOR_RULE || !seen.insert(r.id.as_str()) {
                return Err(PolicyError::DuplicateRule(r.id.clone()));
            }
            r.validate()?;
        }
        let digest = content_digest(&doc.thresholds, &doc.rules);
        Ok(PolicyBundle {
            version: format!("{}+sha256.{}", doc.version, &digest[..12]),
            declared_version: doc.version,
            digest,
            thresholds: doc.thresholds,
            rules: doc.rules,
        })
    }

    /// Recomputes the digest; true iff it still matches the rule content.
    pub fn verify_digest(&self) -> bool {
        content_digest(&self.thresholds, &self.rules) == self.digest
    }

    pub fn to_document(&self) -> PolicyDocument {
        PolicyDocument {
            version: self.declared_version.clone(),
            thresholds: self.thresholds.clone(),
            rules: self.rules.clone(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_document()).expect("policy documents serialize")
    }

    /// Same rules and declared version, different thresholds.
    pub fn with_thresholds(&self, thresholds: Thresholds) -> Result<Self, PolicyError> {
        let mut doc = self.to_document();
        doc.thresholds = thresholds;
        PolicyBundle::from_document(doc)
    }

    pub fn without_soft_rules(&self) -> Result<Self, PolicyError> {
        let mut doc = self.to_document();
        doc.rules.retain(|r| r.kind != RuleKind::Soft);
        PolicyBundle::from_document(doc)
    }
}

fn content_digest(thresholds: &Thresholds, rules: &[PolicyRule]) -> String {
    let bytes = serde_json::to_vec(&CanonicalContent { thresholds, rules }).expect("rules serialize");
    hex::encode(Sha256::digest(&bytes))
}

pub fn load_bundle(source: &str) -> Result<PolicyBundle, PolicyError> {
    let doc: PolicyDocument = toml::from_str(source).map_err(|e| PolicyError::Parse(e.to_string()))?;
    PolicyBundle::from_document(doc)
}

pub fn default_bundle() -> PolicyBundle {
    load_bundle(DEFAULT_BUNDLE).expect("the shipped default bundle is valid")
}

pub fn default_bundle_source() -> &'static str {
    DEFAULT_BUNDLE
}

pub fn evaluate(p: &AgentProposal, ctx: &EvaluationContext, b: &PolicyBundle) -> Result<PolicyOutcome, PolicyError> {
    validate_proposal(p)?;
    let mut triggered = Vec::new();
    let mut hard = false;
    let mut approval = false;
    let mut forced = None;
    let mut destructive_rule_hit = false;

    for rule in b.rules.iter().filter(|r| r.applies(p, ctx)) {
        let mut ev = Evaluator {
            proposal: p,
            ctx,
            thresholds: &b.thresholds,
            rule_id: &rule.id,
            observations: Vec::new(),
        };
        let matched = match &rule.when {
            Some(pred) => ev.eval(pred)?,
            None => true,
        };
        if matched {
            match rule.kind {
                RuleKind::Hard => {
                    hard = true;
                    if forced.is_none() && rule.effect == Effect::ForceAction {
                        let tier_ok = rule.force_min_tier.is_none_or(|t| ctx.trust_tier >= t);
                        forced = rule.force_action.filter(|a| tier_ok && *a != p.action && p.stage.allows(*a));
                    }
                }
                RuleKind::Confidence => approval = true,
                RuleKind::Soft => {}
            }
            if rule.id == DESTRUCTIVE_GATE_RULE {
                destructive_rule_hit = true;
            }
        }
        triggered.push(TriggeredRule {
            rule_id: rule.id.clone(),
            kind: rule.kind,
            matched,
            observations: ev.observations,
        });
    }

    let below_floor = p.confidence < b.thresholds.min_confidence;
    approval |= below_floor;
    triggered.push(TriggeredRule {
        rule_id: CONFIDENCE_FLOOR_RULE.into(),
        kind: RuleKind::Confidence,
        matched: below_floor,
        observations: vec![crate::decision::Observation {
            field: "confidence".into(),
            observed: serde_json::json!(p.confidence),
            threshold: serde_json::json!(b.thresholds.min_confidence),
        }],
    });

    // destructive incident-response actions escalate even if a bundle
    // forgot to say so
    if p.stage == DecisionStage::IncidentResponse && ctx.destructive && !destructive_rule_hit {
        approval = true;
        triggered.push(TriggeredRule {
            rule_id: format!("{DESTRUCTIVE_GATE_RULE}_builtin"),
            kind: RuleKind::Confidence,
            matched: true,
            observations: Vec::new(),
        });
    }

    let verdict = if hard {
        Verdict::Deny
    } else if approval {
        Verdict::RequireApproval
    } else {
        Verdict::Allow
    };
    Ok(PolicyOutcome {
        verdict,
        triggered_rules: triggered,
        policy_version: b.version.clone(),
        forced_action: if verdict == Verdict::Deny { forced } else { None },
    })
}

/// Rule id recorded when a context cannot be evaluated.
pub const POLICY_ERROR_RULE: &str = "policy_error";

/// [`evaluate`], except that a context the bundle cannot evaluate escalates
/// to a human instead of failing.
pub fn evaluate_or_escalate(p: &AgentProposal, ctx: &EvaluationContext, b: &PolicyBundle) -> PolicyOutcome {
    evaluate(p, ctx, b).unwrap_or_else(|e| PolicyOutcome {
        verdict: Verdict::RequireApproval,
        triggered_rules: vec![TriggeredRule {
            rule_id: POLICY_ERROR_RULE.into(),
            kind: RuleKind::Confidence,
            matched: true,
            observations: vec![Observation {
                field: "error".into(),
                observed: serde_json::Value::String(e.code().into()),
                threshold: serde_json::Value::Null,
            }],
        }],
        policy_version: b.version.clone(),
        forced_action: None,
    })
}

/// Builds the structured audit event for a denial or escalation. ALLOW
/// outcomes produce no event.
pub fn audit_denial(o: &PolicyOutcome, p: &AgentProposal, subject: &str, at: SimTime) -> Option<AuditEvent> {
    let kind = match o.verdict {
        Verdict::Allow => return None,
        Verdict::Deny => AuditKind::PolicyDenial,
        Verdict::RequireApproval => AuditKind::PolicyEscalation,
    };
    let fired: Vec<&TriggeredRule> = o.matched().filter(|r| r.kind != RuleKind::Soft).collect();
    let mut ev = AuditEvent::new(kind, at, subject);
    ev.trace_id = Some(p.trace_id.clone());
    ev.rule_ids = fired.iter().map(|r| r.rule_id.clone()).collect();
    ev.evidence = p.evidence.clone();
    ev.rationale = p.rationale.clone();
    ev.details = serde_json::json!({
        "verdict": o.verdict,
        "stage": p.stage,
        "proposed_action": p.action,
        "confidence": p.confidence,
        "agent_id": p.agent_id,
        "policy_version": o.policy_version,
        "forced_action": o.forced_action,
        "observations": fired
            .iter()
            .map(|r| serde_json::json!({ "rule_id": r.rule_id, "values": r.observations }))
            .collect::<Vec<_>>(),
    });
    Some(ev)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn proposal(stage: DecisionStage, action: Action, confidence: f64) -> AgentProposal {
        AgentProposal {
            stage,
            action,
            confidence,
            evidence: vec!["error rate +3.2%".into()],
            rationale: "test".into(),
            trace_id: "abc123".into(),
            agent_id: "agent".into(),
            agent_version: "0.1.0".into(),
            model_id: "heuristic".into(),
        }
    }

    fn canary_ctx(tier: TrustTier) -> EvaluationContext {
        let mut c = EvaluationContext::new(Environment::Canary, tier);
        c.error_rate_delta_pp = Some(0.1);
        c.p95_latency_ms = Some(120.0);
        c.latency_delta_pct = Some(1.0);
        c.saturation_pct = Some(40.0);
        c.current_ramp_pct = 10.0;
        c
    }

    #[test]
    fn default_bundle_thresholds() {
        let b = default_bundle();
        assert_eq!(b.thresholds.min_confidence, 0.8);
        assert_eq!(b.thresholds.max_error_delta_pct, 2.0);
        assert_eq!(b.thresholds.retry_cap_preprod, 2);
        assert_eq!(b.thresholds.latency_warn_ms, 150.0);
        assert_eq!(b.thresholds.max_canary_ramp_pct, 20.0);
        assert!(b.version.starts_with("1.0.0+sha256."));
        assert!(b.verify_digest());
        for id in [
            "critical_cve_block",
            "error_delta_block",
            "retry_cap",
            "latency_warn",
            "ramp_cap",
            "noisy_alert_hold",
            "destructive_gate",
        ] {
            assert!(b.rules.iter().any(|r| r.id == id), "missing {id}");
        }
    }

    #[test]
    fn empty_rules_fall_through_to_floor() {
        let b = load_bundle("version = \"0.0.1\"\nrules = []\n").unwrap();
        let o = evaluate(
            &proposal(DecisionStage::CanaryAnalysis, Action::Promote, 0.5),
            &canary_ctx(TrustTier::T2),
            &b,
        )
        .unwrap();
        assert_eq!(o.verdict, Verdict::RequireApproval);
        assert_eq!(o.matched_rule_ids(), vec![CONFIDENCE_FLOOR_RULE.to_string()]);
    }

    #[test]
    fn soft_deny_is_inconsistent() {
        let src = r#"
version = "1"
[[rules]]
id = "x"
kind = "soft"
effect = "deny"
"#;
        assert_eq!(load_bundle(src).unwrap_err().code(), "inconsistent_rule_kind");
    }

    #[test]
    fn unknown_predicate_field_rejected() {
        let src = r#"
version = "1"
[[rules]]
id = "x"
kind = "hard"
effect = "deny"
when = { cmp = { field = "moon_phase", op = "gt", value = 1 } }
"#;
        assert_eq!(load_bundle(src).unwrap_err().code(), "unknown_field_in_predicate");
    }

    #[test]
    fn parse_error_reported() {
        assert_eq!(load_bundle("version = ").unwrap_err().code(), "parse_error");
        assert_eq!(load_bundle("version = \"1\"\nbogus = 1").unwrap_err().code(), "parse_error");
    }

    #[test]
    fn digest_tracks_content() {
        let a = default_bundle();
        let mut t = a.thresholds.clone();
        t.min_confidence = 0.95;
        let b = a.with_thresholds(t).unwrap();
        assert_ne!(a.version, b.version);
        assert_eq!(a.declared_version, b.declared_version);
        let round = load_bundle(&a.to_toml()).unwrap();
        assert_eq!(round.version, a.version);
    }

    #[test]
    fn confident_canary_rollback_allowed() {
        let b = default_bundle();
        let o = evaluate(
            &proposal(DecisionStage::CanaryAnalysis, Action::Rollback, 0.91),
            &canary_ctx(TrustTier::T2),
            &b,
        )
        .unwrap();
        assert_eq!(o.verdict, Verdict::Allow);
        assert!(o.is_consistent());
    }

    #[test]
    fn critical_cve_blocks() {
        let b = default_bundle();
        let mut ctx = EvaluationContext::new(Environment::Preprod, TrustTier::T3);
        ctx.critical_cve_count = 1;
        let o = evaluate(&proposal(DecisionStage::SecurityGate, Action::Allow, 1.0), &ctx, &b).unwrap();
        assert_eq!(o.verdict, Verdict::Deny);
        assert!(o.matched_rule_ids().contains(&"critical_cve_block".to_string()));
    }

    #[test]
    fn sub_floor_promote_needs_approval() {
        let b = default_bundle();
        let o = evaluate(
            &proposal(DecisionStage::CanaryAnalysis, Action::Promote, 0.79),
            &canary_ctx(TrustTier::T2),
            &b,
        )
        .unwrap();
        assert_eq!(o.verdict, Verdict::RequireApproval);
        assert_eq!(o.matched_rule_ids(), vec![CONFIDENCE_FLOOR_RULE.to_string()]);
        let o = evaluate(
            &proposal(DecisionStage::CanaryAnalysis, Action::Promote, 0.8),
            &canary_ctx(TrustTier::T2),
            &b,
        )
        .unwrap();
        assert_eq!(o.verdict, Verdict::Allow, "the floor is inclusive");
    }

    #[test]
    fn error_delta_denies_promote_with_forced_rollback_at_t2() {
        let b = default_bundle();
        let mut ctx = canary_ctx(TrustTier::T2);
        ctx.error_rate_delta_pp = Some(3.2);
        let p = proposal(DecisionStage::CanaryAnalysis, Action::Promote, 0.95);
        let o = evaluate(&p, &ctx, &b).unwrap();
        assert_eq!(o.verdict, Verdict::Deny);
        assert!(o.matched_rule_ids().contains(&"error_delta_block".to_string()));
        assert_eq!(o.forced_action, Some(Action::Rollback));
        ctx.trust_tier = TrustTier::T1;
        let o = evaluate(&p, &ctx, &b).unwrap();
        assert_eq!(o.verdict, Verdict::Deny);
        assert_eq!(o.forced_action, None);
    }

    #[test]
    fn missing_context_field_errors() {
        let b = default_bundle();
        let ctx = EvaluationContext::new(Environment::Canary, TrustTier::T2);
        let e = evaluate(&proposal(DecisionStage::CanaryAnalysis, Action::Promote, 0.95), &ctx, &b).unwrap_err();
        assert_eq!(e.code(), "context_missing_field");
    }

    #[test]
    fn retry_cap_and_supervisor_path() {
        let b = default_bundle();
        let p = proposal(DecisionStage::TestFailures, Action::Retry, 0.9);
        let mut ctx = EvaluationContext::new(Environment::Preprod, TrustTier::T2);
        ctx.retry_count_so_far = 1;
        assert_eq!(evaluate(&p, &ctx, &b).unwrap().verdict, Verdict::Allow);
        ctx.retry_count_so_far = 2;
        let o = evaluate(&p, &ctx, &b).unwrap();
        assert_eq!(o.verdict, Verdict::Deny);
        assert!(o.matched_rule_ids().contains(&"retry_cap".to_string()));
        ctx.supervisor_requested = true;
        let o = evaluate(&p, &ctx, &b).unwrap();
        assert_eq!(o.verdict, Verdict::RequireApproval);
        assert!(o.matched_rule_ids().contains(&"retry_supervisor_review".to_string()));
        ctx.retry_count_so_far = 3;
        assert_eq!(evaluate(&p, &ctx, &b).unwrap().verdict, Verdict::Deny);
    }

    #[test]
    fn noisy_alerts_hold() {
        let b = default_bundle();
        let mut ctx = canary_ctx(TrustTier::T3);
        ctx.noisy_alerts = true;
        let o = evaluate(&proposal(DecisionStage::DeploymentHealth, Action::AutoScale, 0.95), &ctx, &b).unwrap();
        assert_eq!(o.verdict, Verdict::Deny);
        assert_eq!(o.matched_rule_ids(), vec!["noisy_alert_hold".to_string()]);
    }

    #[test]
    fn latency_warning_does_not_change_verdict() {
        let b = default_bundle();
        let mut ctx = canary_ctx(TrustTier::T3);
        ctx.p95_latency_ms = Some(180.0);
        let o = evaluate(&proposal(DecisionStage::CanaryAnalysis, Action::Promote, 0.95), &ctx, &b).unwrap();
        assert_eq!(o.verdict, Verdict::Allow);
        assert_eq!(o.warnings(), vec!["latency_warn".to_string()]);
        assert!(o.is_consistent());
    }

    #[test]
    fn ramp_cap_escalates_t2_only() {
        let b = default_bundle();
        let mut ctx = canary_ctx(TrustTier::T2);
        ctx.current_ramp_pct = 30.0;
        let p = proposal(DecisionStage::CanaryAnalysis, Action::Rollback, 0.95);
        assert_eq!(evaluate(&p, &ctx, &b).unwrap().verdict, Verdict::RequireApproval);
        ctx.trust_tier = TrustTier::T3;
        assert_eq!(evaluate(&p, &ctx, &b).unwrap().verdict, Verdict::Allow);
    }

    #[test]
    fn destructive_always_escalates() {
        let b = load_bundle("version = \"1\"").unwrap();
        let mut ctx = EvaluationContext::new(Environment::Prod, TrustTier::T3);
        ctx.destructive = true;
        let o = evaluate(&proposal(DecisionStage::IncidentResponse, Action::Rollback, 1.0), &ctx, &b).unwrap();
        assert_eq!(o.verdict, Verdict::RequireApproval);
        let o = evaluate(&proposal(DecisionStage::IncidentResponse, Action::Rollback, 1.0), &ctx, &default_bundle())
            .unwrap();
        assert_eq!(o.verdict, Verdict::RequireApproval);
        assert_eq!(o.matched_rule_ids(), vec![DESTRUCTIVE_GATE_RULE.to_string()]);
    }

    #[test]
    fn audit_events() {
        let b = default_bundle();
        let mut ctx = EvaluationContext::new(Environment::Preprod, TrustTier::T2);
        ctx.critical_cve_count = 2;
        let p = proposal(DecisionStage::SecurityGate, Action::Allow, 0.85);
        let o = evaluate(&p, &ctx, &b).unwrap();
        let ev = audit_denial(&o, &p, "dec-1", SimTime(3)).unwrap();
        assert_eq!(ev.event, AuditKind::PolicyDenial);
        assert_eq!(ev.rule_ids, vec!["critical_cve_block".to_string()]);
        assert_eq!(ev.trace_id.as_deref(), Some("abc123"));
        let text = serde_json::to_string(&ev.details).unwrap();
        assert!(text.contains("critical_cve_count"), "{text}");

        let ok = evaluate(
            &proposal(DecisionStage::CanaryAnalysis, Action::Rollback, 0.91),
            &canary_ctx(TrustTier::T2),
            &b,
        )
        .unwrap();
        assert!(audit_denial(&ok, &p, "dec-2", SimTime(3)).is_none());

        let p = proposal(DecisionStage::CanaryAnalysis, Action::Promote, 0.79);
        let o = evaluate(&p, &canary_ctx(TrustTier::T2), &b).unwrap();
        let ev = audit_denial(&o, &p, "dec-3", SimTime(3)).unwrap();
        assert_eq!(ev.event, AuditKind::PolicyEscalation);
        assert_eq!(ev.rule_ids, vec![CONFIDENCE_FLOOR_RULE.to_string()]);
        let obs = &ev.details["observations"][0]["values"][0];
        assert_eq!(obs["observed"], serde_json::json!(0.79));
        assert_eq!(obs["threshold"], serde_json::json!(0.8));
    }
}
