use std::fmt;

use serde::{Deserialize, Serialize};

use crate::decision::AgentProposal;
use crate::trust::TrustTier;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Environment {
    Canary,
    Preprod,
    Prod,
}

impl Environment {
    pub fn as_str(self) -> &'static str {
        match self {
            Environment::Canary => "canary",
            Environment::Preprod => "preprod",
            Environment::Prod => "prod",
        }
    }
}

impl fmt::Display for Environment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Everything a policy predicate may look at besides the proposal itself.
///
/// Telemetry fields are optional: stages that have no telemetry leave them
/// unset, and a predicate that reads an unset field without a `present`
/// guard fails with `context_missing_field`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationContext {
    pub environment: Environment,
    pub trust_tier: TrustTier,
    #[serde(default)]
    pub error_rate_delta_pp: Option<f64>,
    #[serde(default)]
    pub p95_latency_ms: Option<f64>,
    #[serde(default)]
    pub latency_delta_pct: Option<f64>,
    #[serde(default)]
    pub saturation_pct: Option<f64>,
    #[serde(default)]
    pub critical_cve_count: u32,
    #[serde(default)]
    pub high_cve_count: u32,
    #[serde(default)]
    pub reachable_high_cve_count: u32,
    #[serde(default)]
    pub retry_count_so_far: u32,
    #[serde(default)]
    pub flakiness_probability: Option<f64>,
    #[serde(default)]
    pub coverage_changed: bool,
    #[serde(default)]
    pub quarantine_used: u32,
    #[serde(default)]
    pub current_ramp_pct: f64,
    #[serde(default)]
    pub noisy_alerts: bool,
    #[serde(default)]
    pub destructive: bool,
    #[serde(default)]
    pub supervisor_requested: bool,
    #[serde(default)]
    pub flag_regression: bool,
}

impl EvaluationContext {
    pub fn new(environment: Environment, trust_tier: TrustTier) -> Self {
        EvaluationContext {
            environment,
            trust_tier,
            error_rate_delta_pp: None,
            p95_latency_ms: None,
            latency_delta_pct: None,
            saturation_pct: None,
            critical_cve_count: 0,
            high_cve_count: 0,
            reachable_high_cve_count: 0,
            retry_count_so_far: 0,
            flakiness_probability: None,
            coverage_changed: false,
            quarantine_used: 0,
            current_ramp_pct: 0.0,
            noisy_alerts: false,
            destructive: false,
            supervisor_requested: false,
            flag_regression: false,
        }
    }

    /// Looks up a predicate field. `None` means the name is unknown;
    /// `Some(None)` means known but absent in this context.
    pub fn field(&self, name: &str, p: &AgentProposal) -> Option<Option<FieldValue>> {
        use FieldValue::*;
        let num = |x: f64| Some(Some(Num(x)));
        let opt = |x: Option<f64>| Some(x.map(Num));
        match name {
            "stage" => Some(Some(Str(p.stage.as_str().into()))),
            "action" => Some(Some(Str(p.action.as_str().into()))),
            "confidence" => num(p.confidence),
            "environment" => Some(Some(Str(self.environment.as_str().into()))),
            "trust_tier" => num(self.trust_tier.rank() as f64),
            "error_rate_delta_pp" => opt(self.error_rate_delta_pp),
            "p95_latency_ms" => opt(self.p95_latency_ms),
            "latency_delta_pct" => opt(self.latency_delta_pct),
            "saturation_pct" => opt(self.saturation_pct),
            "critical_cve_count" => num(self.critical_cve_count as f64),
            "high_cve_count" => num(self.high_cve_count as f64),
            "reachable_high_cve_count" => num(self.reachable_high_cve_count as f64),
            "retry_count_so_far" => num(self.retry_count_so_far as f64),
            "flakiness_probability" => opt(self.flakiness_probability),
            "coverage_changed" => Some(Some(Bool(self.coverage_changed))),
            "quarantine_used" => num(self.quarantine_used as f64),
            "current_ramp_pct" => num(self.current_ramp_pct),
            "noisy_alerts" => Some(Some(Bool(self.noisy_alerts))),
            "destructive" => Some(Some(Bool(self.destructive))),
            "supervisor_requested" => Some(Some(Bool(self.supervisor_requested))),
            "flag_regression" => Some(Some(Bool(self.flag_regression))),
            _ => None,
        }
    }
}

pub const KNOWN_FIELDS: &[&str] = &[
    "stage",
    "action",
    "confidence",
    "environment",
    "trust_tier",
    "error_rate_delta_pp",
    "p95_latency_ms",
    "latency_delta_pct",
    "saturation_pct",
    "critical_cve_count",
    "high_cve_count",
    "reachable_high_cve_count",
    "retry_count_so_far",
    "flakiness_probability",
    "coverage_changed",
    "quarantine_used",
    "current_ramp_pct",
    "noisy_alerts",
    "destructive",
    "supervisor_requested",
    "flag_regression",
];

#[derive(Debug, Clone, PartialEq)]
pub enum FieldValue {
    Num(f64),
    Bool(bool),
    Str(String),
}
