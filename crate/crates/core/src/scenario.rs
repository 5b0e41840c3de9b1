//! Scenario files: workload, service and suite profiles, chaos mixture,
//! human latency model and the trust phase plan.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentConfig, Finding, Severity, Slo};
use crate::clock::{SimTime, MINUTES_PER_DAY, MINUTES_PER_HOUR};
use crate::rng::Seed;
use crate::telemetry::{schedule_chaos, ChaosConfig, FaultSpec, ServiceProfile, SuiteProfile, TelemetryError};
use crate::trust::{TrustConfig, TrustTier};

pub const CANONICAL_SCENARIO: &str = include_str!("../scenarios/canonical.toml");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("scenario_invalid: {0}")]
    Parse(String),
    #[error("scenario_invalid: {0}")]
    Invalid(String),
    #[error("scenario_invalid: {0}")]
    Chaos(#[from] TelemetryError),
    #[error("scenario_invalid: cannot read {path}: {reason}")]
    Io { path: String, reason: String },
}

impl ScenarioError {
    pub fn code(&self) -> &'static str {
        match self {
            ScenarioError::Chaos(TelemetryError::RateExceedsCap(_)) => "rate_exceeds_cap",
            _ => "scenario_invalid",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CommitSchedule {
    pub first_at_min: u64,
    pub interval_min: u64,
    /// Share of commits that ship behind a feature flag.
    pub flag_share: f64,
    /// Per-commit chance of a non-critical security finding.
    pub finding_rate: f64,
    pub critical_finding_rate: f64,
    /// Share of high findings that are reachable.
    pub reachable_share: f64,
    pub coverage_change_rate: f64,
}

impl Default for CommitSchedule {
    fn default() -> Self {
        CommitSchedule {
            first_at_min: 0,
            interval_min: 90,
            flag_share: 0.25,
            finding_rate: 0.08,
            critical_finding_rate: 0.01,
            reachable_share: 0.5,
            coverage_change_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageTimings {
    pub build_min: u64,
    pub tests_min: u64,
    pub retry_min: u64,
    pub security_min: u64,
    pub canary_initial_ramp_pct: f64,
    pub canary_step_pct: f64,
    pub canary_step_every_min: u64,
    pub canary_max_ramp_pct: f64,
    pub soak_min: u64,
    /// Ticks merged into one observation window.
    pub observation_ticks: u64,
    pub flag_initial_ramp_pct: f64,
    pub flag_eval_every_min: u64,
    /// A promotion younger than this may still be rolled back in prod.
    pub prod_rollback_window_min: u64,
    /// Minutes after a critical CVE disclosure lands during a canary.
    pub late_cve_offset_min: u64,
}

impl Default for StageTimings {
    fn default() -> Self {
        StageTimings {
            build_min: 8,
            tests_min: 12,
            retry_min: 6,
            security_min: 4,
            canary_initial_ramp_pct: 10.0,
            canary_step_pct: 10.0,
            canary_step_every_min: 15,
            canary_max_ramp_pct: 20.0,
            soak_min: 30,
            observation_ticks: 3,
            flag_initial_ramp_pct: 10.0,
            flag_eval_every_min: 10,
            prod_rollback_window_min: 180,
            late_cve_offset_min: 10,
        }
    }
}

/// How long humans take. The baseline arm runs entirely on this model; the
/// augmented arm uses it wherever an agent only recommends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HumanModel {
    /// Onset to a human noticing an unprompted problem.
    pub detection_min: u64,
    /// Noticing to acting.
    pub action_min: u64,
    /// Manual gate review (security findings, test failures once noticed).
    pub approval_min: u64,
    /// Manual production promotion gate after the soak.
    pub promotion_gate_min: u64,
    /// Time for an operator to answer an approval request.
    pub approval_response_min: u64,
    pub approval_window_min: u64,
    /// Whether simulated operators answer approval requests at all.
    pub auto_respond: bool,
}

impl Default for HumanModel {
    fn default() -> Self {
        HumanModel {
            detection_min: 20,
            action_min: 15,
            approval_min: 15,
            promotion_gate_min: 15,
            approval_response_min: 14,
            approval_window_min: 15,
            auto_respond: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrustPhase {
    pub from_hour: u64,
    pub ceiling: TrustTier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrustPlan {
    pub initial_tier: TrustTier,
    /// Per-agent starting tiers that override `initial_tier`.
    pub initial_tiers: BTreeMap<String, TrustTier>,
    pub phases: Vec<TrustPhase>,
    pub criteria: TrustConfig,
}

impl Default for TrustPlan {
    fn default() -> Self {
        TrustPlan {
            initial_tier: TrustTier::T0,
            initial_tiers: BTreeMap::new(),
            phases: vec![
                TrustPhase {
                    from_hour: 0,
                    ceiling: TrustTier::T0,
                },
                TrustPhase {
                    from_hour: 84,
                    ceiling: TrustTier::T1,
                },
                TrustPhase {
                    from_hour: 168,
                    ceiling: TrustTier::T2,
                },
            ],
            criteria: TrustConfig::default(),
        }
    }
}

impl TrustPlan {
    /// Promotion ceiling in force at `t`.
    pub fn ceiling(&self, t: SimTime) -> TrustTier {
        self.phases
            .iter()
            .take_while(|p| p.from_hour * MINUTES_PER_HOUR <= t.minutes())
            .last()
            .map_or(TrustTier::T0, |p| p.ceiling)
    }

    pub fn initial(&self, agent_id: &str) -> TrustTier {
        self.initial_tiers.get(agent_id).copied().unwrap_or(self.initial_tier)
    }
}

/// A critical CVE disclosed while a commit's change is in canary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LateCve {
    pub epoch: u64,
    pub cve_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KillSwitchEvent {
    pub at_min: u64,
    pub engage: bool,
    #[serde(default = "default_operator")]
    pub operator_id: String,
}

fn default_operator() -> String {
    "scenario".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub horizon_days: f64,
    pub commits: CommitSchedule,
    pub stages: StageTimings,
    pub human: HumanModel,
    pub trust: TrustPlan,
    pub service: ServiceProfile,
    pub slo: Slo,
    pub suite: SuiteProfile,
    pub chaos: ChaosConfig,
    pub agents: AgentConfig,
    /// Faults added to the seeded chaos schedule.
    pub faults: Vec<FaultSpec>,
    pub late_cves: Vec<LateCve>,
    pub kill_switch: Vec<KillSwitchEvent>,
    /// Write per-tick telemetry windows to the run directory.
    pub export_telemetry: bool,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            name: "default".into(),
            seed: 42,
            horizon_days: 14.0,
            commits: CommitSchedule::default(),
            stages: StageTimings::default(),
            human: HumanModel::default(),
            trust: TrustPlan::default(),
            service: ServiceProfile::default(),
            slo: Slo::default(),
            suite: SuiteProfile::default(),
            chaos: ChaosConfig::default(),
            agents: AgentConfig::default(),
            faults: Vec::new(),
            late_cves: Vec::new(),
            kill_switch: Vec::new(),
            export_telemetry: false,
        }
    }
}

/// One commit slot and what it carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitPlan {
    pub epoch: u64,
    pub commit_id: String,
    pub at: SimTime,
    pub flag_id: Option<String>,
    pub findings: Vec<Finding>,
    pub coverage_changed: bool,
    pub late_cve: Option<String>,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenarios serialize")
    }

    pub fn canonical() -> Self {
        Self::parse(CANONICAL_SCENARIO).expect("canonical scenario validates")
    }

    pub fn horizon(&self) -> SimTime {
        SimTime((self.horizon_days * MINUTES_PER_DAY as f64).round() as u64)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::Invalid(m.into()));
        if self.horizon_days.is_nan() || self.horizon_days <= 0.0 {
            return bad("horizon_days must be positive");
        }
        if self.commits.interval_min == 0 {
            return bad("commits.interval_min must be positive");
        }
        for (name, v) in [
            ("flag_share", self.commits.flag_share),
            ("finding_rate", self.commits.finding_rate),
            ("critical_finding_rate", self.commits.critical_finding_rate),
            ("reachable_share", self.commits.reachable_share),
            ("coverage_change_rate", self.commits.coverage_change_rate),
            ("chaos.latent_fraction", self.chaos.latent_fraction),
            ("chaos.flag_fraction", self.chaos.flag_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ScenarioError::Invalid(format!("{name} must be in [0, 1]")));
            }
        }
        let st = &self.stages;
        if st.soak_min == 0 || st.observation_ticks == 0 || st.tests_min == 0 || st.flag_eval_every_min == 0 {
            return bad("stage durations must be positive");
        }
        if !(0.0 < st.canary_initial_ramp_pct && st.canary_initial_ramp_pct <= st.canary_max_ramp_pct && st.canary_max_ramp_pct <= 100.0)
        {
            return bad("canary ramps must satisfy 0 < initial <= max <= 100");
        }
        if self.human.approval_window_min == 0 {
            return bad("human.approval_window_min must be positive");
        }
        if self.trust.phases.windows(2).any(|w| w[0].from_hour >= w[1].from_hour) {
            return bad("trust.phases must be strictly increasing in from_hour");
        }
        for id in self.trust.initial_tiers.keys() {
            if !crate::agents::AGENT_IDS.contains(&id.as_str()) {
                return Err(ScenarioError::Invalid(format!("unknown agent `{id}` in trust.initial_tiers")));
            }
        }
        if self.service.requests_per_minute == 0 || self.service.latency_median_ms <= 0.0 {
            return bad("service profile needs traffic and a positive latency median");
        }
        if !(self.slo.error_budget_pp > 0.0 && self.slo.p95_slo_ms > 0.0) {
            return bad("slo values must be positive");
        }
        if self.agents.band_low.is_nan() || self.agents.band_high.is_nan() || self.agents.band_low >= self.agents.band_high {
            return bad("agents.band_low must be below agents.band_high");
        }
        if self.chaos.rate > crate::telemetry::MAX_CHAOS_RATE || self.chaos.rate < 0.0 {
            return Err(TelemetryError::RateExceedsCap(self.chaos.rate).into());
        }
        for f in &self.faults {
            f.validate()?;
            if f.epoch >= self.epochs() {
                return Err(ScenarioError::Invalid(format!("fault {} targets a missing epoch", f.fault_id)));
            }
        }
        Ok(())
    }

    /// Number of commit slots inside the horizon.
    pub fn epochs(&self) -> u64 {
        let h = self.horizon().minutes();
        if self.commits.first_at_min >= h {
            0
        } else {
            (h - self.commits.first_at_min).div_ceil(self.commits.interval_min)
        }
    }

    pub fn commit_plans(&self) -> Vec<CommitPlan> {
        let seed = Seed(self.seed);
        let c = &self.commits;
        (0..self.epochs())
            .map(|epoch| {
                let mut rng = seed.stream("workload", &[epoch]);
                let flagged = rng.random_bool(c.flag_share);
                let mut findings = Vec::new();
                if rng.random_bool(c.critical_finding_rate) {
                    findings.push(Finding {
                        cve_id: format!("CVE-SIM-{epoch:04}-C"),
                        severity: Severity::Critical,
                        reachable: true,
                    });
                }
                if rng.random_bool(c.finding_rate) {
                    let severity = [Severity::Low, Severity::Med, Severity::High][rng.random_range(0..3)];
                    findings.push(Finding {
                        cve_id: format!("CVE-SIM-{epoch:04}-F"),
                        severity,
                        reachable: rng.random_bool(c.reachable_share),
                    });
                }
                CommitPlan {
                    epoch,
                    commit_id: format!("c-{epoch:04}"),
                    at: SimTime(c.first_at_min + epoch * c.interval_min),
                    flag_id: flagged.then(|| format!("flag-{epoch:04}")),
                    findings,
                    coverage_changed: rng.random_bool(c.coverage_change_rate),
                    late_cve: self.late_cves.iter().find(|l| l.epoch == epoch).map(|l| l.cve_id.clone()),
                }
            })
            .collect()
    }

    /// Seeded chaos schedule plus the scenario's explicit faults.
    pub fn fault_schedule(&self) -> Result<Vec<FaultSpec>, ScenarioError> {
        let mut faults = schedule_chaos(
            &self.chaos,
            self.epochs(),
            self.commits.interval_min,
            self.horizon().minutes(),
            &self.suite,
            Seed(self.seed),
        )?;
        faults.extend(self.faults.iter().cloned());
        faults.sort_by(|a, b| (a.epoch, a.onset_offset_min, &a.fault_id).cmp(&(b.epoch, b.onset_offset_min, &b.fault_id)));
        Ok(faults)
    }
}
