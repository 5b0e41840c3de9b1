use serde::{Deserialize, Serialize};

use super::{fmt_pct, AgentConfig, AgentError, Draft};
use crate::decision::Action;
use crate::telemetry::TelemetryWindow;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Slo {
    /// Error-rate delta (pp) that counts as a fully spent budget.
    pub error_budget_pp: f64,
    pub p95_slo_ms: f64,
}

impl Default for Slo {
    fn default() -> Self {
        Slo {
            error_budget_pp: 2.0,
            p95_slo_ms: 200.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KpiDeltas {
    pub error_rate_delta_pp: f64,
    pub p95_latency_baseline_ms: f64,
    pub p95_latency_canary_ms: f64,
    pub latency_delta_pct: f64,
    pub saturation_delta_pp: f64,
    pub sample_sizes: (u64, u64),
}

pub fn compute_kpi_deltas(baseline: &TelemetryWindow, canary: &TelemetryWindow) -> Result<KpiDeltas, AgentError> {
    for w in [baseline, canary] {
        if w.request_count == 0 {
            return Err(AgentError::EmptyWindow(w.window_id.clone()));
        }
    }
    if (baseline.start, baseline.end) != (canary.start, canary.end) {
        return Err(AgentError::MisalignedWindows(
            baseline.window_id.clone(),
            canary.window_id.clone(),
        ));
    }
    let latency_delta_pct = if baseline.p95_ms > 0.0 {
        (canary.p95_ms - baseline.p95_ms) / baseline.p95_ms * 100.0
    } else {
        0.0
    };
    Ok(KpiDeltas {
        error_rate_delta_pp: canary.error_rate - baseline.error_rate,
        p95_latency_baseline_ms: baseline.p95_ms,
        p95_latency_canary_ms: canary.p95_ms,
        latency_delta_pct,
        saturation_delta_pp: canary.saturation - baseline.saturation,
        sample_sizes: (baseline.request_count, canary.request_count),
    })
}

pub fn canary_risk(d: &KpiDeltas, slo: &Slo, cfg: &AgentConfig) -> f64 {
    let err = (d.error_rate_delta_pp / slo.error_budget_pp).max(0.0);
    let lat = ((d.p95_latency_canary_ms - slo.p95_slo_ms) / slo.p95_slo_ms).max(0.0);
    (cfg.risk_weight_error * err + cfg.risk_weight_latency * lat).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanaryInput {
    pub run_id: String,
    pub baseline: TelemetryWindow,
    pub canary: TelemetryWindow,
    pub slo: Slo,
    /// Hard error-delta limit (pp) from the active bundle.
    pub hard_delta_pct: f64,
    /// A feature flag is tagged as the likely cause of the regression.
    pub flag_regression: bool,
    pub current_ramp_pct: f64,
}

fn kpi_evidence(d: &KpiDeltas, slo: &Slo) -> Vec<String> {
    let mut ev = vec![
        format!("error rate {}", fmt_pct(d.error_rate_delta_pp)),
        format!(
            "p95 {:.0}ms vs baseline {:.0}ms ({})",
            d.p95_latency_canary_ms,
            d.p95_latency_baseline_ms,
            fmt_pct(d.latency_delta_pct)
        ),
    ];
    if d.p95_latency_canary_ms > slo.p95_slo_ms {
        ev.push(format!("SLO breach: latency > {:.0}ms", slo.p95_slo_ms));
    }
    ev
}

/// Canary decision from precomputed deltas.
pub fn decide_canary_deltas(d: &KpiDeltas, slo: &Slo, hard_delta_pct: f64, flag_regression: bool, cfg: &AgentConfig) -> Draft {
    let mut evidence = kpi_evidence(d, slo);
    if d.error_rate_delta_pp > hard_delta_pct {
        return Draft {
            action: Action::Rollback,
            confidence: 1.0,
            evidence,
            rationale: format!("error delta exceeds the {hard_delta_pct}pp hard limit"),
        };
    }
    let r = canary_risk(d, slo, cfg);
    evidence.push(format!("risk {r:.2}"));
    let action = if r < cfg.band_low {
        Action::Promote
    } else if r < cfg.band_high {
        if flag_regression {
            Action::TuneFlags
        } else {
            Action::Pause
        }
    } else {
        Action::Rollback
    };
    Draft {
        action,
        confidence: cfg.band_confidence(r),
        evidence,
        rationale: format!("risk {r:.2} maps to {}", action.as_str()),
    }
}

pub fn decide_canary(c: &CanaryInput, cfg: &AgentConfig) -> Draft {
    match compute_kpi_deltas(&c.baseline, &c.canary) {
        Ok(d) => decide_canary_deltas(&d, &c.slo, c.hard_delta_pct, c.flag_regression, cfg),
        Err(e) => Draft {
            action: Action::Pause,
            confidence: 0.0,
            evidence: vec![e.code().to_string()],
            rationale: format!("analysis failed, human approval required: {e}"),
        },
    }
}

/// Production health of the serving fleet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthInput {
    pub window: TelemetryWindow,
    pub nominal_error_rate_pct: f64,
    pub hard_delta_pct: f64,
    /// Run whose promotion is still eligible for a production rollback.
    pub promoted_run: Option<String>,
}

pub fn health_propose(h: &HealthInput, cfg: &AgentConfig) -> Option<Draft> {
    let w = &h.window;
    let excess = w.error_rate - h.nominal_error_rate_pct;
    if excess > h.hard_delta_pct {
        if let Some(run) = &h.promoted_run {
            return Some(Draft {
                action: Action::Rollback,
                confidence: 1.0,
                evidence: vec![
                    format!("prod error rate {}", fmt_pct(excess)),
                    format!("recent promotion {run}"),
                ],
                rationale: format!("production errors above the {}pp hard limit after {run}", h.hard_delta_pct),
            });
        }
    }
    if w.saturation >= cfg.saturation_pct {
        return Some(Draft {
            action: Action::AutoScale,
            confidence: (0.8 + (w.saturation - cfg.saturation_pct) / 50.0).clamp(0.0, 1.0),
            evidence: vec![format!("saturation {:.1}%", w.saturation)],
            rationale: "fleet saturated".into(),
        });
    }
    if w.alerts.len() >= cfg.alert_count {
        return Some(Draft {
            action: Action::AutoScale,
            confidence: (0.5 + 0.1 * w.alerts.len() as f64).clamp(0.0, 1.0),
            evidence: w.alerts.iter().map(|a| a.alert_id.clone()).collect(),
            rationale: format!("{} alerts firing", w.alerts.len()),
        });
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SimTime;
    use crate::telemetry::{Alert, Population};

    fn win(id: &str, pop: Population, err: f64, p95: f64) -> TelemetryWindow {
        TelemetryWindow {
            window_id: id.into(),
            population: pop,
            start: SimTime(0),
            end: SimTime(3),
            request_count: 1000,
            error_count: (err * 10.0) as u64,
            error_rate: err,
            p50_ms: p95 / 2.0,
            p95_ms: p95,
            saturation: 45.0,
            alerts: vec![],
            latency_samples: vec![],
        }
    }

    fn deltas(err: f64, canary_p95: f64) -> KpiDeltas {
        KpiDeltas {
            error_rate_delta_pp: err,
            p95_latency_baseline_ms: 100.0,
            p95_latency_canary_ms: canary_p95,
            latency_delta_pct: canary_p95 - 100.0,
            saturation_delta_pp: 0.0,
            sample_sizes: (1, 1),
        }
    }

    #[test]
    fn kpi_delta_examples() {
        let b = win("b", Population::Baseline, 1.0, 100.0);
        let d = compute_kpi_deltas(&b, &win("c", Population::Canary, 4.2, 220.0)).unwrap();
        assert!((d.error_rate_delta_pp - 3.2).abs() < 1e-9);
        assert!((d.latency_delta_pct - 120.0).abs() < 1e-9);
        assert!(d.p95_latency_canary_ms > Slo::default().p95_slo_ms);
        let z = compute_kpi_deltas(&b, &b).unwrap();
        assert_eq!((z.error_rate_delta_pp, z.latency_delta_pct, z.saturation_delta_pp), (0.0, 0.0, 0.0));
    }

    #[test]
    fn kpi_delta_errors() {
        let b = win("b", Population::Baseline, 1.0, 100.0);
        let mut empty = win("c", Population::Canary, 0.0, 0.0);
        empty.request_count = 0;
        assert_eq!(compute_kpi_deltas(&b, &empty).unwrap_err().code(), "empty_window");
        let mut late = win("c", Population::Canary, 1.0, 100.0);
        late.start = SimTime(1);
        assert_eq!(compute_kpi_deltas(&b, &late).unwrap_err().code(), "misaligned_windows");
    }

    #[test]
    fn risk_examples() {
        let (slo, cfg) = (Slo::default(), AgentConfig::default());
        assert_eq!(canary_risk(&deltas(-1.0, 100.0), &slo, &cfg), 0.0);
        assert_eq!(canary_risk(&deltas(3.2, 150.0), &slo, &cfg), 0.96);
        assert!((canary_risk(&deltas(1.0, 200.0), &slo, &cfg) - 0.30).abs() < 1e-12);
    }

    #[test]
    fn canary_examples() {
        let (slo, cfg) = (Slo::default(), AgentConfig::default());
        let d = decide_canary_deltas(&deltas(3.2, 150.0), &slo, 2.0, false, &cfg);
        assert_eq!((d.action, d.confidence), (Action::Rollback, 1.0));
        assert!(d.evidence.contains(&"error rate +3.2%".to_string()));
        let d = decide_canary_deltas(&deltas(0.0, 100.0), &slo, 2.0, false, &cfg);
        assert_eq!((d.action, d.confidence), (Action::Promote, 1.0));
        // risk 0.45 from the error term alone: 0.6 * 1.5 / 2
        let d = decide_canary_deltas(&deltas(1.5, 100.0), &slo, 2.0, false, &cfg);
        assert_eq!(d.action, Action::Pause);
        assert!((d.confidence - 0.8).abs() < 1e-9);
        let d = decide_canary_deltas(&deltas(1.5, 100.0), &slo, 2.0, true, &cfg);
        assert_eq!(d.action, Action::TuneFlags);
    }

    #[test]
    fn slo_breach_in_evidence() {
        let d = decide_canary_deltas(&deltas(0.0, 220.0), &Slo::default(), 2.0, false, &AgentConfig::default());
        assert!(d.evidence.contains(&"SLO breach: latency > 200ms".to_string()));
    }

    #[test]
    fn failed_analysis_asks_for_a_human() {
        let b = win("b", Population::Baseline, 1.0, 100.0);
        let mut c = win("c", Population::Canary, 0.0, 0.0);
        c.request_count = 0;
        let input = CanaryInput {
            run_id: "run-1".into(),
            baseline: b,
            canary: c,
            slo: Slo::default(),
            hard_delta_pct: 2.0,
            flag_regression: false,
            current_ramp_pct: 10.0,
        };
        let d = decide_canary(&input, &AgentConfig::default());
        assert_eq!((d.action, d.confidence), (Action::Pause, 0.0));
    }

    #[test]
    fn health_rules() {
        let cfg = AgentConfig::default();
        let mut w = win("p", Population::Baseline, 1.0, 100.0);
        let mut h = HealthInput {
            window: w.clone(),
            nominal_error_rate_pct: 1.0,
            hard_delta_pct: 2.0,
            promoted_run: Some("run-3".into()),
        };
        assert!(health_propose(&h, &cfg).is_none());
        h.window.error_rate = 4.0;
        assert_eq!(health_propose(&h, &cfg).unwrap().action, Action::Rollback);
        h.promoted_run = None;
        assert!(health_propose(&h, &cfg).is_none());
        w.saturation = 90.0;
        h.window = w.clone();
        let d = health_propose(&h, &cfg).unwrap();
        assert_eq!(d.action, Action::AutoScale);
        assert!((d.confidence - 0.9).abs() < 1e-9);
        w.saturation = 45.0;
        w.alerts = (0..4).map(|i| Alert { alert_id: format!("a{i}"), noisy: true }).collect();
        h.window = w;
        let d = health_propose(&h, &cfg).unwrap();
        assert_eq!(d.action, Action::AutoScale);
        assert!((d.confidence - 0.9).abs() < 1e-9);
    }
}
