use serde::{Deserialize, Serialize};

use super::observability::{canary_risk, compute_kpi_deltas, Slo};
use super::{fmt_pct, AgentConfig, Draft};
use crate::decision::Action;
use crate::telemetry::TelemetryWindow;

/// KPIs of the traffic segment behind one flag, against the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagInput {
    pub flag_id: String,
    pub baseline: TelemetryWindow,
    pub segment: TelemetryWindow,
    pub slo: Slo,
    pub current_ramp_pct: f64,
}

/// Ramp after applying `action` at `current`.
pub fn flag_target(action: Action, current: f64, step: f64) -> f64 {
    match action {
        Action::RampUp => (current + step).min(100.0),
        Action::RampDown => (current - step).max(0.0),
        Action::Disable => 0.0,
        _ => current,
    }
}

pub fn flag_propose(f: &FlagInput, cfg: &AgentConfig) -> Draft {
    let d = match compute_kpi_deltas(&f.baseline, &f.segment) {
        Ok(d) => d,
        Err(e) => {
            return Draft {
                action: Action::RampDown,
                confidence: 0.0,
                evidence: vec![e.code().to_string()],
                rationale: format!("{}: segment analysis failed, human approval required", f.flag_id),
            }
        }
    };
    let r = canary_risk(&d, &f.slo, cfg);
    let action = if r < cfg.band_low {
        Action::RampUp
    } else if r < cfg.band_high {
        Action::RampDown
    } else {
        Action::Disable
    };
    let target = flag_target(action, f.current_ramp_pct, cfg.flag_step_pct);
    let rationale = if action == Action::RampUp && target == f.current_ramp_pct {
        format!("{}: already at {target:.0}%, nothing to ramp", f.flag_id)
    } else {
        format!("{}: ramp {:.0}% -> {target:.0}%", f.flag_id, f.current_ramp_pct)
    };
    Draft {
        action,
        confidence: cfg.band_confidence(r),
        evidence: vec![
            format!("segment error rate {}", fmt_pct(d.error_rate_delta_pp)),
            format!("segment p95 {:.0}ms", d.p95_latency_canary_ms),
            format!("risk {r:.2}"),
        ],
        rationale,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SimTime;
    use crate::telemetry::Population;

    fn win(pop: Population, err: f64) -> TelemetryWindow {
        TelemetryWindow {
            window_id: format!("w-{}", pop.as_str()),
            population: pop,
            start: SimTime(0),
            end: SimTime(3),
            request_count: 500,
            error_count: 0,
            error_rate: err,
            p50_ms: 60.0,
            p95_ms: 120.0,
            saturation: 45.0,
            alerts: vec![],
            latency_samples: vec![],
        }
    }

    fn input(ramp: f64, err_delta: f64) -> FlagInput {
        FlagInput {
            flag_id: "new-checkout".into(),
            baseline: win(Population::Baseline, 1.0),
            segment: win(Population::Canary, 1.0 + err_delta),
            slo: Slo::default(),
            current_ramp_pct: ramp,
        }
    }

    #[test]
    fn step_rules() {
        let cfg = AgentConfig::default();
        // risk 0.6 * (delta / 2)
        let d = flag_propose(&input(10.0, 1.0 / 3.0), &cfg);
        assert_eq!(d.action, Action::RampUp);
        assert_eq!(flag_target(d.action, 10.0, cfg.flag_step_pct), 20.0);
        let d = flag_propose(&input(10.0, 3.0), &cfg);
        assert_eq!(d.action, Action::Disable);
        let d = flag_propose(&input(40.0, 1.5), &cfg);
        assert_eq!(d.action, Action::RampDown);
        assert_eq!(flag_target(d.action, 40.0, 10.0), 30.0);
    }

    #[test]
    fn ramp_up_saturates() {
        let d = flag_propose(&input(100.0, 0.0), &AgentConfig::default());
        assert_eq!(d.action, Action::RampUp);
        assert_eq!(flag_target(d.action, 100.0, 10.0), 100.0);
        assert!(d.rationale.contains("nothing to ramp"));
    }
}
