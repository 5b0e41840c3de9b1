use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::observability::Slo;
use super::triage::TestHistory;
use super::{AgentError, Draft};
use crate::clock::SimTime;
use crate::decision::{Action, DecisionRecord, DecisionStage};
use crate::events::Incident;
use crate::telemetry::TelemetryWindow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IncidentPhase {
    Open,
    Resolved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentInput {
    pub incident_id: String,
    pub phase: IncidentPhase,
    pub window: TelemetryWindow,
    pub slo: Slo,
}

pub fn incident_propose(i: &IncidentInput) -> Option<Draft> {
    match i.phase {
        IncidentPhase::Open if i.window.p95_ms > i.slo.p95_slo_ms => Some(Draft {
            action: Action::RunRunbook,
            confidence: 0.9,
            evidence: vec![
                format!("p95 {:.0}ms", i.window.p95_ms),
                format!("SLO breach: latency > {:.0}ms", i.slo.p95_slo_ms),
            ],
            rationale: format!("{}: latency runbook", i.incident_id),
        }),
        IncidentPhase::Open => None,
        IncidentPhase::Resolved => Some(Draft {
            action: Action::OpenPostmortem,
            confidence: 0.95,
            evidence: vec![format!("{} resolved", i.incident_id)],
            rationale: format!("{}: write up the timeline and remediations", i.incident_id),
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub at: SimTime,
    /// `fault_onset`, `detection`, `decision` or `resolution`.
    pub kind: String,
    pub detail: String,
    pub decision_id: Option<String>,
    pub trace_ids: Vec<String>,
}

/// A machine-applyable change proposal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "change", rename_all = "snake_case")]
pub enum Remediation {
    Quarantine {
        suite_id: String,
        test_id: String,
        failing_runs: usize,
    },
    TightenThreshold {
        threshold: String,
        from: f64,
        to: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostmortemReport {
    pub incident_id: String,
    pub cause: String,
    pub run_id: Option<String>,
    pub timeline: Vec<TimelineEntry>,
    pub decision_ids: Vec<String>,
    pub mttr_minutes: Option<u64>,
    pub remediations: Vec<Remediation>,
}

fn observed_test(d: &DecisionRecord) -> Option<&str> {
    d.inputs.get("observation")?.get("test_id")?.as_str()
}

/// Builds the report for `incident_id`. Decisions linked to the incident
/// form the timeline; triage decisions of the same run feed the
/// repeat-offender check.
pub fn postmortem_build(
    incidents: &[Incident],
    decisions: &[DecisionRecord],
    history: &TestHistory,
    max_error_delta_pct: f64,
    incident_id: &str,
    repeat_offender_runs: usize,
) -> Result<PostmortemReport, AgentError> {
    let inc = incidents
        .iter()
        .find(|i| i.incident_id == incident_id)
        .ok_or_else(|| AgentError::UnknownIncident(incident_id.to_string()))?;
    let linked: Vec<&DecisionRecord> = decisions.iter().filter(|d| inc.decision_ids.contains(&d.id)).collect();

    let mut timeline = vec![TimelineEntry {
        at: inc.onset,
        kind: "fault_onset".into(),
        detail: inc.cause.clone(),
        decision_id: None,
        trace_ids: vec![],
    }];
    if let Some(at) = inc.detected_at {
        timeline.push(TimelineEntry {
            at,
            kind: "detection".into(),
            detail: format!("{incident_id} detected"),
            decision_id: None,
            trace_ids: vec![],
        });
    }
    for d in &linked {
        timeline.push(TimelineEntry {
            at: d.timestamp,
            kind: "decision".into(),
            detail: format!(
                "{} {} -> {} (final {})",
                d.stage.as_str(),
                d.proposed_action.as_str(),
                d.policy_outcome.as_str(),
                d.final_action.map_or("none", Action::as_str)
            ),
            decision_id: Some(d.id.clone()),
            trace_ids: d.trace_ids.clone(),
        });
    }
    if let Some(at) = inc.resolved_at {
        timeline.push(TimelineEntry {
            at,
            kind: "resolution".into(),
            detail: inc.resolving_action.clone().unwrap_or_default(),
            decision_id: None,
            trace_ids: vec![],
        });
    }
    // stable: ties keep onset, detection, decisions, resolution order
    timeline.sort_by_key(|e| e.at);

    let mut remediations = Vec::new();
    let mut seen = BTreeSet::new();
    let same_run = decisions.iter().filter(|d| {
        d.stage == DecisionStage::TestFailures
            && (inc.decision_ids.contains(&d.id)
                || inc.run_id.as_deref().is_some_and(|r| d.trace_ids.iter().any(|t| t.starts_with(r))))
    });
    for d in same_run {
        let Some(test) = observed_test(d) else { continue };
        let runs = history.failing_runs(test);
        if runs >= repeat_offender_runs && !history.quarantined.contains(test) && seen.insert(test.to_string()) {
            remediations.push(Remediation::Quarantine {
                suite_id: history.suite_id.clone(),
                test_id: test.to_string(),
                failing_runs: runs,
            });
        }
    }
    let prod_rollback = linked
        .iter()
        .any(|d| d.stage == DecisionStage::DeploymentHealth && d.final_action == Some(Action::Rollback));
    if prod_rollback {
        remediations.push(Remediation::TightenThreshold {
            threshold: "max_error_delta_pct".into(),
            from: max_error_delta_pct,
            to: (max_error_delta_pct * 0.75 * 100.0).round() / 100.0,
        });
    }

    Ok(PostmortemReport {
        incident_id: inc.incident_id.clone(),
        cause: inc.cause.clone(),
        run_id: inc.run_id.clone(),
        timeline,
        decision_ids: linked.iter().map(|d| d.id.clone()).collect(),
        mttr_minutes: inc.mttr_minutes(),
        remediations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::TestOutcome;
    use crate::decision::Verdict;

    fn record(id: &str, at: u64, stage: DecisionStage, action: Action, inputs: serde_json::Value) -> DecisionRecord {
        DecisionRecord {
            id: id.into(),
            timestamp: SimTime(at),
            stage,
            agent_version: "1.0.0".into(),
            model: "heuristic".into(),
            inputs,
            policy_version: "v".into(),
            proposed_action: action,
            confidence: 1.0,
            policy_outcome: Verdict::Allow,
            final_action: Some(action),
            human_overridden: false,
            rationale: String::new(),
            trace_ids: vec![format!("run-0001/{id}")],
        }
    }

    fn incident(decisions: &[&str]) -> Incident {
        Incident {
            incident_id: "inc-1".into(),
            cause: "fault-7".into(),
            run_id: Some("run-0001".into()),
            onset: SimTime(100),
            detected_at: Some(SimTime(103)),
            resolved_at: Some(SimTime(110)),
            resolving_action: Some("dec-2".into()),
            decision_ids: decisions.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn single_incident_timeline() {
        let decisions = vec![record(
            "dec-2",
            106,
            DecisionStage::DeploymentHealth,
            Action::Rollback,
            serde_json::json!({}),
        )];
        let r = postmortem_build(&[incident(&["dec-2"])], &decisions, &TestHistory::default(), 2.0, "inc-1", 3).unwrap();
        let kinds: Vec<&str> = r.timeline.iter().map(|e| e.kind.as_str()).collect();
        assert_eq!(kinds, ["fault_onset", "detection", "decision", "resolution"]);
        assert!(r.timeline.windows(2).all(|w| w[0].at <= w[1].at));
        assert_eq!(r.mttr_minutes, Some(10));
        assert_eq!(r.timeline[2].trace_ids, ["run-0001/dec-2"]);
        assert_eq!(
            r.remediations,
            [Remediation::TightenThreshold {
                threshold: "max_error_delta_pct".into(),
                from: 2.0,
                to: 1.5
            }]
        );
    }

    #[test]
    fn repeat_offender_gets_quarantined() {
        let mut h = TestHistory::new("frontend");
        for run in 0..4 {
            h.record(
                "flaky-01",
                TestOutcome {
                    run_id: format!("run-{run}"),
                    revision: run,
                    passed: run == 0,
                },
            );
        }
        let decisions = vec![record(
            "dec-1",
            101,
            DecisionStage::TestFailures,
            Action::Retry,
            serde_json::json!({"observation": {"test_id": "flaky-01"}}),
        )];
        let r = postmortem_build(&[incident(&["dec-1"])], &decisions, &h, 2.0, "inc-1", 3).unwrap();
        assert_eq!(
            r.remediations,
            [Remediation::Quarantine {
                suite_id: "frontend".into(),
                test_id: "flaky-01".into(),
                failing_runs: 3
            }]
        );
    }

    #[test]
    fn unknown_incident() {
        let e = postmortem_build(&[], &[], &TestHistory::default(), 2.0, "inc-1", 3).unwrap_err();
        assert_eq!(e.code(), "unknown_incident");
    }

    #[test]
    fn runbook_only_on_slo_breach() {
        let mut w = TelemetryWindow {
            window_id: "w".into(),
            population: crate::telemetry::Population::Baseline,
            start: SimTime(0),
            end: SimTime(3),
            request_count: 10,
            error_count: 0,
            error_rate: 0.0,
            p50_ms: 80.0,
            p95_ms: 150.0,
            saturation: 45.0,
            alerts: vec![],
            latency_samples: vec![],
        };
        let mut i = IncidentInput {
            incident_id: "inc-1".into(),
            phase: IncidentPhase::Open,
            window: w.clone(),
            slo: Slo::default(),
        };
        assert!(incident_propose(&i).is_none());
        w.p95_ms = 260.0;
        i.window = w;
        assert_eq!(incident_propose(&i).unwrap().action, Action::RunRunbook);
        i.phase = IncidentPhase::Resolved;
        assert_eq!(incident_propose(&i).unwrap().action, Action::OpenPostmortem);
    }
}
