use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{AgentConfig, AgentError, Draft};
use crate::decision::Action;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub run_id: String,
    pub revision: u64,
    pub passed: bool,
}

/// Per-test outcome history of one suite, in run order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TestHistory {
    pub suite_id: String,
    pub tests: BTreeMap<String, Vec<TestOutcome>>,
    pub quarantined: BTreeSet<String>,
}

impl TestHistory {
    pub fn new(suite_id: impl Into<String>) -> Self {
        TestHistory {
            suite_id: suite_id.into(),
            ..Default::default()
        }
    }

    pub fn record(&mut self, test_id: &str, outcome: TestOutcome) {
        self.tests.entry(test_id.to_string()).or_default().push(outcome);
    }

    pub fn outcomes(&self, test_id: &str) -> &[TestOutcome] {
        self.tests.get(test_id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Distinct runs in which the test failed at least once.
    pub fn failing_runs(&self, test_id: &str) -> usize {
        self.outcomes(test_id)
            .iter()
            .filter(|o| !o.passed)
            .map(|o| o.run_id.as_str())
            .collect::<BTreeSet<_>>()
            .len()
    }
}

/// `(F + 1) / (P + 2)` over consecutive outcome pairs at the same revision.
pub fn flakiness_of(outcomes: &[TestOutcome]) -> (f64, usize, usize) {
    let mut pairs = 0;
    let mut flips = 0;
    for w in outcomes.windows(2) {
        if w[0].revision == w[1].revision {
            pairs += 1;
            flips += (w[0].passed != w[1].passed) as usize;
        }
    }
    ((flips + 1) as f64 / (pairs + 2) as f64, pairs, flips)
}

pub fn flakiness_probability(h: &TestHistory, test_id: &str) -> Result<f64, AgentError> {
    let o = h.outcomes(test_id);
    if o.is_empty() {
        return Err(AgentError::UnknownTest(test_id.to_string()));
    }
    Ok(flakiness_of(o).0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageInput {
    pub suite_id: String,
    pub test_id: String,
    pub outcomes: Vec<TestOutcome>,
    pub quarantine_budget_remaining: u32,
    pub coverage_changed: bool,
}

impl TriageInput {
    pub fn from_history(h: &TestHistory, test_id: &str, budget_remaining: u32, coverage_changed: bool) -> Self {
        TriageInput {
            suite_id: h.suite_id.clone(),
            test_id: test_id.to_string(),
            outcomes: h.outcomes(test_id).to_vec(),
            quarantine_budget_remaining: budget_remaining,
            coverage_changed,
        }
    }
}

pub fn triage_propose(t: &TriageInput, cfg: &AgentConfig) -> Result<Draft, AgentError> {
    if t.outcomes.is_empty() {
        return Err(AgentError::UnknownTest(t.test_id.clone()));
    }
    let (f, pairs, flips) = flakiness_of(&t.outcomes);
    let (action, why) = if f >= cfg.quarantine_flakiness && t.quarantine_budget_remaining > 0 {
        (Action::Quarantine, "flaky beyond the quarantine threshold")
    } else if f >= cfg.retry_flakiness && f < cfg.quarantine_flakiness && !t.coverage_changed {
        (Action::Retry, "likely flaky, coverage unchanged")
    } else {
        (Action::Fail, "failure looks genuine")
    };
    let margin = (f - cfg.retry_flakiness).abs().min((f - cfg.quarantine_flakiness).abs());
    Ok(Draft {
        action,
        confidence: (0.5 + margin).clamp(0.5, 1.0),
        evidence: vec![
            format!("flakiness {f:.2}"),
            format!("history {} runs", t.outcomes.len()),
            format!("same-revision pairs {pairs}, flips {flips}"),
        ],
        rationale: format!("{}: {why}", t.test_id),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hist(outcomes: &[bool], revision: u64) -> Vec<TestOutcome> {
        outcomes
            .iter()
            .enumerate()
            .map(|(i, p)| TestOutcome {
                run_id: format!("run-{i}"),
                revision,
                passed: *p,
            })
            .collect()
    }

    fn input(f_outcomes: Vec<TestOutcome>, budget: u32) -> TriageInput {
        TriageInput {
            suite_id: "s".into(),
            test_id: "t".into(),
            outcomes: f_outcomes,
            quarantine_budget_remaining: budget,
            coverage_changed: false,
        }
    }

    #[test]
    fn flakiness_examples() {
        let mut h = TestHistory::new("s");
        for o in hist(&[true, false, true, false], 1) {
            h.record("a", o);
        }
        for o in hist(&[true, true, true, true], 1) {
            h.record("b", o);
        }
        for o in hist(&[true], 1) {
            h.record("c", o);
        }
        assert_eq!(flakiness_probability(&h, "a").unwrap(), 0.8);
        assert_eq!(flakiness_probability(&h, "b").unwrap(), 0.2);
        assert_eq!(flakiness_probability(&h, "c").unwrap(), 0.5);
        assert_eq!(flakiness_probability(&h, "zzz").unwrap_err().code(), "unknown_test");
    }

    #[test]
    fn revision_changes_break_pairs() {
        let mut o = hist(&[true, false], 1);
        o.extend(hist(&[true, false], 2));
        // pairs (1,1) and (2,2) flip; the (1,2) boundary pair is excluded
        assert_eq!(flakiness_of(&o), (0.75, 2, 2));
    }

    #[test]
    fn triage_rule_table() {
        let cfg = AgentConfig::default();
        // 0.8 exactly goes to quarantine
        let d = triage_propose(&input(hist(&[true, false, true, false], 1), 1), &cfg).unwrap();
        assert_eq!(d.action, Action::Quarantine);
        assert_eq!(d.confidence, 0.5);
        let d = triage_propose(&input(hist(&[true, true, true, true], 1), 1), &cfg).unwrap();
        assert_eq!(d.action, Action::Fail);
        assert!((d.confidence - 0.8).abs() < 1e-12);
        // flips 2 of 3 pairs -> 3/5 = 0.6
        let d = triage_propose(&input(hist(&[true, false, true, true], 1), 0), &cfg).unwrap();
        assert_eq!(d.action, Action::Retry);
        assert!(d.evidence.iter().any(|e| e == "flakiness 0.60"));
        assert!(d.evidence.iter().any(|e| e == "history 4 runs"));
    }

    #[test]
    fn no_budget_no_quarantine() {
        let d = triage_propose(&input(hist(&[true, false, true, false], 1), 0), &AgentConfig::default()).unwrap();
        assert_eq!(d.action, Action::Fail);
    }
}
