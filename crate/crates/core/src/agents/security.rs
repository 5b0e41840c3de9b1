use serde::{Deserialize, Serialize};

use super::Draft;
use crate::decision::Action;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Low,
    Med,
    High,
    Critical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub cve_id: String,
    pub severity: Severity,
    pub reachable: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SecurityInput {
    pub findings: Vec<Finding>,
}

impl SecurityInput {
    pub fn critical_count(&self) -> u32 {
        self.findings.iter().filter(|f| f.severity == Severity::Critical).count() as u32
    }

    pub fn high_count(&self) -> u32 {
        self.findings.iter().filter(|f| f.severity == Severity::High).count() as u32
    }

    pub fn reachable_high_count(&self) -> u32 {
        self.findings
            .iter()
            .filter(|f| f.severity == Severity::High && f.reachable)
            .count() as u32
    }
}

pub fn security_propose(s: &SecurityInput) -> Draft {
    let ids = |pred: &dyn Fn(&Finding) -> bool| -> Vec<String> {
        s.findings.iter().filter(|f| pred(f)).map(|f| f.cve_id.clone()).collect()
    };
    let critical = ids(&|f| f.severity == Severity::Critical);
    if !critical.is_empty() {
        return Draft {
            action: Action::Block,
            confidence: 1.0,
            evidence: critical.iter().map(|c| format!("critical {c}")).collect(),
            rationale: "critical vulnerabilities always block".into(),
        };
    }
    let reachable = ids(&|f| f.severity == Severity::High && f.reachable);
    if !reachable.is_empty() {
        let mut evidence: Vec<String> = reachable.iter().map(|c| format!("reachable high {c}")).collect();
        evidence.push("recommend block until the remediation lands".into());
        return Draft {
            action: Action::AutoPr,
            confidence: 0.9,
            evidence,
            rationale: "reachable high-severity finding: open a remediation change".into(),
        };
    }
    Draft {
        action: Action::Allow,
        confidence: 0.85,
        evidence: s.findings.iter().map(|f| format!("{:?} {}", f.severity, f.cve_id).to_lowercase()).collect(),
        rationale: "no blocking findings".into(),
    }
}
