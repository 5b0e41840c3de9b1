//! What a run leaves behind, and the run directory format.
//!
//! A run directory holds `summary.json`, `ledger.jsonl` (the ledger
//! export), and one JSON object per line in `events.jsonl`,
//! `adjudications.jsonl`, `faults.jsonl` and `postmortems.jsonl`;
//! `telemetry.jsonl` is present only when the scenario exports telemetry.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::world::{FaultStatus, Loc};
use super::Simulation;
use crate::agents::PostmortemReport;
use crate::clock::SimTime;
use crate::decision::{Action, DecisionStage, Resolution};
use crate::evaluation::{ai_metrics, dora_metrics, AiReport, DoraReport, EvalError};
use crate::events::{Arm, RunEvent};
use crate::ledger::{self, LedgerEntry, LedgerError};
use crate::telemetry::{FaultKind, FaultTarget, TelemetryWindow};

/// Ground-truth verdict on one decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adjudication {
    pub decision_id: String,
    pub agent_id: String,
    pub stage: DecisionStage,
    pub proposed_action: Action,
    pub final_action: Option<Action>,
    pub resolution: Resolution,
    /// Actions the ground truth accepts; empty means "do nothing".
    pub oracle_actions: Vec<Action>,
    pub correct: bool,
    /// The injected fault the decision was about, if any.
    pub fault_id: Option<String>,
    pub proposed_at: SimTime,
    pub timestamp: SimTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultRecord {
    pub fault_id: String,
    pub kind: FaultKind,
    pub target: FaultTarget,
    pub magnitude: f64,
    pub epoch: u64,
    pub run_id: Option<String>,
    /// `infra`, `canary`, `prod`, `flag`, `suite` or `none`.
    pub location: String,
    pub onset: Option<SimTime>,
    pub resolved_at: Option<SimTime>,
    pub resolution: Option<String>,
    pub incident_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub seed: u64,
    pub arm: Arm,
    pub horizon: SimTime,
    pub ended_at: SimTime,
    pub policy_version: String,
    pub policy_digest: String,
    pub agent_version: String,
    pub ledger_entries: usize,
    pub ledger_head: String,
    pub runs: usize,
    pub decisions: usize,
    pub incidents: usize,
    pub dora: DoraReport,
    pub ai: AiReport,
}

impl RunArtifacts {
    /// Recomputes both metric reports from the exported artifacts.
    pub fn recompute(&self) -> Result<(DoraReport, AiReport), EvalError> {
        Ok((dora_metrics(&self.events), ai_metrics(&self.ledger, &self.adjudications, &self.events)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub summary: RunSummary,
    pub ledger: Vec<LedgerEntry>,
    pub events: Vec<RunEvent>,
    pub adjudications: Vec<Adjudication>,
    pub faults: Vec<FaultRecord>,
    pub postmortems: Vec<PostmortemReport>,
    pub telemetry: Vec<TelemetryWindow>,
}

impl RunArtifacts {
    pub(crate) fn collect(sim: &Simulation) -> Result<Self, EvalError> {
        let faults = sim
            .faults
            .iter()
            .map(|f| FaultRecord {
                fault_id: f.spec.fault_id.clone(),
                kind: f.spec.kind,
                target: f.spec.target,
                magnitude: f.spec.magnitude,
                epoch: f.spec.epoch,
                run_id: f.run.map(|r| sim.runs[r].id.clone()),
                location: match f.loc {
                    Some(Loc::Infra) => "infra",
                    Some(Loc::Canary(_)) => "canary",
                    Some(Loc::Prod(_)) => "prod",
                    Some(Loc::Flag(_)) => "flag",
                    None if f.spec.target == FaultTarget::Suite => "suite",
                    None => "none",
                }
                .into(),
                onset: f.onset,
                resolved_at: f.resolved_at,
                resolution: match f.status {
                    FaultStatus::Dormant => Some("never_reached".into()),
                    _ => f.resolution.clone(),
                },
                incident_id: f.incident.map(|i| sim.incidents[i].inc.incident_id.clone()),
            })
            .collect();
        let ledger = sim.ledger.entries().to_vec();
        let dora = dora_metrics(&sim.events);
        let ai = ai_metrics(&ledger, &sim.adjudications, &sim.events)?;
        Ok(RunArtifacts {
            summary: RunSummary {
                scenario: sim.sc.name.clone(),
                seed: sim.sc.seed,
                arm: sim.arm,
                horizon: sim.horizon,
                ended_at: sim.now,
                policy_version: sim.bundle.version.clone(),
                policy_digest: sim.bundle.digest.clone(),
                agent_version: sim.sc.agents.version.clone(),
                ledger_entries: sim.ledger.len(),
                ledger_head: hex::encode(sim.ledger.head()),
                runs: sim.runs.len(),
                decisions: sim.records.len(),
                incidents: sim.incidents.len(),
                dora,
                ai,
            },
            ledger,
            events: sim.events.clone(),
            adjudications: sim.adjudications.clone(),
            faults,
            postmortems: sim.postmortems.clone(),
            telemetry: sim.telemetry_log.clone(),
        })
    }
}

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("io error on {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("malformed {path} at line {line}: {reason}")]
    Malformed { path: String, line: usize, reason: String },
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ArtifactError {
    ArtifactError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), ArtifactError> {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it).map_err(|e| io_err(path, e))?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, ArtifactError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ArtifactError::Malformed {
                path: path.display().to_string(),
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

pub fn write_run_dir(dir: &Path, a: &RunArtifacts) -> Result<(), ArtifactError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let summary = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&a.summary).map_err(|e| io_err(&summary, e))?;
    std::fs::write(&summary, text + "\n").map_err(|e| io_err(&summary, e))?;
    let led = dir.join("ledger.jsonl");
    std::fs::write(&led, ledger::export(&a.ledger)?).map_err(|e| io_err(&led, e))?;
    write_jsonl(&dir.join("events.jsonl"), &a.events)?;
    write_jsonl(&dir.join("adjudications.jsonl"), &a.adjudications)?;
    write_jsonl(&dir.join("faults.jsonl"), &a.faults)?;
    write_jsonl(&dir.join("postmortems.jsonl"), &a.postmortems)?;
    if !a.telemetry.is_empty() {
        write_jsonl(&dir.join("telemetry.jsonl"), &a.telemetry)?;
    }
    Ok(())
}

pub fn read_run_dir(dir: &Path) -> Result<RunArtifacts, ArtifactError> {
    let summary_path = dir.join("summary.json");
    let text = std::fs::read_to_string(&summary_path).map_err(|e| io_err(&summary_path, e))?;
    let summary = serde_json::from_str(&text).map_err(|e| ArtifactError::Malformed {
        path: summary_path.display().to_string(),
        line: e.line(),
        reason: e.to_string(),
    })?;
    let tel = dir.join("telemetry.jsonl");
    Ok(RunArtifacts {
        summary,
        ledger: ledger::read_export(&dir.join("ledger.jsonl"))?,
        events: read_jsonl(&dir.join("events.jsonl"))?,
        adjudications: read_jsonl(&dir.join("adjudications.jsonl"))?,
        faults: read_jsonl(&dir.join("faults.jsonl"))?,
        postmortems: read_jsonl(&dir.join("postmortems.jsonl"))?,
        telemetry: if tel.exists() { read_jsonl(&tel)? } else { Vec::new() },
    })
}
