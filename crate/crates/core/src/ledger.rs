//! Append-only SHA-256 hash chain of decision records and audit events.

use std::fs::File;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::audit::AuditEvent;
use crate::clock::SimTime;
use crate::decision::{DecisionRecord, DecisionStage, Verdict};

pub const DIGEST_ALGO: &str = "sha256";
pub const GENESIS: [u8; 32] = [0u8; 32];

pub type Digest32 = [u8; 32];

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("serialization_error: {0}")]
    Serialization(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed export at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

/// What a ledger entry carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Payload {
    Decision(DecisionRecord),
    Audit(AuditEvent),
}

impl Payload {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        match self {
            Payload::Decision(r) => r.canonical_bytes(),
            Payload::Audit(e) => e.canonical_bytes(),
        }
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }

    pub fn timestamp(&self) -> SimTime {
        match self {
            Payload::Decision(r) => r.timestamp,
            Payload::Audit(e) => e.timestamp,
        }
    }

    pub fn as_decision(&self) -> Option<&DecisionRecord> {
        match self {
            Payload::Decision(r) => Some(r),
            Payload::Audit(_) => None,
        }
    }

    pub fn as_audit(&self) -> Option<&AuditEvent> {
        match self {
            Payload::Audit(e) => Some(e),
            Payload::Decision(_) => None,
        }
    }
}

impl From<DecisionRecord> for Payload {
    fn from(r: DecisionRecord) -> Self {
        Payload::Decision(r)
    }
}

impl From<AuditEvent> for Payload {
    fn from(e: AuditEvent) -> Self {
        Payload::Audit(e)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerEntry {
    pub sequence: u64,
    pub prev_hash: Digest32,
    /// Canonical payload bytes, exactly as hashed.
    pub payload: Vec<u8>,
    pub entry_hash: Digest32,
}

impl LedgerEntry {
    pub fn payload(&self) -> Result<Payload, serde_json::Error> {
        Payload::parse(&self.payload)
    }

    /// The entry as one line of the JSONL export.
    pub fn to_line(&self) -> Result<String, LedgerError> {
        let text = std::str::from_utf8(&self.payload).map_err(|e| LedgerError::Serialization(e.to_string()))?;
        let raw = RawValue::from_string(text.to_string()).map_err(|e| LedgerError::Serialization(e.to_string()))?;
        serde_json::to_string(&ExportEntry {
            sequence: self.sequence,
            prev_hash_hex: hex::encode(self.prev_hash),
            payload: raw,
            entry_hash_hex: hex::encode(self.entry_hash),
        })
        .map_err(|e| LedgerError::Serialization(e.to_string()))
    }
}

pub fn chain_hash(prev: &Digest32, payload: &[u8]) -> Digest32 {
    let mut h = Sha256::new();
    h.update(prev);
    h.update(payload);
    h.finalize().into()
}

#[derive(Serialize, Deserialize)]
struct ExportHeader {
    digest_algo: String,
    genesis: String,
    count: u64,
}

#[derive(Serialize, Deserialize)]
struct ExportEntry {
    sequence: u64,
    prev_hash_hex: String,
    payload: Box<RawValue>,
    entry_hash_hex: String,
}

/// The chain. Only appends are exposed; entries are read through slices.
#[derive(Debug, Default)]
pub struct Ledger {
    entries: Vec<LedgerEntry>,
    wal: Option<BufWriter<File>>,
}

impl Ledger {
    pub fn new() -> Self {
        Ledger::default()
    }

    /// A ledger that writes every entry line to `path` (flushed) before
    /// `append` returns.
    pub fn with_write_ahead(path: &Path) -> Result<Self, LedgerError> {
        Ok(Ledger {
            entries: Vec::new(),
            wal: Some(BufWriter::new(File::create(path)?)),
        })
    }

    pub fn head(&self) -> Digest32 {
        self.entries.last().map(|e| e.entry_hash).unwrap_or(GENESIS)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn append(&mut self, payload: &Payload) -> Result<&LedgerEntry, LedgerError> {
        let bytes = payload.canonical_bytes();
        // a payload that cannot be read back would poison the export
        Payload::parse(&bytes).map_err(|e| LedgerError::Serialization(e.to_string()))?;
        self.append_bytes(bytes)
    }

    fn append_bytes(&mut self, payload: Vec<u8>) -> Result<&LedgerEntry, LedgerError> {
        let prev_hash = self.head();
        let entry = LedgerEntry {
            sequence: self.entries.len() as u64,
            entry_hash: chain_hash(&prev_hash, &payload),
            prev_hash,
            payload,
        };
        if let Some(w) = self.wal.as_mut() {
            writeln!(w, "{}", entry.to_line()?)?;
            w.flush()?;
        }
        self.entries.push(entry);
        Ok(self.entries.last().expect("just pushed"))
    }

    pub fn query(&self, q: &LedgerQuery) -> Vec<&LedgerEntry> {
        query(&self.entries, q)
    }

    pub fn export(&self) -> Result<String, LedgerError> {
        export(&self.entries)
    }

    pub fn export_to(&self, path: &Path) -> Result<(), LedgerError> {
        std::fs::write(path, self.export()?)?;
        Ok(())
    }
}

pub fn export(entries: &[LedgerEntry]) -> Result<String, LedgerError> {
    let header = ExportHeader {
        digest_algo: DIGEST_ALGO.into(),
        genesis: hex::encode(GENESIS),
        count: entries.len() as u64,
    };
    let mut out = serde_json::to_string(&header).map_err(|e| LedgerError::Serialization(e.to_string()))?;
    out.push('\n');
    for e in entries {
        out.push_str(&e.to_line()?);
        out.push('\n');
    }
    Ok(out)
}

fn decode_digest(s: &str, line: usize) -> Result<Digest32, LedgerError> {
    let bytes = hex::decode(s).map_err(|e| LedgerError::Malformed {
        line,
        reason: e.to_string(),
    })?;
    bytes.try_into().map_err(|_| LedgerError::Malformed {
        line,
        reason: "digest is not 32 bytes".into(),
    })
}

/// Parses an export. Structural problems are errors; chain problems are
/// left for [`verify_chain`].
pub fn import(text: &str) -> Result<Vec<LedgerEntry>, LedgerError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or(LedgerError::Malformed {
        line: 1,
        reason: "missing header".into(),
    })?;
    let header: ExportHeader = serde_json::from_str(first).map_err(|e| LedgerError::Malformed {
        line: 1,
        reason: e.to_string(),
    })?;
    if header.digest_algo != DIGEST_ALGO || header.genesis != hex::encode(GENESIS) {
        return Err(LedgerError::Malformed {
            line: 1,
            reason: format!("unsupported digest `{}`", header.digest_algo),
        });
    }
    let mut entries = Vec::new();
    for (i, l) in lines {
        let e: ExportEntry = serde_json::from_str(l).map_err(|err| LedgerError::Malformed {
            line: i + 1,
            reason: err.to_string(),
        })?;
        entries.push(LedgerEntry {
            sequence: e.sequence,
            prev_hash: decode_digest(&e.prev_hash_hex, i + 1)?,
            payload: e.payload.get().as_bytes().to_vec(),
            entry_hash: decode_digest(&e.entry_hash_hex, i + 1)?,
        });
    }
    if entries.len() as u64 != header.count {
        return Err(LedgerError::Malformed {
            line: 1,
            reason: format!("header count {} but {} entries", header.count, entries.len()),
        });
    }
    Ok(entries)
}

/// Reads an export from disk, tolerating only a trailing newline.
pub fn read_export(path: &Path) -> Result<Vec<LedgerEntry>, LedgerError> {
    let f = std::io::BufReader::new(File::open(path)?);
    let mut text = String::new();
    for line in f.lines() {
        text.push_str(&line?);
        text.push('\n');
    }
    import(&text)
}

/// Where a chain first fails to verify.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ChainBreak {
    /// Position in the supplied slice.
    pub index: usize,
    pub reason: BreakReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BreakReason {
    Sequence,
    PrevHash,
    EntryHash,
}

/// O(n) walk from genesis.
pub fn verify_chain(entries: &[LedgerEntry]) -> Result<(), ChainBreak> {
    let mut prev = GENESIS;
    for (i, e) in entries.iter().enumerate() {
        let brk = |reason| Err(ChainBreak { index: i, reason });
        if e.sequence != i as u64 {
            return brk(BreakReason::Sequence);
        }
        if e.prev_hash != prev {
            return brk(BreakReason::PrevHash);
        }
        if chain_hash(&prev, &e.payload) != e.entry_hash {
            return brk(BreakReason::EntryHash);
        }
        prev = e.entry_hash;
    }
    Ok(())
}

/// Conjunctive filters. Decision-only filters (stage, outcome, override)
/// never match audit events.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LedgerQuery {
    pub stage: Option<DecisionStage>,
    pub from: Option<SimTime>,
    /// Exclusive upper bound.
    pub until: Option<SimTime>,
    pub policy_outcome: Option<Verdict>,
    pub human_overridden: Option<bool>,
    pub agent_id: Option<String>,
    pub trace_id: Option<String>,
    pub decisions_only: bool,
}

impl LedgerQuery {
    pub fn matches(&self, p: &Payload) -> bool {
        let ts = p.timestamp();
        if self.from.is_some_and(|f| ts < f) || self.until.is_some_and(|u| ts >= u) {
            return false;
        }
        match p {
            Payload::Decision(r) => {
                self.stage.is_none_or(|s| s == r.stage)
                    && self.policy_outcome.is_none_or(|v| v == r.policy_outcome)
                    && self.human_overridden.is_none_or(|h| h == r.human_overridden)
                    && self
                        .agent_id
                        .as_deref()
                        .is_none_or(|a| r.inputs.get("agent_id").and_then(|v| v.as_str()) == Some(a))
                    && self.trace_id.as_ref().is_none_or(|t| r.trace_ids.contains(t))
            }
            Payload::Audit(e) => {
                !self.decisions_only
                    && self.stage.is_none()
                    && self.policy_outcome.is_none()
                    && self.human_overridden.is_none()
                    && self
                        .agent_id
                        .as_deref()
                        .is_none_or(|a| e.details.get("agent_id").and_then(|v| v.as_str()) == Some(a))
                    && self.trace_id.as_ref().is_none_or(|t| e.trace_id.as_ref() == Some(t))
            }
        }
    }
}

/// All and only matching entries, in sequence order. Unparseable payloads
/// never match.
pub fn query<'a>(entries: &'a [LedgerEntry], q: &LedgerQuery) -> Vec<&'a LedgerEntry> {
    entries
        .iter()
        .filter(|e| e.payload().map(|p| q.matches(&p)).unwrap_or(false))
        .collect()
}
