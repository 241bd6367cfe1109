//! Append-only record of every dataflow the escrow handled.

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::pending::Scope;
use super::policy::Effect;
use super::request::{DataflowRequest, RequestId};

/// How the policy decision for a request was reached.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Resolution {
    Rule { effect: Effect, priority: i64, index: usize },
    Default { effect: Effect },
    Manual { effect: Effect, decision_id: RequestId, scope: Scope },
    TimedOut,
    /// The request failed before policy evaluation.
    #[default]
    NotEvaluated,
}

impl Resolution {
    pub fn effect(&self) -> Option<Effect> {
        match self {
            Resolution::Rule { effect, .. } | Resolution::Default { effect } | Resolution::Manual { effect, .. } => {
                Some(*effect)
            }
            Resolution::TimedOut | Resolution::NotEvaluated => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Ok,
    Error { kind: String, message: String },
}

/// Seconds spent in each stage. `transmit` and `serialize` stay zero for
/// local runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub access_s: f64,
    pub serialize_s: f64,
    pub transmit_s: f64,
    pub compute_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub seq: u64,
    pub ts: DateTime<Utc>,
    pub request: DataflowRequest,
    pub tables_touched: Vec<String>,
    pub resolution: Resolution,
    pub outcome: Outcome,
    pub timings: Timings,
    /// SHA-256 of the output payload.
    pub output_digest: Option<String>,
    pub output_type: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerFilter {
    pub app_id: Option<String>,
    pub table: Option<String>,
    /// Keep only the most recent `limit` matches.
    pub limit: Option<usize>,
}

impl LedgerFilter {
    fn admits(&self, e: &LedgerEntry) -> bool {
        self.app_id.as_deref().is_none_or(|a| a == e.request.app_id)
            && self
                .table
                .as_deref()
                .is_none_or(|t| e.tables_touched.iter().any(|x| x.eq_ignore_ascii_case(t)))
    }
}

#[derive(Debug, Default)]
pub struct Ledger {
    entries: Mutex<Vec<LedgerEntry>>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuild a ledger from previously persisted entries.
    pub fn from_entries(mut entries: Vec<LedgerEntry>) -> Self {
        entries.sort_by_key(|e| e.seq);
        Self {
            entries: Mutex::new(entries),
        }
    }

    /// Assign the next sequence number and append.
    pub fn append(&self, mut entry: LedgerEntry) -> LedgerEntry {
        let mut entries = self.entries.lock();
        entry.seq = entries.last().map_or(1, |e| e.seq + 1);
        entries.push(entry.clone());
        entry
    }

    pub fn len(&self) -> usize {
        self.entries.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn list(&self, filter: &LedgerFilter) -> Vec<LedgerEntry> {
        let entries = self.entries.lock();
        let mut out: Vec<LedgerEntry> = entries.iter().filter(|e| filter.admits(e)).cloned().collect();
        if let Some(n) = filter.limit {
            let skip = out.len().saturating_sub(n);
            out.drain(..skip);
        }
        out
    }

    pub fn find(&self, id: RequestId) -> Option<LedgerEntry> {
        self.entries.lock().iter().find(|e| e.request.id == id).cloned()
    }
}
