//! Requests waiting for a manual decision.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};

use super::policy::Effect;
use super::request::{DataflowRequest, RequestId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    /// Applies to this request only.
    Once,
    /// Also installs a rule covering the same dataflow in future.
    Always,
}

impl std::str::FromStr for Scope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "once" => Ok(Scope::Once),
            "always" => Ok(Scope::Always),
            other => Err(format!("expected once or always, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingInfo {
    pub request: DataflowRequest,
    pub tables_touched: Vec<String>,
    pub submitted_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ManualDecision {
    pub effect: Effect,
    pub scope: Scope,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecideError {
    Unknown,
    AlreadyDecided,
}

struct Slot {
    info: PendingInfo,
    verdict: Option<ManualDecision>,
}

#[derive(Default)]
pub(crate) struct PendingTable {
    slots: Mutex<HashMap<RequestId, Slot>>,
    cv: Condvar,
}

impl PendingTable {
    /// Park until a decision arrives or `timeout` elapses. The slot is
    /// removed on return either way.
    pub fn wait(&self, info: PendingInfo, timeout: Option<Duration>) -> Option<ManualDecision> {
        let id = info.request.id;
        let deadline = timeout.map(|t| Instant::now() + t);
        let mut slots = self.slots.lock();
        slots.insert(id, Slot { info, verdict: None });
        loop {
            if let Some(v) = slots.get(&id).and_then(|s| s.verdict) {
                slots.remove(&id);
                return Some(v);
            }
            match deadline {
                Some(d) => {
                    if self.cv.wait_until(&mut slots, d).timed_out() {
                        let v = slots.remove(&id).and_then(|s| s.verdict);
                        return v;
                    }
                }
                None => self.cv.wait(&mut slots),
            }
        }
    }

    pub fn decide(&self, id: RequestId, decision: ManualDecision) -> Result<PendingInfo, DecideError> {
        let mut slots = self.slots.lock();
        let slot = slots.get_mut(&id).ok_or(DecideError::Unknown)?;
        if slot.verdict.is_some() {
            return Err(DecideError::AlreadyDecided);
        }
        slot.verdict = Some(decision);
        let info = slot.info.clone();
        drop(slots);
        self.cv.notify_all();
        Ok(info)
    }

    /// Undecided requests, oldest first.
    pub fn list(&self) -> Vec<PendingInfo> {
        let slots = self.slots.lock();
        let mut out: Vec<PendingInfo> = slots
            .values()
            .filter(|s| s.verdict.is_none())
            .map(|s| s.info.clone())
            .collect();
        out.sort_by_key(|i| i.submitted_at);
        out
    }
}
