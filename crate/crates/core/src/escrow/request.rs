use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// 128-bit request identifier, shown as 32 lowercase hex digits.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RequestId(pub [u8; 16]);

impl RequestId {
    pub fn random() -> Self {
        RequestId(uuid::Uuid::new_v4().into_bytes())
    }

    pub fn as_bytes(&self) -> &[u8; 16] {
        &self.0
    }
}

impl fmt::Display for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RequestId({self})")
    }
}

impl FromStr for RequestId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let raw = uuid::Uuid::try_parse(s).map_err(|e| format!("bad request id {s:?}: {e}"))?;
        Ok(RequestId(raw.into_bytes()))
    }
}

impl Serialize for RequestId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RequestId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// How `run` behaves when the policy decision is pending.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunMode {
    /// Wait up to `timeout` for a manual decision, then fail.
    Blocking {
        #[serde(with = "secs")]
        timeout: Duration,
    },
    /// Wait with no deadline; meant for requests started with `submit`.
    NonBlocking,
}

impl Default for RunMode {
    fn default() -> Self {
        RunMode::Blocking {
            timeout: Duration::from_secs(30),
        }
    }
}

mod secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

/// One application request to run a compute function over personal data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataflowRequest {
    pub id: RequestId,
    pub app_id: String,
    pub access_sql: String,
    pub compute_sig: String,
    /// `None` runs the function inside the escrow.
    pub server_id: Option<String>,
    pub mode: RunMode,
}

impl DataflowRequest {
    pub fn new(app_id: impl Into<String>, access_sql: impl Into<String>, compute_sig: impl Into<String>) -> Self {
        Self {
            id: RequestId::random(),
            app_id: app_id.into(),
            access_sql: access_sql.into(),
            compute_sig: compute_sig.into(),
            server_id: None,
            mode: RunMode::default(),
        }
    }

    pub fn on_server(mut self, server_id: impl Into<String>) -> Self {
        self.server_id = Some(server_id.into());
        self
    }

    pub fn mode(mut self, mode: RunMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn timeout(self, timeout: Duration) -> Self {
        self.mode(RunMode::Blocking { timeout })
    }
}
