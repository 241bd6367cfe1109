use escrow_core::escrow::EscrowError;
use escrow_core::store::FixtureError;
use escrow_core::workloads::BenchError;
use thiserror::Error;

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_BIND: u8 = 2;
pub const EXIT_FIXTURES: u8 = 3;
pub const EXIT_DENIED: u8 = 4;
pub const EXIT_TIMEOUT: u8 = 5;
pub const EXIT_REMOTE: u8 = 6;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("cannot bind {addr}: {message}")]
    Bind { addr: String, message: String },
    #[error(transparent)]
    Fixtures(#[from] FixtureError),
    #[error("{0}")]
    Manifest(String),
    #[error("{kind}: {0}", kind = .0.kind())]
    Escrow(#[from] EscrowError),
    #[error("{kind}: {message}")]
    Bench { kind: &'static str, message: String },
    #[error("state directory: {0}")]
    State(String),
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Escrow(e) => CliError::Escrow(e),
            BenchError::Serve(e) => CliError::Bind {
                addr: "127.0.0.1:0".into(),
                message: e.to_string(),
            },
            BenchError::Config(m) => CliError::Config(m),
        }
    }
}

/// Exit code for an escrow error kind.
pub fn code_for_kind(kind: &str) -> u8 {
    match kind {
        "PolicyDenied" => EXIT_DENIED,
        "PendingTimeout" | "Timeout" => EXIT_TIMEOUT,
        "RemoteError" | "UntrustedServer" | "UnknownServer" => EXIT_REMOTE,
        "StoreError" => EXIT_FIXTURES,
        _ => EXIT_USAGE,
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::State(_) => EXIT_USAGE,
            CliError::Bind { .. } => EXIT_BIND,
            CliError::Fixtures(_) | CliError::Manifest(_) => EXIT_FIXTURES,
            CliError::Escrow(e) => code_for_kind(e.kind()),
            CliError::Bench { kind, .. } => code_for_kind(kind),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escrow_kinds_map_to_distinct_codes() {
        assert_eq!(CliError::from(EscrowError::PolicyDenied).exit_code(), 4);
        assert_eq!(CliError::from(EscrowError::PendingTimeout).exit_code(), 5);
        assert_eq!(CliError::from(EscrowError::UnknownServer("x".into())).exit_code(), 6);
        assert_eq!(code_for_kind("Timeout"), 5);
        assert_eq!(code_for_kind("QueryError"), 1);
    }
}
