//! Offloading compute to escrow-controlled servers: ESDF encoding, the
//! framed wire protocol, the compute server and the client.

mod channel;
mod client;
pub mod esdf;
mod server;
mod throttle;
pub mod wire;

use serde::{Deserialize, Serialize};

pub use channel::{tap_counters, ChannelSecurity, MessageStream, TapCounters, TapStream};
pub use client::{call_with_id, client_call, client_call_async, CallTimings, ClientError, ClientOptions, PendingCall};
pub use esdf::{deserialize_df, serialize_df, EsdfError};
pub use server::{serve, serve_with, ServeError, ServeOptions, ServerHandle, ServerStats};
pub use throttle::{throttle_channel, Throttle, ThrottledStream};
pub use wire::{Status, WireRequest, WireResponse};

/// A server the escrow may offload to.
///
/// Only servers with `trusted == true` sit inside the individual's trust zone
/// and may receive data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerDescriptor {
    pub server_id: String,
    pub address: String,
    pub trusted: bool,
    #[serde(default)]
    pub config_note: String,
}

impl ServerDescriptor {
    pub fn trusted(server_id: impl Into<String>, address: impl Into<String>) -> Self {
        Self {
            server_id: server_id.into(),
            address: address.into(),
            trusted: true,
            config_note: String::new(),
        }
    }
}
