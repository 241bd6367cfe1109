//! Escrow-side offload client.

use std::io::{self, ErrorKind};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use rand::RngCore;
use thiserror::Error;

use super::channel::{ChannelSecurity, MessageStream, TapStream};
use super::esdf::serialize_df;
use super::throttle::Throttle;
use super::wire::{parse_frame, MsgType, Status, WireError, WireRequest, WireResponse, DEFAULT_MAX_FRAME};
use super::ServerDescriptor;
use crate::compute::RunOutput;
use crate::datamodel::Dataframe;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("server {0} is outside the trust zone")]
    UntrustedServer(String),
    #[error("cannot resolve {0}")]
    BadAddress(String),
    #[error("plain channel refused for non-loopback address {0}")]
    PlainNotAllowed(SocketAddr),
    #[error("connect to {addr} failed: {source}")]
    Connect {
        addr: String,
        #[source]
        source: io::Error,
    },
    #[error("timed out")]
    Timeout,
    #[error("server answered with status {0:?}")]
    RemoteStatus(Status),
    #[error("protocol error: {0}")]
    Protocol(WireError),
    #[error("response does not match request id")]
    MismatchedResponse,
}

impl From<WireError> for ClientError {
    fn from(e: WireError) -> Self {
        match e {
            WireError::Io(io) if matches!(io.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                ClientError::Timeout
            }
            other => ClientError::Protocol(other),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClientOptions {
    pub timeout: Duration,
    pub security: ChannelSecurity,
    pub throttle: Throttle,
    pub max_frame: usize,
}

impl Default for ClientOptions {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(60),
            security: ChannelSecurity::Plain,
            throttle: Throttle::unlimited(),
            max_frame: DEFAULT_MAX_FRAME,
        }
    }
}

/// Time spent per stratum of a remote call.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CallTimings {
    pub serialize: Duration,
    /// Round-trip wall time minus the compute time the server reported.
    pub transmit: Duration,
    pub compute: Duration,
}

/// Run `sig` over `df` on a trusted server.
pub fn client_call(
    server: &ServerDescriptor,
    sig: &str,
    df: &Dataframe,
    options: &ClientOptions,
) -> Result<(RunOutput, CallTimings), ClientError> {
    let mut id = [0u8; 16];
    rand::thread_rng().fill_bytes(&mut id);
    call_with_id(server, id, sig, df, options)
}

pub fn call_with_id(
    server: &ServerDescriptor,
    request_id: [u8; 16],
    sig: &str,
    df: &Dataframe,
    options: &ClientOptions,
) -> Result<(RunOutput, CallTimings), ClientError> {
    // Trust-zone gate: nothing is encoded or sent for an untrusted server.
    if !server.trusted {
        return Err(ClientError::UntrustedServer(server.server_id.clone()));
    }
    let addr = server
        .address
        .to_socket_addrs()
        .ok()
        .and_then(|mut a| a.next())
        .ok_or_else(|| ClientError::BadAddress(server.address.clone()))?;
    if options.security == ChannelSecurity::Plain && !addr.ip().is_loopback() {
        return Err(ClientError::PlainNotAllowed(addr));
    }

    let started = Instant::now();
    let payload = serialize_df(df);
    let frame = WireRequest {
        request_id,
        compute_sig: sig.to_string(),
        df_payload: payload,
    }
    .encode();
    let serialize = started.elapsed();

    let round_trip = Instant::now();
    let tcp = TcpStream::connect_timeout(&addr, options.timeout).map_err(|source| match source.kind() {
        ErrorKind::TimedOut | ErrorKind::WouldBlock => ClientError::Timeout,
        _ => ClientError::Connect {
            addr: server.address.clone(),
            source,
        },
    })?;
    let _ = tcp.set_nodelay(true);
    tcp.set_read_timeout(Some(options.timeout)).map_err(WireError::Io)?;
    tcp.set_write_timeout(Some(options.timeout)).map_err(WireError::Io)?;

    let stream = options.throttle.wrap(TapStream::new(tcp, server.trusted));
    let mut conn = MessageStream::client(stream, &options.security, options.max_frame)?;
    conn.send(&frame)?;
    drop(frame);
    let reply = conn.recv()?.ok_or(ClientError::Protocol(WireError::Truncated))?;
    let wall = round_trip.elapsed();
    if wall > options.timeout {
        return Err(ClientError::Timeout);
    }

    let (kind, body) = parse_frame(&reply)?;
    if kind != MsgType::Response {
        return Err(ClientError::Protocol(WireError::UnknownMsgType(kind as u8)));
    }
    let resp = WireResponse::decode_body(body)?;
    if resp.request_id != request_id {
        return Err(ClientError::MismatchedResponse);
    }
    if resp.status != Status::Ok {
        return Err(ClientError::RemoteStatus(resp.status));
    }
    let compute = Duration::from_micros(resp.compute_micros);
    Ok((
        RunOutput {
            content_type: resp.content_type,
            payload: resp.payload,
        },
        CallTimings {
            serialize,
            transmit: wall.saturating_sub(compute),
            compute,
        },
    ))
}

/// A remote call running on its own thread.
pub struct PendingCall {
    handle: JoinHandle<Result<(RunOutput, CallTimings), ClientError>>,
}

impl PendingCall {
    pub fn is_finished(&self) -> bool {
        self.handle.is_finished()
    }

    pub fn wait(self) -> Result<(RunOutput, CallTimings), ClientError> {
        self.handle.join().expect("offload call thread panicked")
    }
}

/// Start a call without blocking the caller.
pub fn client_call_async(
    server: ServerDescriptor,
    sig: String,
    df: Dataframe,
    options: ClientOptions,
) -> PendingCall {
    PendingCall {
        handle: thread::spawn(move || client_call(&server, &sig, &df, &options)),
    }
}
