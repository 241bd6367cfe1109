//! Compute server hosting a registry of compute functions.

use std::io::{self, ErrorKind};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use thiserror::Error;
use tracing::{debug, warn};

use super::channel::{ChannelSecurity, MessageStream};
use super::esdf::deserialize_df;
use super::wire::{parse_frame, MsgType, Status, WireError, WireRequest, WireResponse, DEFAULT_MAX_FRAME};
use crate::compute::ComputeRegistry;

const POLL: Duration = Duration::from_millis(50);

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: io::Error,
    },
    #[error("registry is empty")]
    EmptyRegistry,
    #[error("plain channels are only allowed on loopback, not {0}")]
    PlainOnNonLoopback(SocketAddr),
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub security: ChannelSecurity,
    pub max_frame: usize,
    /// How long a connection may stall in the middle of a frame.
    pub io_timeout: Duration,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            security: ChannelSecurity::Plain,
            max_frame: DEFAULT_MAX_FRAME,
            io_timeout: Duration::from_secs(60),
        }
    }
}

#[derive(Debug, Default)]
pub struct ServerStats {
    pub connections: AtomicU64,
    pub requests: AtomicU64,
    pub invocations: AtomicU64,
    pub decode_errors: AtomicU64,
}

/// A running server. Dropping it shuts it down.
pub struct ServerHandle {
    local_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
    workers: Arc<Mutex<Vec<JoinHandle<()>>>>,
    stats: Arc<ServerStats>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn stats(&self) -> &ServerStats {
        &self.stats
    }

    /// Stop accepting, let in-flight requests finish, and join all threads.
    pub fn shutdown(mut self) {
        self.stop_and_join();
    }

    fn stop_and_join(&mut self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        // wake the accept loop
        let _ = TcpStream::connect_timeout(&self.local_addr, Duration::from_millis(200));
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        let workers = std::mem::take(&mut *self.workers.lock());
        for h in workers {
            let _ = h.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_and_join();
    }
}

pub fn serve(
    addr: impl ToSocketAddrs,
    registry: ComputeRegistry,
    security: ChannelSecurity,
) -> Result<ServerHandle, ServeError> {
    serve_with(
        addr,
        registry,
        ServeOptions {
            security,
            ..ServeOptions::default()
        },
    )
}

pub fn serve_with(
    addr: impl ToSocketAddrs,
    registry: ComputeRegistry,
    options: ServeOptions,
) -> Result<ServerHandle, ServeError> {
    if registry.is_empty() {
        return Err(ServeError::EmptyRegistry);
    }
    let addr_text = addr
        .to_socket_addrs()
        .map(|mut a| a.next().map(|a| a.to_string()).unwrap_or_default())
        .unwrap_or_default();
    let listener = TcpListener::bind(addr).map_err(|source| ServeError::Bind {
        addr: addr_text,
        source,
    })?;
    let local_addr = listener.local_addr().map_err(|source| ServeError::Bind {
        addr: "?".into(),
        source,
    })?;
    if options.security == ChannelSecurity::Plain && !local_addr.ip().is_loopback() {
        return Err(ServeError::PlainOnNonLoopback(local_addr));
    }

    let stop = Arc::new(AtomicBool::new(false));
    let workers: Arc<Mutex<Vec<JoinHandle<()>>>> = Arc::default();
    let stats = Arc::new(ServerStats::default());
    let registry = Arc::new(registry);
    let options = Arc::new(options);

    let accept = {
        let stop = stop.clone();
        let workers = workers.clone();
        let stats = stats.clone();
        thread::Builder::new()
            .name("offload-accept".into())
            .spawn(move || {
                for conn in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let stream = match conn {
                        Ok(s) => s,
                        Err(e) => {
                            warn!("accept failed: {e}");
                            continue;
                        }
                    };
                    stats.connections.fetch_add(1, Ordering::Relaxed);
                    let ctx = ConnCtx {
                        registry: registry.clone(),
                        options: options.clone(),
                        stop: stop.clone(),
                        stats: stats.clone(),
                    };
                    let handle = thread::spawn(move || ctx.handle(stream));
                    let mut w = workers.lock();
                    w.retain(|h| !h.is_finished());
                    w.push(handle);
                }
            })
            .expect("spawn accept thread")
    };

    Ok(ServerHandle {
        local_addr,
        stop,
        accept: Some(accept),
        workers,
        stats,
    })
}

struct ConnCtx {
    registry: Arc<ComputeRegistry>,
    options: Arc<ServeOptions>,
    stop: Arc<AtomicBool>,
    stats: Arc<ServerStats>,
}

impl ConnCtx {
    fn handle(self, stream: TcpStream) {
        let peer = stream.peer_addr().ok();
        let _ = stream.set_nodelay(true);
        let _ = stream.set_write_timeout(Some(self.options.io_timeout));
        let Ok(control) = stream.try_clone() else { return };

        // The handshake, if any, must arrive promptly.
        let _ = control.set_read_timeout(Some(self.options.io_timeout));
        let mut conn = match MessageStream::server(stream, &self.options.security, self.options.max_frame) {
            Ok(c) => c,
            Err(e) => {
                debug!(?peer, "handshake failed: {e}");
                let _ = control.shutdown(Shutdown::Both);
                return;
            }
        };

        loop {
            if !self.wait_readable(&control) {
                break;
            }
            let _ = control.set_read_timeout(Some(self.options.io_timeout));
            let frame = match conn.recv() {
                Ok(Some(f)) => f,
                Ok(None) => break,
                Err(e) => {
                    self.reject(&mut conn, [0; 16], &e);
                    break;
                }
            };
            self.stats.requests.fetch_add(1, Ordering::Relaxed);
            let (resp, keep_open) = self.process(&frame);
            if conn.send(&resp.encode()).is_err() || !keep_open {
                break;
            }
        }
        let _ = control.shutdown(Shutdown::Both);
    }

    /// Block until bytes are available, the peer closes, or shutdown is
    /// requested. Returns false when the connection should end.
    fn wait_readable(&self, control: &TcpStream) -> bool {
        let _ = control.set_read_timeout(Some(POLL));
        let mut probe = [0u8; 1];
        loop {
            match control.peek(&mut probe) {
                Ok(0) => return false,
                Ok(_) => return true,
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                    if self.stop.load(Ordering::SeqCst) {
                        return false;
                    }
                }
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(_) => return false,
            }
        }
    }

    fn reject(&self, conn: &mut MessageStream<TcpStream>, id: [u8; 16], err: &WireError) {
        debug!("rejecting frame: {err}");
        self.stats.decode_errors.fetch_add(1, Ordering::Relaxed);
        if !matches!(err, WireError::AuthFailed | WireError::Io(_)) {
            let _ = conn.send(&WireResponse::error(id, Status::DecodeError).encode());
        }
    }

    /// Returns the response and whether the connection may stay open.
    fn process(&self, frame: &[u8]) -> (WireResponse, bool) {
        let decode_error = |id| {
            self.stats.decode_errors.fetch_add(1, Ordering::Relaxed);
            (WireResponse::error(id, Status::DecodeError), false)
        };
        let body = match parse_frame(frame) {
            Ok((MsgType::Request, body)) => body,
            _ => return decode_error([0; 16]),
        };
        let req = match WireRequest::decode_body(body) {
            Ok(r) => r,
            Err(_) => {
                let id = body.get(..16).and_then(|b| b.try_into().ok()).unwrap_or([0; 16]);
                return decode_error(id);
            }
        };
        let Some(func) = self.registry.get(&req.compute_sig) else {
            return (WireResponse::error(req.request_id, Status::UnknownFn), true);
        };
        let df = match deserialize_df(&req.df_payload) {
            Ok(df) => df,
            Err(_) => return decode_error(req.request_id),
        };

        self.stats.invocations.fetch_add(1, Ordering::Relaxed);
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| (func.func)(&df)));
        let compute_micros = started.elapsed().as_micros() as u64;
        match result {
            Ok(Ok(out)) => (
                WireResponse {
                    request_id: req.request_id,
                    status: Status::Ok,
                    compute_micros,
                    content_type: out.content_type,
                    payload: out.payload,
                },
                true,
            ),
            Ok(Err(e)) => {
                debug!(sig = %req.compute_sig, "compute error: {e}");
                let mut resp = WireResponse::error(req.request_id, Status::ComputeError);
                resp.compute_micros = compute_micros;
                (resp, true)
            }
            Err(_) => {
                warn!(sig = %req.compute_sig, "compute function panicked");
                let mut resp = WireResponse::error(req.request_id, Status::ComputeError);
                resp.compute_micros = compute_micros;
                (resp, true)
            }
        }
    }
}
