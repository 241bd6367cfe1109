//! Local JSON API for the approval console and operators.
//!
//! Routes:
//! - `GET /v1/dataflows/pending`
//! - `POST /v1/dataflows/{id}/decision` with `{"verdict": "allow"|"deny", "scope": "once"|"always"}`
//! - `GET /v1/ledger?app_id=&table=&limit=`
//! - `GET /v1/policies`, `POST /v1/policies`, `DELETE /v1/policies/{priority}/{index}`
//! - `GET /v1/servers`

use std::collections::HashMap;
use std::io::{self, Read};
use std::net::{SocketAddr, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value as Json};
use tiny_http::{Header, Method, Request, Response, Server};
use tracing::{debug, warn};

use crate::escrow::{Effect, Escrow, EscrowError, LedgerFilter, PolicyRule, RequestId, Scope};

const MAX_BODY: u64 = 64 * 1024;

pub struct HttpHandle {
    local_addr: SocketAddr,
    server: Arc<Server>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl HttpHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn shutdown(mut self) {
        self.stop_and_join();
    }

    fn stop_and_join(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for HttpHandle {
    fn drop(&mut self) {
        self.stop_and_join();
    }
}

pub fn serve_http(addr: impl ToSocketAddrs, escrow: Arc<Escrow>) -> io::Result<HttpHandle> {
    let addr = addr
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "no address"))?;
    let server = Server::http(addr).map_err(io::Error::other)?;
    let local_addr = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| io::Error::other("not an IP listener"))?;
    let server = Arc::new(server);
    let stop = Arc::new(AtomicBool::new(false));
    let thread = {
        let server = server.clone();
        let stop = stop.clone();
        thread::Builder::new().name("escrow-http".into()).spawn(move || {
            while !stop.load(Ordering::SeqCst) {
                match server.recv_timeout(Duration::from_millis(100)) {
                    Ok(Some(req)) => handle(&escrow, req),
                    Ok(None) => {}
                    Err(e) => {
                        warn!("http accept failed: {e}");
                        break;
                    }
                }
            }
        })?
    };
    Ok(HttpHandle {
        local_addr,
        server,
        stop,
        thread: Some(thread),
    })
}

struct Reply {
    status: u16,
    body: Json,
}

fn ok(body: Json) -> Reply {
    Reply { status: 200, body }
}

fn error(status: u16, msg: impl Into<String>) -> Reply {
    Reply {
        status,
        body: json!({ "error": msg.into() }),
    }
}

fn handle(escrow: &Escrow, mut req: Request) {
    let url = req.url().to_string();
    let (path, query) = url.split_once('?').unwrap_or((&url, ""));
    let segments: Vec<&str> = path.trim_matches('/').split('/').collect();
    let method = req.method().clone();
    debug!(%method, %url, "http request");

    let reply = match (&method, segments.as_slice()) {
        (Method::Get, ["v1", "dataflows", "pending"]) => pending(escrow),
        (Method::Post, ["v1", "dataflows", id, "decision"]) => match read_json(&mut req) {
            Ok(body) => decide(escrow, id, body),
            Err(r) => r,
        },
        (Method::Get, ["v1", "ledger"]) => ledger(escrow, query),
        (Method::Get, ["v1", "policies"]) => policies(escrow),
        (Method::Post, ["v1", "policies"]) => match read_json(&mut req) {
            Ok(body) => add_policy(escrow, body),
            Err(r) => r,
        },
        (Method::Delete, ["v1", "policies", priority, index]) => remove_policy(escrow, priority, index),
        (Method::Get, ["v1", "servers"]) => ok(json!(escrow.servers())),
        (_, ["v1", "dataflows", "pending"] | ["v1", "ledger"] | ["v1", "policies"] | ["v1", "servers"]) => {
            error(405, "method not allowed")
        }
        _ => error(404, format!("no route for {path}")),
    };

    let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
    let response = Response::from_string(reply.body.to_string())
        .with_status_code(reply.status)
        .with_header(header);
    if let Err(e) = req.respond(response) {
        debug!("http respond failed: {e}");
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(req: &mut Request) -> Result<T, Reply> {
    let mut body = String::new();
    req.as_reader()
        .take(MAX_BODY)
        .read_to_string(&mut body)
        .map_err(|e| error(400, format!("unreadable body: {e}")))?;
    serde_json::from_str(&body).map_err(|e| error(400, format!("invalid JSON body: {e}")))
}

fn pending(escrow: &Escrow) -> Reply {
    let items: Vec<Json> = escrow
        .pending()
        .into_iter()
        .map(|p| {
            json!({
                "id": p.request.id,
                "app_id": p.request.app_id,
                "access_sql": p.request.access_sql,
                "compute_sig": p.request.compute_sig,
                "server_id": p.request.server_id,
                "submitted_at": p.submitted_at,
            })
        })
        .collect();
    ok(Json::Array(items))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DecisionBody {
    verdict: Effect,
    #[serde(default = "once")]
    scope: Scope,
}

fn once() -> Scope {
    Scope::Once
}

fn decide(escrow: &Escrow, id: &str, body: DecisionBody) -> Reply {
    let Ok(id) = id.parse::<RequestId>() else {
        return error(404, format!("no pending request {id}"));
    };
    match escrow.decide(id, body.verdict, body.scope) {
        Ok(()) => ok(json!({ "id": id, "verdict": body.verdict, "scope": body.scope })),
        Err(e @ EscrowError::UnknownRequest(_)) => error(404, e.to_string()),
        Err(e @ EscrowError::AlreadyDecided(_)) => error(409, e.to_string()),
        Err(e) => error(500, e.to_string()),
    }
}

fn ledger(escrow: &Escrow, query: &str) -> Reply {
    let params: HashMap<String, String> = form_urlencoded::parse(query.as_bytes()).into_owned().collect();
    let nonempty = |k: &str| params.get(k).filter(|v| !v.is_empty()).cloned();
    let limit = match nonempty("limit").map(|l| l.parse::<usize>()) {
        None => None,
        Some(Ok(n)) => Some(n),
        Some(Err(_)) => return error(400, "limit must be a non-negative integer"),
    };
    let filter = LedgerFilter {
        app_id: nonempty("app_id"),
        table: nonempty("table"),
        limit,
    };
    ok(json!(escrow.ledger_list(&filter)))
}

/// Rules in evaluation-list order, each tagged with its index among rules
/// of the same priority (the address used by DELETE).
fn policies(escrow: &Escrow) -> Reply {
    let mut seen: HashMap<i64, usize> = HashMap::new();
    let items: Vec<Json> = escrow
        .rules()
        .into_iter()
        .map(|rule| {
            let slot = seen.entry(rule.priority).or_default();
            let index = *slot;
            *slot += 1;
            let mut v = json!(rule);
            v["index"] = json!(index);
            v
        })
        .collect();
    ok(Json::Array(items))
}

fn add_policy(escrow: &Escrow, rule: PolicyRule) -> Reply {
    escrow.add_rule(rule.clone());
    Reply {
        status: 201,
        body: json!(rule),
    }
}

fn remove_policy(escrow: &Escrow, priority: &str, index: &str) -> Reply {
    let (Ok(priority), Ok(index)) = (priority.parse::<i64>(), index.parse::<usize>()) else {
        return error(400, "priority and index must be integers");
    };
    match escrow.remove_rule(priority, index) {
        Ok(rule) => ok(json!(rule)),
        Err(e) => error(404, e.to_string()),
    }
}
