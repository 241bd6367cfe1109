//! The escrow: mediates every access to personal data.
//!
//! Applications never see raw rows. They name a reviewed compute function and
//! an access query; the escrow checks policy, runs the query against the
//! store, hands the result to the function (locally or on a trusted server)
//! and returns only the function's output. Each request leaves exactly one
//! ledger entry whatever its outcome.

mod ledger;
mod pending;
mod policy;
mod request;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use chrono::Utc;
use parking_lot::RwLock;
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::{debug, info};

pub use ledger::{Ledger, LedgerEntry, LedgerFilter, Outcome, Resolution, Timings};
pub use pending::{ManualDecision, PendingInfo, Scope};
pub use policy::{evaluate, DefaultDecision, Decision, Effect, Evaluation, FlowKey, PolicyRule, LOCAL, WILDCARD};
pub use request::{DataflowRequest, RequestId, RunMode};

use pending::{DecideError, PendingTable};

use crate::compute::{ComputeError, ComputeFn, ComputeRegistry, RegistryError, RunOutput};
use crate::datamodel::{catalog_builtin, TableSchema};
use crate::offload::{client_call, ClientError, ClientOptions, ServerDescriptor};
use crate::sql::{self, SqlError};
use crate::store::{materialize_assets, DataProvider, InitReport, Store, StoreError};

#[derive(Debug, Error)]
pub enum EscrowError {
    #[error("dataflow denied by policy")]
    PolicyDenied,
    #[error("no decision before the pending timeout")]
    PendingTimeout,
    #[error("invalid access query: {0}")]
    Query(#[from] SqlError),
    #[error("unknown compute function: {0}")]
    UnknownComputeFn(String),
    #[error("unknown server: {0}")]
    UnknownServer(String),
    #[error("remote execution failed: {0}")]
    Remote(#[from] ClientError),
    #[error("compute function failed: {0}")]
    Compute(#[from] ComputeError),
    #[error("compute function panicked")]
    ComputePanic,
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("server already registered: {0}")]
    DuplicateServer(String),
    #[error("no pending request {0}")]
    UnknownRequest(RequestId),
    #[error("request {0} was already decided")]
    AlreadyDecided(RequestId),
    #[error("no rule at priority {priority}, index {index}")]
    NoSuchRule { priority: i64, index: usize },
    #[error("the global escrow is already installed")]
    AlreadyInstalled,
}

impl EscrowError {
    /// Stable name recorded in the ledger.
    pub fn kind(&self) -> &'static str {
        match self {
            EscrowError::PolicyDenied => "PolicyDenied",
            EscrowError::PendingTimeout => "PendingTimeout",
            EscrowError::Query(_) => "QueryError",
            EscrowError::UnknownComputeFn(_) => "UnknownComputeFn",
            EscrowError::UnknownServer(_) => "UnknownServer",
            EscrowError::Remote(ClientError::Timeout) => "Timeout",
            EscrowError::Remote(ClientError::UntrustedServer(_)) => "UntrustedServer",
            EscrowError::Remote(_) => "RemoteError",
            EscrowError::Compute(_) | EscrowError::ComputePanic => "ComputeError",
            EscrowError::Store(_) => "StoreError",
            EscrowError::Registry(_) => "RegistryError",
            EscrowError::DuplicateServer(_) => "DuplicateServer",
            EscrowError::UnknownRequest(_) => "UnknownRequest",
            EscrowError::AlreadyDecided(_) => "AlreadyDecided",
            EscrowError::NoSuchRule { .. } => "NoSuchRule",
            EscrowError::AlreadyInstalled => "AlreadyInstalled",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct EscrowConfig {
    pub default_decision: DefaultDecision,
    pub rules: Vec<PolicyRule>,
    /// Entries from earlier sessions; new entries continue their sequence.
    pub ledger: Vec<LedgerEntry>,
}

struct RemoteServer {
    descriptor: ServerDescriptor,
    options: ClientOptions,
}

type Hook<T> = Box<dyn Fn(&T) + Send + Sync>;

#[derive(Default)]
struct Hooks {
    ledger: Option<Hook<LedgerEntry>>,
    rules: Option<Hook<Vec<PolicyRule>>>,
}

pub struct Escrow {
    store: Store,
    init_report: InitReport,
    registry: RwLock<ComputeRegistry>,
    rules: RwLock<Arc<Vec<PolicyRule>>>,
    default_decision: DefaultDecision,
    servers: RwLock<BTreeMap<String, RemoteServer>>,
    pending: PendingTable,
    ledger: Ledger,
    hooks: RwLock<Hooks>,
    local_invocations: AtomicU64,
}

static GLOBAL: OnceLock<Arc<Escrow>> = OnceLock::new();

impl Escrow {
    pub fn init(provider: &DataProvider, config: EscrowConfig) -> Result<Self, EscrowError> {
        let (store, init_report) = Store::init(provider)?;
        // buffered fixes arrive through the location-service path
        store.record_locations(&provider.location_updates)?;
        info!(tables = init_report.tables.len(), "escrow initialized");
        Ok(Self {
            store,
            init_report,
            registry: RwLock::new(ComputeRegistry::new()),
            rules: RwLock::new(Arc::new(config.rules)),
            default_decision: config.default_decision,
            servers: RwLock::default(),
            pending: PendingTable::default(),
            ledger: Ledger::from_entries(config.ledger),
            hooks: RwLock::default(),
            local_invocations: AtomicU64::new(0),
        })
    }

    /// Install `escrow` as the process-wide instance.
    pub fn install_global(escrow: Escrow) -> Result<Arc<Escrow>, EscrowError> {
        let arc = Arc::new(escrow);
        GLOBAL.set(arc.clone()).map_err(|_| EscrowError::AlreadyInstalled)?;
        Ok(arc)
    }

    pub fn global() -> Option<Arc<Escrow>> {
        GLOBAL.get().cloned()
    }

    pub fn init_report(&self) -> &InitReport {
        &self.init_report
    }

    pub fn catalog(&self) -> &[TableSchema] {
        self.store.catalog()
    }

    /// Feed a location fix from the device's location service.
    pub fn record_location(&self, longitude: f64, latitude: f64, timestamp: i64) -> Result<u64, EscrowError> {
        Ok(self.store.record_location(longitude, latitude, timestamp)?)
    }

    /// Reads of the store that bypassed `run`; stays zero in normal use.
    pub fn direct_snapshot_count(&self) -> u64 {
        self.store.direct_snapshot_count()
    }

    pub fn local_invocations(&self) -> u64 {
        self.local_invocations.load(Ordering::SeqCst)
    }

    // compute functions and servers

    pub fn register_compute<F>(&self, sig: &str, func: F, deterministic: bool) -> Result<(), EscrowError>
    where
        F: Fn(&crate::datamodel::Dataframe) -> Result<RunOutput, ComputeError> + Send + Sync + 'static,
    {
        Ok(self.registry.write().register(sig, func, deterministic)?)
    }

    pub fn register_compute_arc(&self, sig: &str, func: ComputeFn, deterministic: bool) -> Result<(), EscrowError> {
        Ok(self.registry.write().register_arc(sig, func, deterministic)?)
    }

    /// A copy of the registry, e.g. to host on a compute server.
    pub fn registry_snapshot(&self) -> ComputeRegistry {
        self.registry.read().clone()
    }

    pub fn add_server(&self, descriptor: ServerDescriptor, options: ClientOptions) -> Result<(), EscrowError> {
        let mut servers = self.servers.write();
        if servers.contains_key(&descriptor.server_id) {
            return Err(EscrowError::DuplicateServer(descriptor.server_id));
        }
        servers.insert(descriptor.server_id.clone(), RemoteServer { descriptor, options });
        Ok(())
    }

    pub fn servers(&self) -> Vec<ServerDescriptor> {
        self.servers.read().values().map(|s| s.descriptor.clone()).collect()
    }

    // policy

    pub fn rules(&self) -> Vec<PolicyRule> {
        self.rules.read().as_ref().clone()
    }

    pub fn default_decision(&self) -> DefaultDecision {
        self.default_decision
    }

    pub fn add_rule(&self, rule: PolicyRule) {
        self.update_rules(|r| r.push(rule));
    }

    pub fn set_rules(&self, rules: Vec<PolicyRule>) {
        self.update_rules(|r| *r = rules);
    }

    /// Remove the `index`-th rule (in list order) among those with `priority`.
    pub fn remove_rule(&self, priority: i64, index: usize) -> Result<PolicyRule, EscrowError> {
        let mut removed = None;
        self.update_rules(|rules| {
            let pos = rules
                .iter()
                .enumerate()
                .filter(|(_, r)| r.priority == priority)
                .nth(index)
                .map(|(i, _)| i);
            if let Some(pos) = pos {
                removed = Some(rules.remove(pos));
            }
        });
        removed.ok_or(EscrowError::NoSuchRule { priority, index })
    }

    fn update_rules(&self, f: impl FnOnce(&mut Vec<PolicyRule>)) {
        let snapshot = {
            let mut guard = self.rules.write();
            let mut next = guard.as_ref().clone();
            f(&mut next);
            let next = Arc::new(next);
            *guard = next.clone();
            next
        };
        if let Some(hook) = &self.hooks.read().rules {
            hook(&snapshot);
        }
    }

    /// Called after every rule change with the full rule list.
    pub fn on_rules_change(&self, hook: impl Fn(&Vec<PolicyRule>) + Send + Sync + 'static) {
        self.hooks.write().rules = Some(Box::new(hook));
    }

    /// Called after every ledger append.
    pub fn on_ledger_append(&self, hook: impl Fn(&LedgerEntry) + Send + Sync + 'static) {
        self.hooks.write().ledger = Some(Box::new(hook));
    }

    pub fn pending(&self) -> Vec<PendingInfo> {
        self.pending.list()
    }

    /// Decide a pending request. With `Scope::Always` a rule for the same
    /// dataflow is installed before the waiting request resumes.
    pub fn decide(&self, id: RequestId, effect: Effect, scope: Scope) -> Result<(), EscrowError> {
        let info = self
            .pending
            .decide(id, ManualDecision { effect, scope })
            .map_err(|e| match e {
                DecideError::Unknown => EscrowError::UnknownRequest(id),
                DecideError::AlreadyDecided => EscrowError::AlreadyDecided(id),
            })?;
        debug!(%id, ?effect, ?scope, "manual decision");
        if scope == Scope::Always {
            let req = &info.request;
            let query = sql::prepare(&req.access_sql, self.catalog())
                .map(|q| q.normalized())
                .unwrap_or_else(|_| req.access_sql.clone());
            self.add_rule(PolicyRule {
                priority: 0,
                app_pattern: req.app_id.clone(),
                table_pattern: info.tables_touched.first().cloned().unwrap_or_else(|| WILDCARD.into()),
                compute_pattern: req.compute_sig.clone(),
                server_pattern: req.server_id.clone().unwrap_or_else(|| LOCAL.into()),
                query: Some(query),
                effect,
            });
        }
        Ok(())
    }

    // ledger

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn ledger_list(&self, filter: &LedgerFilter) -> Vec<LedgerEntry> {
        self.ledger.list(filter)
    }

    // running dataflows

    /// Run a request to completion, waiting for a manual decision if needed.
    pub fn run(&self, req: DataflowRequest) -> Result<RunOutput, EscrowError> {
        let started = Instant::now();
        let mut trace = Trace::default();
        let result = self.run_stages(&req, &mut trace);
        trace.timings.total_s = started.elapsed().as_secs_f64();

        let (outcome, digest, ctype) = match &result {
            Ok(out) => (
                Outcome::Ok,
                Some(hex::encode(Sha256::digest(&out.payload))),
                Some(out.content_type.clone()),
            ),
            Err(e) => (
                Outcome::Error {
                    kind: e.kind().to_string(),
                    message: e.to_string(),
                },
                None,
                None,
            ),
        };
        let entry = self.ledger.append(LedgerEntry {
            seq: 0,
            ts: Utc::now(),
            request: req,
            tables_touched: trace.tables,
            resolution: trace.resolution,
            outcome,
            timings: trace.timings,
            output_digest: digest,
            output_type: ctype,
        });
        if let Some(hook) = &self.hooks.read().ledger {
            hook(&entry);
        }
        result
    }

    /// Start a request on a background thread.
    pub fn submit(self: &Arc<Self>, req: DataflowRequest) -> RunHandle {
        let id = req.id;
        let me = self.clone();
        RunHandle {
            id,
            handle: thread::spawn(move || me.run(req)),
        }
    }

    fn run_stages(&self, req: &DataflowRequest, trace: &mut Trace) -> Result<RunOutput, EscrowError> {
        let query = sql::prepare(&req.access_sql, self.catalog())?;
        trace.tables = query.tables_touched();

        let func = self
            .registry
            .read()
            .get(&req.compute_sig)
            .map(|f| f.func.clone())
            .ok_or_else(|| EscrowError::UnknownComputeFn(req.compute_sig.clone()))?;
        let remote = match &req.server_id {
            None => None,
            Some(id) => {
                let servers = self.servers.read();
                let s = servers.get(id).ok_or_else(|| EscrowError::UnknownServer(id.clone()))?;
                Some((s.descriptor.clone(), s.options.clone()))
            }
        };

        let normalized = query.normalized();
        let flow = FlowKey {
            app_id: &req.app_id,
            tables: &trace.tables,
            compute_sig: &req.compute_sig,
            server: req.server_id.as_deref(),
            query: &normalized,
        };
        let rules = self.rules.read().clone();
        let ev = evaluate(&flow, &rules, self.default_decision);
        let effect = match (ev.decision, ev.rule) {
            (Decision::Pending, _) => {
                let timeout = match req.mode {
                    RunMode::Blocking { timeout } => Some(timeout),
                    RunMode::NonBlocking => None,
                };
                let info = PendingInfo {
                    request: req.clone(),
                    tables_touched: trace.tables.clone(),
                    submitted_at: Utc::now(),
                };
                match self.pending.wait(info, timeout) {
                    Some(d) => {
                        trace.resolution = Resolution::Manual {
                            effect: d.effect,
                            decision_id: req.id,
                            scope: d.scope,
                        };
                        d.effect
                    }
                    None => {
                        trace.resolution = Resolution::TimedOut;
                        return Err(EscrowError::PendingTimeout);
                    }
                }
            }
            (d, Some(index)) => {
                let effect = if d == Decision::Allow { Effect::Allow } else { Effect::Deny };
                trace.resolution = Resolution::Rule {
                    effect,
                    priority: rules[index].priority,
                    index,
                };
                effect
            }
            (d, None) => {
                let effect = if d == Decision::Allow { Effect::Allow } else { Effect::Deny };
                trace.resolution = Resolution::Default { effect };
                effect
            }
        };
        if effect == Effect::Deny {
            return Err(EscrowError::PolicyDenied);
        }

        let t = Instant::now();
        let snapshot = self.store.read_table(query.table())?;
        let df = sql::execute(&query, &snapshot)?;
        let df = materialize_assets(df, self.store.assets())?;
        trace.timings.access_s = t.elapsed().as_secs_f64();

        match remote {
            None => {
                self.local_invocations.fetch_add(1, Ordering::SeqCst);
                let t = Instant::now();
                let out = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| func(&df)))
                    .map_err(|_| EscrowError::ComputePanic)?;
                trace.timings.compute_s = t.elapsed().as_secs_f64();
                Ok(out?)
            }
            Some((descriptor, options)) => {
                let (out, timings) = client_call(&descriptor, &req.compute_sig, &df, &options)?;
                trace.timings.serialize_s = timings.serialize.as_secs_f64();
                trace.timings.transmit_s = timings.transmit.as_secs_f64();
                trace.timings.compute_s = timings.compute.as_secs_f64();
                Ok(out)
            }
        }
    }
}

#[derive(Default)]
struct Trace {
    tables: Vec<String>,
    resolution: Resolution,
    timings: Timings,
}

/// A request running on its own thread.
pub struct RunHandle {
    id: RequestId,
    handle: JoinHandle<Result<RunOutput, EscrowError>>,
}

impl RunHandle {
    pub fn id(&self) -> RequestId {
        self.id
    }

    pub fn is_finished(&self) -> bool {
        self.handle.is_finished()
    }

    pub fn wait(self) -> Result<RunOutput, EscrowError> {
        self.handle.join().expect("escrow run thread panicked")
    }
}

/// Policy decision for `req` given the tables its query touches. Depends on
/// the app, tables, compute signature, server and normalized query only.
pub fn evaluate_policy(
    req: &DataflowRequest,
    tables_touched: &[String],
    rules: &[PolicyRule],
    default: DefaultDecision,
) -> Decision {
    let normalized = sql::prepare(&req.access_sql, &catalog_builtin())
        .map(|q| q.normalized())
        .unwrap_or_else(|_| req.access_sql.split_whitespace().collect::<Vec<_>>().join(" "));
    let flow = FlowKey {
        app_id: &req.app_id,
        tables: tables_touched,
        compute_sig: &req.compute_sig,
        server: req.server_id.as_deref(),
        query: &normalized,
    };
    evaluate(&flow, rules, default).decision
}

/// Wait helper for callers that poll the pending queue.
pub fn wait_for_pending(escrow: &Escrow, id: RequestId, timeout: Duration) -> bool {
    let deadline = Instant::now() + timeout;
    while Instant::now() < deadline {
        if escrow.pending().iter().any(|p| p.request.id == id) {
            return true;
        }
        thread::sleep(Duration::from_millis(2));
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::ContactRecord;

    fn provider() -> DataProvider {
        DataProvider {
            contacts: vec![
                ContactRecord {
                    contact_id: "c1".into(),
                    given_name: "Ada".into(),
                    family_name: "L".into(),
                    phone_numbers: vec!["+1".into()],
                },
                ContactRecord {
                    contact_id: "c2".into(),
                    given_name: "Bob".into(),
                    family_name: "M".into(),
                    phone_numbers: vec![],
                },
            ],
            ..Default::default()
        }
    }

    fn escrow(default: DefaultDecision) -> Arc<Escrow> {
        let e = Escrow::init(
            &provider(),
            EscrowConfig {
                default_decision: default,
                rules: vec![],
                ..Default::default()
            },
        )
        .unwrap();
        e.register_compute(
            "count/v1",
            |df| Ok(RunOutput::new("text/plain", df.row_count().to_string().into_bytes())),
            true,
        )
        .unwrap();
        Arc::new(e)
    }

    #[test]
    fn allowed_run_returns_output_and_logs() {
        let e = escrow(DefaultDecision::Allow);
        let out = e
            .run(DataflowRequest::new("app", "SELECT givenName FROM Contact WHERE givenName = 'Ada'", "count/v1"))
            .unwrap();
        assert_eq!(out.payload, b"1");
        let entries = e.ledger_list(&LedgerFilter::default());
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].outcome, Outcome::Ok);
        assert_eq!(entries[0].tables_touched, ["Contact"]);
        assert_eq!(
            entries[0].output_digest.as_deref(),
            Some(hex::encode(Sha256::digest(b"1")).as_str())
        );
        assert_eq!(e.local_invocations(), 1);
        assert_eq!(e.direct_snapshot_count(), 0);
    }

    #[test]
    fn denied_run_never_computes() {
        let e = escrow(DefaultDecision::Allow);
        e.add_rule(PolicyRule::any(1, Effect::Deny).table("Contact"));
        let err = e.run(DataflowRequest::new("app", "SELECT * FROM Contact", "count/v1")).unwrap_err();
        assert!(matches!(err, EscrowError::PolicyDenied));
        assert_eq!(e.local_invocations(), 0);
        let entry = &e.ledger_list(&LedgerFilter::default())[0];
        assert_eq!(
            entry.resolution,
            Resolution::Rule {
                effect: Effect::Deny,
                priority: 1,
                index: 0
            }
        );
        assert_eq!(entry.output_digest, None);
    }

    #[test]
    fn bad_query_and_unknown_fn_are_logged() {
        let e = escrow(DefaultDecision::Allow);
        let err = e.run(DataflowRequest::new("app", "SELECT nope FROM Contact", "count/v1")).unwrap_err();
        assert_eq!(err.kind(), "QueryError");
        let err = e.run(DataflowRequest::new("app", "SELECT * FROM Contact", "missing/v1")).unwrap_err();
        assert_eq!(err.kind(), "UnknownComputeFn");
        let err = e
            .run(DataflowRequest::new("app", "SELECT * FROM Contact", "count/v1").on_server("nowhere"))
            .unwrap_err();
        assert_eq!(err.kind(), "UnknownServer");
        let entries = e.ledger_list(&LedgerFilter::default());
        assert_eq!(entries.len(), 3);
        assert!(entries.iter().all(|e| e.resolution == Resolution::NotEvaluated));
    }

    #[test]
    fn pending_always_installs_rule() {
        let e = escrow(DefaultDecision::Pending);
        let req = DataflowRequest::new("app", "select * from contact", "count/v1");
        let id = req.id;
        let h = e.submit(req.clone().timeout(Duration::from_secs(10)));
        assert!(wait_for_pending(&e, id, Duration::from_secs(5)));
        e.decide(id, Effect::Allow, Scope::Always).unwrap();
        assert_eq!(h.wait().unwrap().payload, b"2");
        assert!(matches!(
            e.decide(id, Effect::Allow, Scope::Once),
            Err(EscrowError::UnknownRequest(_))
        ));

        // same dataflow, written differently, is now allowed by the new rule
        let again = DataflowRequest::new("app", "SELECT *   FROM Contact", "count/v1").timeout(Duration::from_millis(50));
        assert!(e.run(again).is_ok());
        let last = e.ledger_list(&LedgerFilter::default()).pop().unwrap();
        assert!(matches!(last.resolution, Resolution::Rule { effect: Effect::Allow, priority: 0, .. }));

        // a different query still pends
        let other = DataflowRequest::new("app", "SELECT givenName FROM Contact", "count/v1").timeout(Duration::from_millis(30));
        assert!(matches!(e.run(other), Err(EscrowError::PendingTimeout)));
    }

    #[test]
    fn remove_rule_by_priority_and_index() {
        let e = escrow(DefaultDecision::Pending);
        e.add_rule(PolicyRule::any(2, Effect::Allow).app("a"));
        e.add_rule(PolicyRule::any(1, Effect::Deny));
        e.add_rule(PolicyRule::any(2, Effect::Deny).app("b"));
        let removed = e.remove_rule(2, 1).unwrap();
        assert_eq!(removed.app_pattern, "b");
        assert!(matches!(e.remove_rule(2, 1), Err(EscrowError::NoSuchRule { .. })));
        assert_eq!(e.rules().len(), 2);
    }

    #[test]
    fn compute_panic_is_contained() {
        let e = escrow(DefaultDecision::Allow);
        e.register_compute("boom/v1", |_| panic!("boom"), true).unwrap();
        let err = e.run(DataflowRequest::new("app", "SELECT * FROM Contact", "boom/v1")).unwrap_err();
        assert_eq!(err.kind(), "ComputeError");
    }
}
