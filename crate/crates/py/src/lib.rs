//! Python bindings: an in-process escrow over synthetic or fixture data,
//! with policy management, the ledger and loopback offloading.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use escrow_core::datamodel::{catalog_builtin, Value};
use escrow_core::escrow::{
    DataflowRequest, DefaultDecision, Effect, Escrow as CoreEscrow, EscrowConfig, EscrowError, LedgerFilter,
    PolicyRule, RequestId, Scope,
};
use escrow_core::http::{serve_http, HttpHandle};
use escrow_core::offload::{deserialize_df, serve, ChannelSecurity, ClientOptions, ServerDescriptor, ServerHandle};
use escrow_core::sql;
use escrow_core::store::load_fixtures;
use escrow_core::workloads::{standard_functions, synth_provider, SynthSpec, Workload, DEFAULT_CLASSIFY_PASSES};
use parking_lot::Mutex;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict, PyList};

create_exception!(escrow_py, DataflowError, PyException, "A dataflow failed; args are (kind, message).");

fn dataflow_err(e: EscrowError) -> PyErr {
    DataflowError::new_err((e.kind(), e.to_string()))
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(frozen, get_all)]
pub struct RunOutput {
    content_type: String,
    payload: Vec<u8>,
}

#[pymethods]
impl RunOutput {
    fn __repr__(&self) -> String {
        format!("RunOutput(content_type={:?}, {} bytes)", self.content_type, self.payload.len())
    }
}

#[pyclass]
pub struct Escrow {
    inner: Arc<CoreEscrow>,
    servers: Mutex<Vec<ServerHandle>>,
    http: Mutex<Option<HttpHandle>>,
}

impl Escrow {
    fn build(provider: &escrow_core::store::DataProvider, default_decision: &str) -> PyResult<Self> {
        let default: DefaultDecision = default_decision.parse().map_err(value_err)?;
        let inner = CoreEscrow::init(
            provider,
            EscrowConfig {
                default_decision: default,
                ..EscrowConfig::default()
            },
        )
        .map_err(dataflow_err)?;
        for (sig, f) in standard_functions(DEFAULT_CLASSIFY_PASSES) {
            inner.register_compute_arc(sig, f, true).map_err(dataflow_err)?;
        }
        Ok(Self {
            inner: Arc::new(inner),
            servers: Mutex::new(Vec::new()),
            http: Mutex::new(None),
        })
    }
}

#[pymethods]
impl Escrow {
    /// An escrow over deterministic synthetic data.
    #[new]
    #[pyo3(signature = (default_decision="pending", *, seed=42, contacts=100, photos=10, image_bytes=4096, locations=20, keys=14))]
    fn new(
        default_decision: &str,
        seed: u64,
        contacts: usize,
        photos: usize,
        image_bytes: usize,
        locations: usize,
        keys: usize,
    ) -> PyResult<Self> {
        let provider = synth_provider(&SynthSpec {
            n_contacts: contacts,
            n_photos: photos,
            image_bytes,
            n_locations: locations,
            n_keys: keys,
            seed,
        });
        Self::build(&provider, default_decision)
    }

    /// An escrow over a provider fixture directory.
    #[staticmethod]
    #[pyo3(signature = (path, default_decision="pending"))]
    fn from_fixtures(path: PathBuf, default_decision: &str) -> PyResult<Self> {
        let provider = load_fixtures(&path).map_err(value_err)?;
        Self::build(&provider, default_decision)
    }

    /// Row counts per table after initialization.
    fn init_report<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let out = PyDict::new(py);
        for t in &self.inner.init_report().tables {
            out.set_item(&t.table, t.row_count)?;
        }
        Ok(out)
    }

    /// Run a dataflow. Blocks without holding the GIL while a pending
    /// request waits for `decide`.
    #[pyo3(signature = (app_id, access_sql, compute_sig, server=None, timeout=30.0))]
    fn run(
        &self,
        py: Python<'_>,
        app_id: String,
        access_sql: String,
        compute_sig: String,
        server: Option<String>,
        timeout: f64,
    ) -> PyResult<RunOutput> {
        let mut req = DataflowRequest::new(app_id, access_sql, compute_sig)
            .timeout(Duration::try_from_secs_f64(timeout).map_err(value_err)?);
        req.server_id = server;
        let inner = self.inner.clone();
        let out = py.detach(move || inner.run(req)).map_err(dataflow_err)?;
        Ok(RunOutput {
            content_type: out.content_type,
            payload: out.payload,
        })
    }

    /// Run one of the standard workloads.
    #[pyo3(signature = (name, server=None, timeout=30.0))]
    fn run_workload(&self, py: Python<'_>, name: &str, server: Option<String>, timeout: f64) -> PyResult<RunOutput> {
        let w: Workload = name.parse().map_err(value_err)?;
        let req = w.request();
        self.run(py, req.app_id, req.access_sql, req.compute_sig, server, timeout)
    }

    #[pyo3(signature = (priority, effect, *, app="*", table="*", compute="*", server="*"))]
    fn add_rule(&self, priority: i64, effect: &str, app: &str, table: &str, compute: &str, server: &str) -> PyResult<()> {
        let effect: Effect = effect.parse().map_err(value_err)?;
        self.inner
            .add_rule(PolicyRule::any(priority, effect).app(app).table(table).compute(compute).server(server));
        Ok(())
    }

    fn remove_rule(&self, priority: i64, index: usize) -> PyResult<()> {
        self.inner.remove_rule(priority, index).map(drop).map_err(dataflow_err)
    }

    /// Rules as JSON text, highest priority first.
    fn rules_json(&self) -> String {
        serde_json::to_string(&self.inner.rules()).expect("rules serialize")
    }

    /// Ledger entries as JSON text, oldest first.
    #[pyo3(signature = (app_id=None, table=None, limit=None))]
    fn ledger_json(&self, app_id: Option<String>, table: Option<String>, limit: Option<usize>) -> String {
        let entries = self.inner.ledger_list(&LedgerFilter { app_id, table, limit });
        serde_json::to_string(&entries).expect("ledger serializes")
    }

    fn ledger_len(&self) -> usize {
        self.inner.ledger().len()
    }

    /// Requests waiting for a decision, as dicts.
    fn pending<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyList>> {
        let list = PyList::empty(py);
        for p in self.inner.pending() {
            let d = PyDict::new(py);
            d.set_item("id", p.request.id.to_string())?;
            d.set_item("app_id", &p.request.app_id)?;
            d.set_item("access_sql", &p.request.access_sql)?;
            d.set_item("compute_sig", &p.request.compute_sig)?;
            d.set_item("server_id", &p.request.server_id)?;
            d.set_item("tables", &p.tables_touched)?;
            list.append(d)?;
        }
        Ok(list)
    }

    #[pyo3(signature = (request_id, verdict, scope="once"))]
    fn decide(&self, request_id: &str, verdict: &str, scope: &str) -> PyResult<()> {
        let id: RequestId = request_id.parse().map_err(value_err)?;
        let effect: Effect = verdict.parse().map_err(value_err)?;
        let scope: Scope = scope.parse().map_err(value_err)?;
        self.inner.decide(id, effect, scope).map_err(dataflow_err)
    }

    /// Host this escrow's functions on a loopback compute server and
    /// register it as trusted under `server_id`. Returns the address.
    #[pyo3(signature = (server_id, listen="127.0.0.1:0"))]
    fn start_compute_server(&self, server_id: &str, listen: &str) -> PyResult<String> {
        let handle = serve(listen, self.inner.registry_snapshot(), ChannelSecurity::Plain).map_err(value_err)?;
        let addr = handle.local_addr().to_string();
        self.add_server(server_id, &addr, true)?;
        self.servers.lock().push(handle);
        Ok(addr)
    }

    #[pyo3(signature = (server_id, address, trusted=true))]
    fn add_server(&self, server_id: &str, address: &str, trusted: bool) -> PyResult<()> {
        let mut desc = ServerDescriptor::trusted(server_id, address);
        desc.trusted = trusted;
        self.inner
            .add_server(desc, ClientOptions::default())
            .map_err(dataflow_err)
    }

    /// Serve the HTTP API; returns the bound address.
    #[pyo3(signature = (listen="127.0.0.1:0"))]
    fn serve_http(&self, listen: &str) -> PyResult<String> {
        let handle = serve_http(listen, self.inner.clone()).map_err(value_err)?;
        let addr = handle.local_addr().to_string();
        if let Some(old) = self.http.lock().replace(handle) {
            old.shutdown();
        }
        Ok(addr)
    }

    fn local_invocations(&self) -> u64 {
        self.inner.local_invocations()
    }
}

/// Parse and validate against the built-in catalog; returns canonical SQL.
#[pyfunction]
fn canonical_sql(query: &str) -> PyResult<String> {
    Ok(sql::prepare(query, &catalog_builtin()).map_err(value_err)?.normalized())
}

fn value_to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Int64(i) | Value::Timestamp(i) => i.into_pyobject(py)?.into_any(),
        Value::Float64(f) => f.into_pyobject(py)?.into_any(),
        Value::Text(s) => s.into_pyobject(py)?.into_any(),
        Value::Bytes(b) => PyBytes::new(py, b).into_any(),
        Value::TextList(l) => PyList::new(py, l)?.into_any(),
    })
}

/// Decode an ESDF payload into `{column: [values]}`.
#[pyfunction]
fn decode_esdf<'py>(py: Python<'py>, payload: &[u8]) -> PyResult<Bound<'py, PyDict>> {
    let df = deserialize_df(payload).map_err(value_err)?;
    let out = PyDict::new(py);
    for col in df.columns() {
        let values = col
            .values
            .iter()
            .map(|v| value_to_py(py, v))
            .collect::<PyResult<Vec<_>>>()?;
        out.set_item(&col.name, PyList::new(py, values)?)?;
    }
    Ok(out)
}

/// Names of the standard workloads.
#[pyfunction]
fn workloads() -> Vec<&'static str> {
    Workload::ALL.iter().map(|w| w.name()).collect()
}

#[pymodule]
pub fn escrow_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Escrow>()?;
    m.add_class::<RunOutput>()?;
    m.add("DataflowError", m.py().get_type::<DataflowError>())?;
    m.add_function(wrap_pyfunction!(canonical_sql, m)?)?;
    m.add_function(wrap_pyfunction!(decode_esdf, m)?)?;
    m.add_function(wrap_pyfunction!(workloads, m)?)?;
    Ok(())
}
