//! Reference dataflows, synthetic data and the benchmark harness.

mod functions;
mod synth;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use functions::*;
pub use synth::{phone_number, synth_provider, SynthSpec, EPOCH_MICROS, PHONE_SPACE};

use crate::escrow::{DataflowRequest, Effect, Escrow, EscrowConfig, EscrowError, PolicyRule, Timings};
use crate::offload::{serve, ChannelSecurity, ClientOptions, ServeError, ServerDescriptor, ServerHandle, Throttle};
use crate::offload::throttle_channel;
use crate::store::InitReport;

pub const BENCH_APP: &str = "bench";
pub const BENCH_SERVER: &str = "bench-server";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Workload {
    Contacts,
    Weather,
    Images,
    Classify,
    ContactDiscovery,
    CovidShare,
}

impl Workload {
    pub const ALL: [Workload; 6] = [
        Workload::Contacts,
        Workload::Weather,
        Workload::Images,
        Workload::Classify,
        Workload::ContactDiscovery,
        Workload::CovidShare,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Workload::Contacts => "contacts",
            Workload::Weather => "weather",
            Workload::Images => "images",
            Workload::Classify => "classify",
            Workload::ContactDiscovery => "contact_discovery",
            Workload::CovidShare => "covid_share",
        }
    }

    pub fn access_sql(self) -> &'static str {
        match self {
            Workload::Contacts => "SELECT givenName, familyName, phoneNumbers FROM Contact",
            // newest fix; plain ORDER BY timestamp would give the oldest
            Workload::Weather => "SELECT longitude, latitude FROM Location ORDER BY timestamp DESC LIMIT 1",
            Workload::Images | Workload::Classify => {
                "SELECT asset FROM Photos WHERE mediaType == 'image' ORDER BY creationDate"
            }
            Workload::ContactDiscovery => "SELECT phoneNumbers FROM Contact",
            Workload::CovidShare => "SELECT * FROM KeyTable ORDER BY date DESC LIMIT 14",
        }
    }

    pub fn compute_sig(self) -> &'static str {
        match self {
            Workload::Contacts => CONTACTS_TUPLES,
            Workload::Weather => GET_WEATHER,
            Workload::Images => IDENTITY,
            Workload::Classify => CLASSIFY,
            Workload::ContactDiscovery => CONTACT_DISCOVERY,
            Workload::CovidShare => COVID_SHARE,
        }
    }

    /// Synthetic data sized for `n` records of this workload.
    pub fn synth_spec(self, n: usize, image_bytes: usize, seed: u64) -> SynthSpec {
        let mut spec = SynthSpec {
            image_bytes,
            seed,
            ..SynthSpec::default()
        };
        match self {
            Workload::Contacts | Workload::ContactDiscovery => spec.n_contacts = n,
            Workload::Weather => spec.n_locations = n,
            Workload::Images | Workload::Classify => spec.n_photos = n,
            Workload::CovidShare => spec.n_keys = n,
        }
        spec
    }

    pub fn request(self) -> DataflowRequest {
        DataflowRequest::new(BENCH_APP, self.access_sql(), self.compute_sig())
    }
}

impl fmt::Display for Workload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Workload {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        Workload::ALL
            .into_iter()
            .find(|w| w.name() == key)
            .ok_or_else(|| format!("unknown workload {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Local,
    Remote(String),
}

impl Execution {
    pub fn server_id(&self) -> Option<&str> {
        match self {
            Execution::Local => None,
            Execution::Remote(id) => Some(id),
        }
    }

    fn label(&self) -> &'static str {
        match self {
            Execution::Local => "local",
            Execution::Remote(_) => "remote",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThrottleSpec {
    pub bytes_per_sec: f64,
    pub latency_s: f64,
}

impl ThrottleSpec {
    pub fn to_throttle(self) -> Throttle {
        throttle_channel(self.bytes_per_sec, Duration::from_secs_f64(self.latency_s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub workload: Workload,
    pub n: usize,
    pub image_bytes: usize,
    pub execution: Execution,
    pub throttle: Option<ThrottleSpec>,
    pub repeats: usize,
    pub seed: u64,
    pub classify_passes: u32,
}

impl BenchConfig {
    pub fn new(workload: Workload, n: usize) -> Self {
        Self {
            workload,
            n,
            image_bytes: 16 * 1024,
            execution: Execution::Local,
            throttle: None,
            repeats: 10,
            seed: 42,
            classify_passes: DEFAULT_CLASSIFY_PASSES,
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.n == 0 {
            return Err(BenchError::Config("n must be positive".into()));
        }
        if self.repeats == 0 {
            return Err(BenchError::Config("repeats must be at least 1".into()));
        }
        if matches!(self.throttle, Some(t) if !(t.bytes_per_sec > 0.0) || !(t.latency_s >= 0.0)) {
            return Err(BenchError::Config("throttle rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid bench config: {0}")]
    Config(String),
    #[error(transparent)]
    Escrow(#[from] EscrowError),
    #[error(transparent)]
    Serve(#[from] ServeError),
}

/// An escrow loaded with synthetic data for `cfg`, plus the loopback compute
/// server when the config asks for remote execution.
pub struct BenchEnv {
    pub escrow: Arc<Escrow>,
    pub server: Option<ServerHandle>,
}

pub fn prepare(cfg: &BenchConfig) -> Result<BenchEnv, BenchError> {
    cfg.validate()?;
    let provider = synth_provider(&cfg.workload.synth_spec(cfg.n, cfg.image_bytes, cfg.seed));
    let escrow = Escrow::init(
        &provider,
        EscrowConfig {
            rules: vec![PolicyRule::any(0, Effect::Allow).app(BENCH_APP)],
            ..EscrowConfig::default()
        },
    )?;
    for (sig, f) in standard_functions(cfg.classify_passes) {
        escrow.register_compute_arc(sig, f, true)?;
    }
    let server = match &cfg.execution {
        Execution::Local => None,
        Execution::Remote(id) => {
            let handle = serve("127.0.0.1:0", escrow.registry_snapshot(), ChannelSecurity::Plain)?;
            escrow.add_server(
                ServerDescriptor::trusted(id.clone(), handle.local_addr().to_string()),
                ClientOptions {
                    throttle: cfg.throttle.map(ThrottleSpec::to_throttle).unwrap_or_default(),
                    timeout: Duration::from_secs(600),
                    ..ClientOptions::default()
                },
            )?;
            Some(handle)
        }
    };
    Ok(BenchEnv {
        escrow: Arc::new(escrow),
        server,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub workload: String,
    pub n: usize,
    pub execution: String,
    pub repeat: usize,
    pub access_s: f64,
    pub serialize_s: f64,
    pub transmit_s: f64,
    pub compute_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; zero for a single repeat.
    pub stddev: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Stat {
        if xs.is_empty() {
            return Stat::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let stddev = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Stat { mean, stddev }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub access_s: Stat,
    pub serialize_s: Stat,
    pub transmit_s: Stat,
    pub compute_s: Stat,
    pub total_s: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub init_report: InitReport,
    pub rows: Vec<BenchRow>,
    pub aggregates: Aggregates,
    /// SHA-256 of each repeat's output payload.
    pub output_digests: Vec<String>,
    pub complete: bool,
    pub error: Option<String>,
    #[serde(skip)]
    pub error_kind: Option<&'static str>,
}

impl BenchReport {
    pub const CSV_HEADER: &'static str = "workload,n,execution,repeat,access_s,serialize_s,transmit_s,compute_s,total_s";

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.rows.is_empty() {
            w.write_record(Self::CSV_HEADER.split(',')).expect("write to memory");
        }
        for row in &self.rows {
            w.serialize(row).expect("write to memory");
        }
        String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv is utf-8")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Run the configured workload `cfg.repeats` times through `escrow.run`.
/// A failing run stops the bench; the partial report is marked incomplete.
pub fn bench(cfg: &BenchConfig, escrow: &Escrow) -> Result<BenchReport, BenchError> {
    cfg.validate()?;
    let mut report = BenchReport {
        config: cfg.clone(),
        init_report: escrow.init_report().clone(),
        rows: Vec::with_capacity(cfg.repeats),
        aggregates: Aggregates::default(),
        output_digests: Vec::new(),
        complete: true,
        error: None,
        error_kind: None,
    };
    for repeat in 0..cfg.repeats {
        let mut req = cfg.workload.request();
        if let Some(id) = cfg.execution.server_id() {
            req = req.on_server(id);
        }
        let id = req.id;
        let result = escrow.run(req);
        let timings = escrow.ledger().find(id).map(|e| e.timings).unwrap_or_default();
        match result {
            Ok(out) => {
                report.output_digests.push(hex::encode(Sha256::digest(&out.payload)));
                report.rows.push(row(cfg, repeat, timings));
            }
            Err(e) => {
                report.complete = false;
                report.error_kind = Some(e.kind());
                report.error = Some(e.to_string());
                break;
            }
        }
    }
    let col = |f: fn(&BenchRow) -> f64| Stat::of(&report.rows.iter().map(f).collect::<Vec<_>>());
    report.aggregates = Aggregates {
        access_s: col(|r| r.access_s),
        serialize_s: col(|r| r.serialize_s),
        transmit_s: col(|r| r.transmit_s),
        compute_s: col(|r| r.compute_s),
        total_s: col(|r| r.total_s),
    };
    Ok(report)
}

fn row(cfg: &BenchConfig, repeat: usize, t: Timings) -> BenchRow {
    BenchRow {
        workload: cfg.workload.name().into(),
        n: cfg.n,
        execution: cfg.execution.label().into(),
        repeat,
        access_s: t.access_s,
        serialize_s: t.serialize_s,
        transmit_s: t.transmit_s,
        compute_s: t.compute_s,
        total_s: t.total_s,
    }
}
