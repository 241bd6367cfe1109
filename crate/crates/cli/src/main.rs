//! `escrow`: operator entry points for the data escrow.
//!
//! Exit codes: 0 ok, 1 usage or configuration error, 2 bind failure,
//! 3 fixture or manifest error, 4 denied by policy, 5 timeout, 6 remote
//! error. Commands that declare output write JSON to stdout; diagnostics go
//! to stderr.

mod commands;
mod config;
mod error;
mod state;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use escrow_core::escrow::{DefaultDecision, Effect};
use escrow_core::workloads::{Workload, DEFAULT_CLASSIFY_PASSES};
use tracing_subscriber::EnvFilter;

use crate::error::{EXIT_OK, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "escrow", version, about = "Data escrow: run dataflows over personal data under policy")]
struct Cli {
    /// Key-value config file.
    #[arg(long, global = true, env = "ESCROW_CONFIG")]
    config: Option<PathBuf>,
    /// Directory holding policies.json and ledger.jsonl [default: escrow-state].
    #[arg(long, global = true, env = "ESCROW_STATE_DIR")]
    state_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Host the standard compute functions for remote execution.
    ServeCompute(ServeComputeArgs),
    /// Initialize an escrow and serve its HTTP API until terminated.
    Escrow(EscrowArgs),
    /// Run one workload dataflow through a fresh escrow.
    Demo(DemoArgs),
    /// Manage persisted policy rules.
    #[command(subcommand)]
    Policy(PolicyCommand),
    /// Inspect the persisted transparency ledger.
    #[command(subcommand)]
    Ledger(LedgerCommand),
    /// Time a workload over repeated runs and write a CSV/JSON report.
    Bench(BenchArgs),
    /// Provider fixture utilities.
    #[command(subcommand)]
    Fixtures(FixturesCommand),
}

#[derive(Debug, Args)]
struct ServeComputeArgs {
    /// Listen address [default: 127.0.0.1:7700].
    #[arg(long, env = "ESCROW_SERVER_LISTEN")]
    listen: Option<String>,
    #[arg(long, default_value = "compute-1")]
    server_id: String,
    /// JSON `{server_id, signatures}` restricting the hosted functions.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    channel: ChannelArgs,
    #[arg(long, default_value_t = DEFAULT_CLASSIFY_PASSES)]
    classify_passes: u32,
}

#[derive(Debug, Args, Clone, Default)]
struct ChannelArgs {
    /// Passphrase for the authenticated channel; plain loopback otherwise.
    #[arg(long, env = "ESCROW_PSK", hide_env_values = true)]
    psk: Option<String>,
}

#[derive(Debug, Args, Clone, Default)]
struct ThrottleArgs {
    /// Throttle traffic toward compute servers to this many bytes per second.
    #[arg(long)]
    throttle_rate: Option<f64>,
    /// Latency added per flush when throttling, in milliseconds.
    #[arg(long)]
    throttle_latency_ms: Option<f64>,
}

#[derive(Debug, Args, Clone, Default)]
struct DataArgs {
    /// Load provider fixtures from this directory instead of synthesizing.
    #[arg(long, env = "ESCROW_FIXTURE_DIR")]
    fixtures: Option<PathBuf>,
    /// Seed for synthetic data [default: 42].
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct EscrowArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 1000)]
    contacts: usize,
    #[arg(long, default_value_t = 100)]
    photos: usize,
    #[arg(long, default_value_t = 16 * 1024)]
    image_bytes: usize,
    #[arg(long, default_value_t = 100)]
    locations: usize,
    #[arg(long, default_value_t = 14)]
    keys: usize,
    /// HTTP API address [default: 127.0.0.1:7701].
    #[arg(long, env = "ESCROW_HTTP_LISTEN")]
    http_listen: Option<String>,
    /// Decision when no rule matches [default: pending].
    #[arg(long)]
    policy_default: Option<DefaultDecision>,
    /// Trusted compute server as ID=HOST:PORT; repeatable.
    #[arg(long = "server", value_name = "ID=ADDR")]
    servers: Vec<String>,
    #[command(flatten)]
    channel: ChannelArgs,
    #[command(flatten)]
    throttle: ThrottleArgs,
}

#[derive(Debug, Args)]
struct DemoArgs {
    /// contacts, weather, images, classify, contact-discovery or covid-share.
    workload: Workload,
    #[command(flatten)]
    data: DataArgs,
    /// Synthetic record count for the workload's table.
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Size of each synthetic photo.
    #[arg(long, default_value_t = 16 * 1024)]
    image_bytes: usize,
    /// App identity the request is made under.
    #[arg(long, default_value = "demo")]
    app: String,
    /// Run compute on an in-process loopback server.
    #[arg(long, conflicts_with = "server")]
    remote: bool,
    /// Run compute on an external trusted server at HOST:PORT.
    #[arg(long)]
    server: Option<String>,
    /// Address for the in-process server with --remote [default: 127.0.0.1:0].
    #[arg(long, env = "ESCROW_SERVER_LISTEN")]
    server_listen: Option<String>,
    /// HTTP API address for deciding pending requests [default: 127.0.0.1:7701].
    #[arg(long, env = "ESCROW_HTTP_LISTEN")]
    http_listen: Option<String>,
    /// Decision when no rule matches [default: pending].
    #[arg(long)]
    policy_default: Option<DefaultDecision>,
    /// Seconds to wait for a decision on a pending request.
    #[arg(long, default_value_t = 30.0)]
    timeout: f64,
    #[command(flatten)]
    channel: ChannelArgs,
    #[command(flatten)]
    throttle: ThrottleArgs,
}

#[derive(Debug, Subcommand)]
enum PolicyCommand {
    /// Append a rule; unset patterns match anything.
    Add {
        #[arg(long)]
        effect: Effect,
        #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
        priority: i64,
        #[arg(long)]
        app: Option<String>,
        #[arg(long)]
        table: Option<String>,
        #[arg(long)]
        compute: Option<String>,
        /// Server id, or `local` for on-device execution.
        #[arg(long)]
        server: Option<String>,
    },
    /// Print the rules as a JSON array.
    List,
    /// Remove the INDEX-th rule among those with PRIORITY.
    Rm {
        #[arg(allow_negative_numbers = true)]
        priority: i64,
        index: usize,
    },
}

#[derive(Debug, Subcommand)]
enum LedgerCommand {
    /// Print entries as JSON lines, oldest first.
    Show {
        #[arg(long)]
        app_id: Option<String>,
        #[arg(long)]
        table: Option<String>,
        /// Keep only the most recent entries.
        #[arg(long)]
        limit: Option<usize>,
    },
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    workload: Workload,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 16 * 1024)]
    image_bytes: usize,
    /// Offload to an in-process loopback compute server.
    #[arg(long)]
    remote: bool,
    #[command(flatten)]
    throttle: ThrottleArgs,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_CLASSIFY_PASSES)]
    classify_passes: u32,
    /// Write the per-repeat CSV here; stdout if neither --csv nor --json is given.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write the full JSON report here.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum FixturesCommand {
    /// Write a deterministic synthetic fixture directory.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        contacts: usize,
        #[arg(long, default_value_t = 10)]
        photos: usize,
        #[arg(long, default_value_t = 4096)]
        image_bytes: usize,
        #[arg(long, default_value_t = 20)]
        locations: usize,
        #[arg(long, default_value_t = 14)]
        keys: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("ESCROW_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
