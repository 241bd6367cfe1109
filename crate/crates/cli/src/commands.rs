use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use escrow_core::compute::RegistryManifest;
use escrow_core::escrow::{
    DefaultDecision, Escrow, EscrowConfig, Ledger, LedgerFilter, PolicyRule, RequestId,
};
use escrow_core::http::{serve_http, HttpHandle};
use escrow_core::offload::{
    serve, ChannelSecurity, ClientOptions, ServeError, ServerDescriptor, ServerHandle,
};
use escrow_core::store::{load_fixtures, write_fixtures, DataProvider};
use escrow_core::workloads::{
    bench, prepare, registry_with_passes, standard_functions, synth_provider, BenchConfig, Execution, SynthSpec,
    ThrottleSpec, BENCH_SERVER, DEFAULT_CLASSIFY_PASSES,
};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::ConfigFile;
use crate::error::CliError;
use crate::state::StateDir;
use crate::{
    BenchArgs, ChannelArgs, Cli, Command, DataArgs, DemoArgs, EscrowArgs, FixturesCommand, LedgerCommand,
    PolicyCommand, ServeComputeArgs, ThrottleArgs,
};

const DEFAULT_STATE_DIR: &str = "escrow-state";
const DEFAULT_HTTP_LISTEN: &str = "127.0.0.1:7701";
const DEFAULT_SERVER_LISTEN: &str = "127.0.0.1:7700";
const DEFAULT_SEED: u64 = 42;
const POLL: Duration = Duration::from_millis(50);

struct Context {
    file: ConfigFile,
    state_dir: PathBuf,
}

impl Context {
    fn state(&self) -> Result<StateDir, CliError> {
        StateDir::open(&self.state_dir)
    }

    fn seed(&self, flag: Option<u64>) -> Result<u64, CliError> {
        Ok(self.file.pick(flag, "seed")?.unwrap_or(DEFAULT_SEED))
    }

    fn policy_default(&self, flag: Option<DefaultDecision>) -> Result<DefaultDecision, CliError> {
        Ok(self.file.pick(flag, "policy_default")?.unwrap_or_default())
    }

    fn security(&self, args: &ChannelArgs) -> Result<ChannelSecurity, CliError> {
        Ok(match self.file.pick(args.psk.clone(), "psk")? {
            Some(p) => ChannelSecurity::from_passphrase(&p),
            None => ChannelSecurity::Plain,
        })
    }

    fn throttle(&self, args: &ThrottleArgs) -> Result<Option<ThrottleSpec>, CliError> {
        let rate = self.file.pick(args.throttle_rate, "throttle_rate")?;
        let latency_ms = self.file.pick(args.throttle_latency_ms, "throttle_latency_ms")?;
        match (rate, latency_ms) {
            (None, None) => Ok(None),
            (rate, latency_ms) => {
                let spec = ThrottleSpec {
                    bytes_per_sec: rate.unwrap_or(f64::INFINITY),
                    latency_s: latency_ms.unwrap_or(0.0) / 1000.0,
                };
                if !(spec.bytes_per_sec > 0.0) || !(spec.latency_s >= 0.0) {
                    return Err(CliError::Config("throttle rate must be positive and latency non-negative".into()));
                }
                Ok(Some(spec))
            }
        }
    }

    fn client_options(&self, channel: &ChannelArgs, throttle: &ThrottleArgs) -> Result<ClientOptions, CliError> {
        Ok(ClientOptions {
            security: self.security(channel)?,
            throttle: self.throttle(throttle)?.map(ThrottleSpec::to_throttle).unwrap_or_default(),
            ..ClientOptions::default()
        })
    }

    /// Fixtures if a directory is configured, synthetic data otherwise.
    fn provider(&self, data: &DataArgs, synth: impl FnOnce(u64) -> SynthSpec) -> Result<DataProvider, CliError> {
        match self.file.pick(data.fixtures.clone(), "fixture_dir")? {
            Some(dir) => Ok(load_fixtures(&dir)?),
            None => Ok(synth_provider(&synth(self.seed(data.seed)?))),
        }
    }

    /// An escrow with the standard functions and persisted state attached.
    fn escrow(&self, provider: &DataProvider, default: DefaultDecision) -> Result<Arc<Escrow>, CliError> {
        let state = self.state()?;
        let escrow = Escrow::init(
            provider,
            EscrowConfig {
                default_decision: default,
                rules: state.load_rules()?,
                ledger: state.load_ledger()?,
            },
        )?;
        for (sig, f) in standard_functions(DEFAULT_CLASSIFY_PASSES) {
            escrow.register_compute_arc(sig, f, true)?;
        }
        let escrow = Arc::new(escrow);
        state.attach(&escrow);
        Ok(escrow)
    }
}

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let state_dir = file
        .pick(cli.state_dir, "state_dir")?
        .unwrap_or_else(|| PathBuf::from(DEFAULT_STATE_DIR));
    let ctx = Context { file, state_dir };
    match cli.command {
        Command::ServeCompute(args) => serve_compute(&ctx, args),
        Command::Escrow(args) => run_escrow(&ctx, args),
        Command::Demo(args) => demo(&ctx, args),
        Command::Policy(cmd) => policy(&ctx, cmd),
        Command::Ledger(cmd) => ledger(&ctx, cmd),
        Command::Bench(args) => run_bench(&ctx, args),
        Command::Fixtures(cmd) => fixtures(cmd),
    }
}

fn print_json(value: &serde_json::Value) {
    println!("{value}");
}

/// Set on SIGTERM or SIGINT.
fn termination_flag() -> Result<Arc<AtomicBool>, CliError> {
    let flag = Arc::new(AtomicBool::new(false));
    for sig in [signal_hook::consts::SIGTERM, signal_hook::consts::SIGINT] {
        signal_hook::flag::register(sig, flag.clone()).map_err(|e| CliError::Config(format!("signal handler: {e}")))?;
    }
    Ok(flag)
}

fn wait_for_termination(flag: &AtomicBool) {
    while !flag.load(Ordering::Relaxed) {
        thread::sleep(POLL);
    }
}

fn serve_error(addr: &str, e: ServeError) -> CliError {
    match e {
        ServeError::EmptyRegistry => CliError::Manifest(e.to_string()),
        other => CliError::Bind {
            addr: addr.to_string(),
            message: other.to_string(),
        },
    }
}

fn start_http(addr: &str, escrow: Arc<Escrow>) -> Result<HttpHandle, CliError> {
    serve_http(addr, escrow).map_err(|e| CliError::Bind {
        addr: addr.to_string(),
        message: e.to_string(),
    })
}

fn distinct(http: &str, server: &str) -> Result<(), CliError> {
    if http == server && !http.ends_with(":0") {
        return Err(CliError::Config(format!("http and server listen addresses are both {http}")));
    }
    Ok(())
}

fn serve_compute(ctx: &Context, args: ServeComputeArgs) -> Result<(), CliError> {
    let listen = ctx
        .file
        .pick(args.listen, "server_listen")?
        .unwrap_or_else(|| DEFAULT_SERVER_LISTEN.to_string());
    let full = registry_with_passes(args.classify_passes);
    let (server_id, registry) = match &args.manifest {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Manifest(format!("{}: {e}", path.display())))?;
            let manifest: RegistryManifest =
                serde_json::from_str(&text).map_err(|e| CliError::Manifest(format!("{}: {e}", path.display())))?;
            let registry = full
                .restrict_to(&manifest)
                .map_err(|e| CliError::Manifest(format!("{}: {e}", path.display())))?;
            (manifest.server_id, registry)
        }
        None => (args.server_id, full),
    };
    let signatures = registry.signatures();
    let stop = termination_flag()?;
    let handle = serve(listen.as_str(), registry, ctx.security(&args.channel)?).map_err(|e| serve_error(&listen, e))?;
    print_json(&json!({
        "server_id": server_id,
        "address": handle.local_addr().to_string(),
        "signatures": signatures,
    }));
    wait_for_termination(&stop);
    // in-flight requests finish before the threads are joined
    handle.shutdown();
    eprintln!("compute server {server_id} stopped");
    Ok(())
}

fn parse_server(spec: &str) -> Result<(String, String), CliError> {
    spec.split_once('=')
        .filter(|(id, addr)| !id.is_empty() && !addr.is_empty())
        .map(|(id, addr)| (id.to_string(), addr.to_string()))
        .ok_or_else(|| CliError::Config(format!("--server expects ID=HOST:PORT, got {spec:?}")))
}

fn run_escrow(ctx: &Context, args: EscrowArgs) -> Result<(), CliError> {
    let http = ctx
        .file
        .pick(args.http_listen, "http_listen")?
        .unwrap_or_else(|| DEFAULT_HTTP_LISTEN.to_string());
    let provider = ctx.provider(&args.data, |seed| SynthSpec {
        n_contacts: args.contacts,
        n_photos: args.photos,
        image_bytes: args.image_bytes,
        n_locations: args.locations,
        n_keys: args.keys,
        seed,
    })?;
    let escrow = ctx.escrow(&provider, ctx.policy_default(args.policy_default)?)?;
    let options = ctx.client_options(&args.channel, &args.throttle)?;
    for spec in &args.servers {
        let (id, addr) = parse_server(spec)?;
        escrow.add_server(ServerDescriptor::trusted(id, addr), options.clone())?;
    }
    print_json(&serde_json::to_value(escrow.init_report()).expect("report serializes"));
    let stop = termination_flag()?;
    let api = start_http(&http, escrow.clone())?;
    print_json(&json!({ "http_listen": api.local_addr().to_string() }));
    wait_for_termination(&stop);
    api.shutdown();
    Ok(())
}

fn demo(ctx: &Context, args: DemoArgs) -> Result<(), CliError> {
    let http = ctx
        .file
        .pick(args.http_listen, "http_listen")?
        .unwrap_or_else(|| DEFAULT_HTTP_LISTEN.to_string());
    let server_listen = args.server_listen.unwrap_or_else(|| "127.0.0.1:0".to_string());
    if args.remote {
        distinct(&http, &server_listen)?;
    }
    if !(args.timeout >= 0.0) {
        return Err(CliError::Config("--timeout must be non-negative".into()));
    }
    let provider = ctx.provider(&args.data, |seed| args.workload.synth_spec(args.n, args.image_bytes, seed))?;
    let escrow = ctx.escrow(&provider, ctx.policy_default(args.policy_default)?)?;
    let options = ctx.client_options(&args.channel, &args.throttle)?;

    let mut _server: Option<ServerHandle> = None;
    let server_id = if args.remote {
        let handle = serve(server_listen.as_str(), escrow.registry_snapshot(), options.security.clone())
            .map_err(|e| serve_error(&server_listen, e))?;
        escrow.add_server(
            ServerDescriptor::trusted(BENCH_SERVER, handle.local_addr().to_string()),
            options,
        )?;
        _server = Some(handle);
        Some(BENCH_SERVER.to_string())
    } else if let Some(addr) = &args.server {
        escrow.add_server(ServerDescriptor::trusted("remote", addr.clone()), options)?;
        Some("remote".to_string())
    } else {
        None
    };

    let api = start_http(&http, escrow.clone())?;
    print_json(&json!({ "event": "listening", "http_listen": api.local_addr().to_string() }));

    let mut req = args.workload.request().timeout(Duration::from_secs_f64(args.timeout));
    req.app_id = args.app;
    if let Some(id) = server_id {
        req = req.on_server(id);
    }
    let id = req.id;
    let handle = escrow.submit(req);
    announce_pending(&escrow, id, || handle.is_finished());
    let result = handle.wait();
    api.shutdown();
    match result {
        Ok(out) => {
            print_json(&json!({
                "event": "result",
                "request_id": id.to_string(),
                "status": "ok",
                "content_type": out.content_type,
                "bytes": out.payload.len(),
                "sha256": hex::encode(Sha256::digest(&out.payload)),
            }));
            Ok(())
        }
        Err(e) => {
            print_json(&json!({
                "event": "result",
                "request_id": id.to_string(),
                "status": "error",
                "kind": e.kind(),
                "message": e.to_string(),
            }));
            Err(e.into())
        }
    }
}

/// Print a `pending` event once the request waits for a decision.
fn announce_pending(escrow: &Escrow, id: RequestId, finished: impl Fn() -> bool) {
    while !finished() {
        if escrow.pending().iter().any(|p| p.request.id == id) {
            print_json(&json!({ "event": "pending", "request_id": id.to_string() }));
            return;
        }
        thread::sleep(Duration::from_millis(10));
    }
}

/// Position in `rules` of the `index`-th rule with `priority`.
fn rule_position(rules: &[PolicyRule], priority: i64, index: usize) -> Option<usize> {
    rules
        .iter()
        .enumerate()
        .filter(|(_, r)| r.priority == priority)
        .nth(index)
        .map(|(i, _)| i)
}

fn policy(ctx: &Context, cmd: PolicyCommand) -> Result<(), CliError> {
    let state = ctx.state()?;
    let mut rules = state.load_rules()?;
    match cmd {
        PolicyCommand::Add {
            effect,
            priority,
            app,
            table,
            compute,
            server,
        } => {
            let mut rule = PolicyRule::any(priority, effect);
            if let Some(app) = app {
                rule = rule.app(app);
            }
            if let Some(table) = table {
                rule = rule.table(table);
            }
            if let Some(sig) = compute {
                rule = rule.compute(sig);
            }
            if let Some(server) = server {
                rule = rule.server(server);
            }
            print_json(&serde_json::to_value(&rule).expect("rule serializes"));
            rules.push(rule);
            state.save_rules(&rules)
        }
        PolicyCommand::List => {
            let listed: Vec<_> = rules
                .iter()
                .enumerate()
                .map(|(pos, r)| {
                    let index = rules[..pos].iter().filter(|o| o.priority == r.priority).count();
                    let mut v = serde_json::to_value(r).expect("rule serializes");
                    v["index"] = index.into();
                    v
                })
                .collect();
            print_json(&listed.into());
            Ok(())
        }
        PolicyCommand::Rm { priority, index } => {
            let pos = rule_position(&rules, priority, index)
                .ok_or_else(|| CliError::Config(format!("no rule at priority {priority}, index {index}")))?;
            let removed = rules.remove(pos);
            print_json(&serde_json::to_value(&removed).expect("rule serializes"));
            state.save_rules(&rules)
        }
    }
}

fn ledger(ctx: &Context, cmd: LedgerCommand) -> Result<(), CliError> {
    let LedgerCommand::Show { app_id, table, limit } = cmd;
    let ledger = Ledger::from_entries(ctx.state()?.load_ledger()?);
    for entry in ledger.list(&LedgerFilter { app_id, table, limit }) {
        println!("{}", serde_json::to_string(&entry).expect("entry serializes"));
    }
    Ok(())
}

fn write_report(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn run_bench(ctx: &Context, args: BenchArgs) -> Result<(), CliError> {
    let cfg = BenchConfig {
        image_bytes: args.image_bytes,
        execution: if args.remote {
            Execution::Remote(BENCH_SERVER.into())
        } else {
            Execution::Local
        },
        throttle: ctx.throttle(&args.throttle)?,
        repeats: args.repeats,
        seed: ctx.seed(args.seed)?,
        classify_passes: args.classify_passes,
        ..BenchConfig::new(args.workload, args.n)
    };
    let env = prepare(&cfg)?;
    let report = bench(&cfg, &env.escrow)?;
    if let Some(path) = &args.csv {
        write_report(path, &report.to_csv())?;
    }
    if let Some(path) = &args.json {
        write_report(path, &report.to_json())?;
    }
    if args.csv.is_none() && args.json.is_none() {
        print!("{}", report.to_csv());
    }
    let a = &report.aggregates;
    eprintln!(
        "{} n={} {}: {} runs, mean total {:.4}s, mean transmit {:.4}s",
        cfg.workload,
        cfg.n,
        if args.remote { "remote" } else { "local" },
        report.rows.len(),
        a.total_s.mean,
        a.transmit_s.mean
    );
    match (report.complete, report.error_kind) {
        (true, _) => Ok(()),
        (false, kind) => Err(CliError::Bench {
            kind: kind.unwrap_or("BenchError"),
            message: report.error.unwrap_or_default(),
        }),
    }
}

fn fixtures(cmd: FixturesCommand) -> Result<(), CliError> {
    let FixturesCommand::Generate {
        out,
        contacts,
        photos,
        image_bytes,
        locations,
        keys,
        seed,
    } = cmd;
    let provider = synth_provider(&SynthSpec {
        n_contacts: contacts,
        n_photos: photos,
        image_bytes,
        n_locations: locations,
        n_keys: keys,
        seed,
    });
    write_fixtures(&provider, &out)?;
    print_json(&json!({
        "out": out.display().to_string(),
        "contacts": contacts,
        "photos": photos,
        "locations": locations,
        "keys": keys,
    }));
    Ok(())
}
