use std::fs;
use std::io::{BufRead, BufReader, Lines};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Child, ChildStdout, Command, Output, Stdio};
use std::time::Duration;

use escrow_core::datamodel::{Column, Dataframe, Value, ValueType};
use escrow_core::offload::{
    client_call, client_call_async, serialize_df, throttle_channel, ClientOptions, ServerDescriptor,
};
use escrow_core::workloads::IDENTITY;
use serde_json::Value as Json;
use tempfile::TempDir;

fn escrow(state: &Path) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_escrow"));
    cmd.arg("--state-dir").arg(state);
    cmd.env_remove("ESCROW_HTTP_LISTEN")
        .env_remove("ESCROW_SERVER_LISTEN")
        .env_remove("ESCROW_CONFIG")
        .env_remove("ESCROW_PSK");
    cmd
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawn escrow")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn json_lines(out: &Output) -> Vec<Json> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap_or_else(|e| panic!("{l}: {e}")))
        .collect()
}

/// A long-running command whose stdout is read line by line.
struct Running {
    child: Child,
    lines: Lines<BufReader<ChildStdout>>,
}

impl Running {
    fn spawn(cmd: &mut Command) -> Self {
        let mut child = cmd.stdout(Stdio::piped()).stderr(Stdio::null()).spawn().unwrap();
        let lines = BufReader::new(child.stdout.take().unwrap()).lines();
        Self { child, lines }
    }

    fn next_json(&mut self) -> Json {
        let line = self.lines.next().expect("output line").unwrap();
        serde_json::from_str(&line).unwrap()
    }

    fn terminate(mut self) -> i32 {
        unsafe { libc::kill(self.child.id() as i32, libc::SIGTERM) };
        self.child.wait().unwrap().code().expect("exited normally")
    }
}

impl Drop for Running {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn quick_demo(state: &Path, workload: &str) -> Command {
    let mut cmd = escrow(state);
    cmd.args(["demo", workload, "--n", "20", "--http-listen", "127.0.0.1:0"]);
    cmd
}

#[test]
fn denied_demo_exits_4_and_is_in_the_ledger() {
    let tmp = TempDir::new().unwrap();
    let out = run(escrow(tmp.path()).args(["policy", "add", "--effect", "deny", "--table", "Contact"]));
    assert_eq!(code(&out), 0);

    let out = run(&mut quick_demo(tmp.path(), "contacts"));
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("PolicyDenied"));
    let result = json_lines(&out).pop().unwrap();
    assert_eq!(result["kind"], "PolicyDenied");

    let out = run(escrow(tmp.path()).args(["ledger", "show"]));
    let entries = json_lines(&out);
    assert_eq!(entries.len(), 1);
    assert_eq!(entries[0]["resolution"]["kind"], "rule");
    assert_eq!(entries[0]["tables_touched"][0], "Contact");
}

#[test]
fn ledger_sequence_continues_across_invocations() {
    let tmp = TempDir::new().unwrap();
    for _ in 0..2 {
        let out = run(quick_demo(tmp.path(), "weather").args(["--policy-default", "allow"]));
        assert_eq!(code(&out), 0);
    }
    let out = run(quick_demo(tmp.path(), "contacts").args(["--policy-default", "deny"]));
    assert_eq!(code(&out), 4);

    let seqs: Vec<u64> = json_lines(&run(escrow(tmp.path()).args(["ledger", "show"])))
        .iter()
        .map(|e| e["seq"].as_u64().unwrap())
        .collect();
    assert_eq!(seqs, [1, 2, 3]);
    let latest = json_lines(&run(escrow(tmp.path()).args(["ledger", "show", "--limit", "1"])));
    assert_eq!(latest[0]["seq"], 3);
    let contact = json_lines(&run(escrow(tmp.path()).args(["ledger", "show", "--table", "contact"])));
    assert_eq!(contact.len(), 1);
}

#[test]
fn undecided_demo_times_out_with_5() {
    let tmp = TempDir::new().unwrap();
    let out = run(quick_demo(tmp.path(), "weather").args(["--timeout", "0.3"]));
    assert_eq!(code(&out), 5);
    let events: Vec<String> = json_lines(&out)
        .iter()
        .map(|e| e["event"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(events, ["listening", "pending", "result"]);
}

#[test]
fn policy_list_and_remove() {
    let tmp = TempDir::new().unwrap();
    for args in [
        &["--effect", "deny", "--priority", "5", "--table", "Contact"][..],
        &["--effect", "allow", "--priority", "5", "--app", "maps"],
        &["--effect", "allow", "--priority", "-1"],
    ] {
        assert_eq!(code(&run(escrow(tmp.path()).args(["policy", "add"]).args(args))), 0);
    }
    let list = json_lines(&run(escrow(tmp.path()).args(["policy", "list"])));
    let idx: Vec<(i64, u64)> = list[0]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| (r["priority"].as_i64().unwrap(), r["index"].as_u64().unwrap()))
        .collect();
    assert_eq!(idx, [(5, 0), (5, 1), (-1, 0)]);

    let out = run(escrow(tmp.path()).args(["policy", "rm", "5", "1"]));
    assert_eq!(code(&out), 0);
    assert_eq!(json_lines(&out)[0]["app_pattern"], "maps");
    assert_eq!(code(&run(escrow(tmp.path()).args(["policy", "rm", "5", "1"]))), 1);
    let list = json_lines(&run(escrow(tmp.path()).args(["policy", "list"])));
    assert_eq!(list[0].as_array().unwrap().len(), 2);
}

#[test]
fn remote_bench_writes_ten_csv_rows() {
    let tmp = TempDir::new().unwrap();
    let csv = tmp.path().join("classify.csv");
    let json = tmp.path().join("classify.json");
    let out = run(escrow(tmp.path())
        .args(["bench", "--workload", "classify", "--n", "100", "--remote", "--csv"])
        .arg(&csv)
        .arg("--json")
        .arg(&json));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let mut reader = csv::Reader::from_path(&csv).unwrap();
    let headers = reader.headers().unwrap().clone();
    assert_eq!(
        headers.iter().collect::<Vec<_>>(),
        ["workload", "n", "execution", "repeat", "access_s", "serialize_s", "transmit_s", "compute_s", "total_s"]
    );
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|r| &r[0] == "classify" && &r[1] == "100" && &r[2] == "remote"));

    let report: Json = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(report["complete"], true);
    assert_eq!(report["rows"].as_array().unwrap().len(), 10);
    // classify is deterministic, so every repeat hashes the same
    let digests = report["output_digests"].as_array().unwrap();
    assert!(digests.iter().all(|d| d == &digests[0]));
}

fn occupied_port() -> (TcpListener, String) {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = l.local_addr().unwrap().to_string();
    (l, addr)
}

#[test]
fn bind_failures_exit_2() {
    let tmp = TempDir::new().unwrap();
    let (_guard, addr) = occupied_port();
    let out = run(escrow(tmp.path()).args(["serve-compute", "--listen", &addr]));
    assert_eq!(code(&out), 2);
    // the environment override is honored
    let mut cmd = escrow(tmp.path());
    cmd.args(["demo", "weather", "--n", "5", "--policy-default", "allow"])
        .env("ESCROW_HTTP_LISTEN", &addr);
    assert_eq!(code(&run(&mut cmd)), 2);
}

#[test]
fn serve_compute_answers_and_shuts_down_cleanly() {
    let tmp = TempDir::new().unwrap();
    let mut server = Running::spawn(escrow(tmp.path()).args(["serve-compute", "--listen", "127.0.0.1:0", "--server-id", "lab"]));
    let hello = server.next_json();
    assert_eq!(hello["server_id"], "lab");
    let desc = ServerDescriptor::trusted("lab", hello["address"].as_str().unwrap());

    let df = Dataframe::new(vec![Column::new("x", ValueType::Int64, vec![Value::Int64(7)])]).unwrap();
    let (out, _) = client_call(&desc, IDENTITY, &df, &ClientOptions::default()).unwrap();
    assert_eq!(out.payload, serialize_df(&df));

    // a slow call is still answered after SIGTERM
    let big = Dataframe::new(vec![Column::new("b", ValueType::Bytes, vec![Value::Bytes(vec![1; 300_000])])]).unwrap();
    let slow = ClientOptions {
        throttle: throttle_channel(1_000_000.0, Duration::ZERO),
        ..ClientOptions::default()
    };
    let pending = client_call_async(desc, IDENTITY.into(), big.clone(), slow);
    std::thread::sleep(Duration::from_millis(100));
    assert_eq!(server.terminate(), 0);
    assert_eq!(pending.wait().unwrap().0.payload, serialize_df(&big));
}

#[test]
fn serve_compute_manifest() {
    let tmp = TempDir::new().unwrap();
    let good = tmp.path().join("good.json");
    fs::write(&good, r#"{"server_id":"weather-box","signatures":["get_weather/v1"]}"#).unwrap();
    let mut server = Running::spawn(escrow(tmp.path()).args(["serve-compute", "--listen", "127.0.0.1:0", "--manifest"]).arg(&good));
    let hello = server.next_json();
    assert_eq!(hello["server_id"], "weather-box");
    assert_eq!(hello["signatures"], serde_json::json!(["get_weather/v1"]));
    assert_eq!(server.terminate(), 0);

    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"server_id":"x","signatures":["nope/v9"]}"#).unwrap();
    let out = run(escrow(tmp.path()).args(["serve-compute", "--listen", "127.0.0.1:0", "--manifest"]).arg(&bad));
    assert_eq!(code(&out), 3);
    fs::write(&bad, "{").unwrap();
    let out = run(escrow(tmp.path()).args(["serve-compute", "--listen", "127.0.0.1:0", "--manifest"]).arg(&bad));
    assert_eq!(code(&out), 3);
}

#[test]
fn escrow_init_reports() {
    let tmp = TempDir::new().unwrap();

    let mut seeded = Running::spawn(escrow(tmp.path()).args([
        "escrow", "--seed", "3", "--contacts", "5000", "--photos", "5000", "--image-bytes", "64", "--http-listen",
        "127.0.0.1:0",
    ]));
    let report = seeded.next_json();
    let count = |r: &Json, t: &str| {
        r["tables"]
            .as_array()
            .unwrap()
            .iter()
            .find(|x| x["table"] == t)
            .map(|x| x["row_count"].as_u64().unwrap())
    };
    assert_eq!(count(&report, "Contact"), Some(5000));
    assert_eq!(count(&report, "Photos"), Some(5000));
    let http = seeded.next_json()["http_listen"].as_str().unwrap().to_string();
    assert!(std::net::TcpStream::connect(&http).is_ok());
    assert_eq!(seeded.terminate(), 0);

    // an empty fixture directory gives an empty but healthy escrow
    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let mut blank = Running::spawn(escrow(tmp.path()).args(["escrow", "--http-listen", "127.0.0.1:0", "--fixtures"]).arg(&empty));
    let report = blank.next_json();
    assert_eq!(count(&report, "Contact"), Some(0));
    assert!(blank.next_json()["http_listen"].is_string());
    assert_eq!(blank.terminate(), 0);

    let corrupt = tmp.path().join("corrupt");
    fs::create_dir(&corrupt).unwrap();
    fs::write(corrupt.join("photos.jsonl"), "{\"asset\": 1}\n").unwrap();
    let out = run(escrow(tmp.path()).args(["escrow", "--http-listen", "127.0.0.1:0", "--fixtures"]).arg(&corrupt));
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("photos.jsonl:1"));
}

#[test]
fn generated_fixtures_feed_the_demo() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("fx");
    let out = run(escrow(tmp.path())
        .args(["fixtures", "generate", "--contacts", "12", "--photos", "3", "--out"])
        .arg(&dir));
    assert_eq!(code(&out), 0);
    let mut cmd = quick_demo(tmp.path(), "images");
    cmd.args(["--policy-default", "allow", "--fixtures"]).arg(&dir);
    let out = run(&mut cmd);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let result = json_lines(&out).pop().unwrap();
    assert_eq!(result["content_type"], "application/x-esdf");
}

#[test]
fn config_file_and_precedence() {
    let tmp = TempDir::new().unwrap();
    let conf = tmp.path().join("escrow.conf");
    fs::write(&conf, "# demo settings\npolicy_default = deny\nhttp_listen = \"127.0.0.1:0\"\n").unwrap();

    let mut cmd = escrow(tmp.path());
    cmd.args(["demo", "weather", "--n", "5", "--config"]).arg(&conf);
    assert_eq!(code(&run(&mut cmd)), 4);
    let mut cmd = escrow(tmp.path());
    cmd.args(["demo", "weather", "--n", "5", "--policy-default", "allow", "--config"]).arg(&conf);
    assert_eq!(code(&run(&mut cmd)), 0);

    fs::write(&conf, "colour = blue\n").unwrap();
    let mut cmd = escrow(tmp.path());
    cmd.args(["policy", "list", "--config"]).arg(&conf);
    assert_eq!(code(&run(&mut cmd)), 1);
}

#[test]
fn usage_errors_exit_1() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&run(escrow(tmp.path()).arg("frobnicate"))), 1);
    assert_eq!(code(&run(escrow(tmp.path()).args(["demo", "nonsense"]))), 1);
    assert_eq!(code(&run(escrow(tmp.path()).args(["policy", "add", "--effect", "maybe"]))), 1);
    assert_eq!(code(&run(escrow(tmp.path()).arg("--help"))), 0);
    let out = run(escrow(tmp.path()).args([
        "demo", "weather", "--remote", "--http-listen", "127.0.0.1:7799", "--server-listen", "127.0.0.1:7799",
    ]));
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("both"));
}
