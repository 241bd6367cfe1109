//! Random rule sets and requests, and a brute-force rule scan.

use escrow_core::compute::RunOutput;
use escrow_core::escrow::{
    DataflowRequest, Decision, DefaultDecision, Effect, Escrow, EscrowConfig, PolicyRule,
};
use escrow_core::store::{ContactRecord, DataProvider};
use proptest::prelude::*;

pub const APPS: [&str; 3] = ["maps", "chat", "health"];
pub const TABLES: [&str; 4] = ["Contact", "Location", "Photos", "KeyTable"];
pub const SIGS: [&str; 2] = ["count/v1", "echo/v1"];
const SERVERS: [Option<&str>; 2] = [None, Some("s1")];

fn pattern(options: &'static [&'static str]) -> impl Strategy<Value = String> {
    prop_oneof![
        1 => Just("*".to_string()),
        3 => prop::sample::select(options).prop_map(String::from),
    ]
}

pub fn rule() -> impl Strategy<Value = PolicyRule> {
    (
        -2i64..3,
        pattern(&APPS),
        pattern(&TABLES),
        pattern(&SIGS),
        pattern(&["local", "s1"]),
        prop::bool::ANY,
    )
        .prop_map(|(priority, app, table, sig, server, deny)| {
            PolicyRule::any(priority, if deny { Effect::Deny } else { Effect::Allow })
                .app(app)
                .table(table)
                .compute(sig)
                .server(server)
        })
}

pub fn request() -> impl Strategy<Value = (DataflowRequest, String)> {
    (
        prop::sample::select(&APPS[..]),
        prop::sample::select(&TABLES[..]),
        prop::sample::select(&SIGS[..]),
        prop::sample::select(&SERVERS[..]),
    )
        .prop_map(|(app, table, sig, server)| {
            let mut req = DataflowRequest::new(app, format!("SELECT * FROM {table}"), sig);
            req.server_id = server.map(String::from);
            (req, table.to_string())
        })
}

pub fn default_decision() -> impl Strategy<Value = DefaultDecision> {
    prop::sample::select(vec![DefaultDecision::Allow, DefaultDecision::Deny, DefaultDecision::Pending])
}

/// Brute-force scan: collect every matching rule, then pick.
pub fn oracle(req: &DataflowRequest, table: &str, rules: &[PolicyRule], default: DefaultDecision) -> Decision {
    let server = req.server_id.as_deref().unwrap_or("local");
    let hit = |p: &str, v: &str| p == "*" || p == v;
    let matching: Vec<&PolicyRule> = rules
        .iter()
        .filter(|r| {
            hit(&r.app_pattern, &req.app_id)
                && hit(&r.table_pattern, table)
                && hit(&r.compute_pattern, &req.compute_sig)
                && hit(&r.server_pattern, server)
        })
        .collect();
    let Some(top) = matching.iter().map(|r| r.priority).max() else {
        return match default {
            DefaultDecision::Allow => Decision::Allow,
            DefaultDecision::Deny => Decision::Deny,
            DefaultDecision::Pending => Decision::Pending,
        };
    };
    if matching.iter().any(|r| r.priority == top && r.effect == Effect::Deny) {
        Decision::Deny
    } else {
        Decision::Allow
    }
}

pub fn escrow(default: DefaultDecision) -> Escrow {
    let provider = DataProvider {
        contacts: vec![ContactRecord {
            contact_id: "c1".into(),
            given_name: "A".into(),
            family_name: "B".into(),
            phone_numbers: vec!["+1".into()],
        }],
        ..Default::default()
    };
    let e = Escrow::init(
        &provider,
        EscrowConfig {
            default_decision: default,
            rules: vec![],
            ..Default::default()
        },
    )
    .unwrap();
    for sig in SIGS {
        e.register_compute(sig, |df| Ok(RunOutput::new("text/plain", df.row_count().to_string().into_bytes())), true)
            .unwrap();
    }
    e
}
