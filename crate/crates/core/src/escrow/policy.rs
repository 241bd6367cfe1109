//! Allow/deny rules over dataflows.
//!
//! A rule matches when each of its patterns matches: the app, every table the
//! query touches, the compute signature and the execution location (`local`
//! when no server is named). Patterns are either `*` or an exact string.
//! Among matching rules the highest priority wins and `Deny` beats `Allow` on
//! a tie. With no match the configured default applies.

use serde::{Deserialize, Serialize};

pub const WILDCARD: &str = "*";
pub const LOCAL: &str = "local";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Effect {
    Allow,
    Deny,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Allow,
    Deny,
    Pending,
}

impl std::str::FromStr for Effect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "allow" => Ok(Effect::Allow),
            "deny" => Ok(Effect::Deny),
            other => Err(format!("expected allow or deny, got {other:?}")),
        }
    }
}

impl From<Effect> for Decision {
    fn from(e: Effect) -> Self {
        match e {
            Effect::Allow => Decision::Allow,
            Effect::Deny => Decision::Deny,
        }
    }
}

/// What to do when no rule matches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefaultDecision {
    #[default]
    Pending,
    Allow,
    Deny,
}

impl DefaultDecision {
    pub fn decision(self) -> Decision {
        match self {
            DefaultDecision::Pending => Decision::Pending,
            DefaultDecision::Allow => Decision::Allow,
            DefaultDecision::Deny => Decision::Deny,
        }
    }
}

impl std::str::FromStr for DefaultDecision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pending" => Ok(DefaultDecision::Pending),
            "allow" => Ok(DefaultDecision::Allow),
            "deny" => Ok(DefaultDecision::Deny),
            other => Err(format!("expected pending, allow or deny, got {other:?}")),
        }
    }
}

fn wildcard() -> String {
    WILDCARD.to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyRule {
    pub priority: i64,
    #[serde(default = "wildcard")]
    pub app_pattern: String,
    #[serde(default = "wildcard")]
    pub table_pattern: String,
    #[serde(default = "wildcard")]
    pub compute_pattern: String,
    #[serde(default = "wildcard")]
    pub server_pattern: String,
    /// Normalized access query this rule is pinned to; `None` matches any.
    /// Set by "always" decisions so that a rule covers exactly one dataflow.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    pub effect: Effect,
}

impl PolicyRule {
    /// A rule with every pattern set to `*`.
    pub fn any(priority: i64, effect: Effect) -> Self {
        Self {
            priority,
            app_pattern: wildcard(),
            table_pattern: wildcard(),
            compute_pattern: wildcard(),
            server_pattern: wildcard(),
            query: None,
            effect,
        }
    }

    pub fn app(mut self, pattern: impl Into<String>) -> Self {
        self.app_pattern = pattern.into();
        self
    }

    pub fn table(mut self, pattern: impl Into<String>) -> Self {
        self.table_pattern = pattern.into();
        self
    }

    pub fn compute(mut self, pattern: impl Into<String>) -> Self {
        self.compute_pattern = pattern.into();
        self
    }

    pub fn server(mut self, pattern: impl Into<String>) -> Self {
        self.server_pattern = pattern.into();
        self
    }

    pub fn matches(&self, flow: &FlowKey<'_>) -> bool {
        let pat = |p: &str, v: &str| p == WILDCARD || p == v;
        pat(&self.app_pattern, flow.app_id)
            && flow.tables.iter().all(|t| pat(&self.table_pattern, t))
            && pat(&self.compute_pattern, flow.compute_sig)
            && pat(&self.server_pattern, flow.server.unwrap_or(LOCAL))
            && self.query.as_deref().is_none_or(|q| q == flow.query)
    }
}

/// The attributes of a dataflow that rules are evaluated against.
#[derive(Debug, Clone, Copy)]
pub struct FlowKey<'a> {
    pub app_id: &'a str,
    pub tables: &'a [String],
    pub compute_sig: &'a str,
    pub server: Option<&'a str>,
    /// Normalized access query.
    pub query: &'a str,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Evaluation {
    pub decision: Decision,
    /// Index into the rule list of the deciding rule, if any.
    pub rule: Option<usize>,
}

pub fn evaluate(flow: &FlowKey<'_>, rules: &[PolicyRule], default: DefaultDecision) -> Evaluation {
    let mut best: Option<(usize, &PolicyRule)> = None;
    for (i, rule) in rules.iter().enumerate() {
        if !rule.matches(flow) {
            continue;
        }
        let better = match best {
            None => true,
            Some((_, b)) => {
                rule.priority > b.priority
                    || (rule.priority == b.priority && rule.effect == Effect::Deny && b.effect == Effect::Allow)
            }
        };
        if better {
            best = Some((i, rule));
        }
    }
    match best {
        Some((i, rule)) => Evaluation {
            decision: rule.effect.into(),
            rule: Some(i),
        },
        None => Evaluation {
            decision: default.decision(),
            rule: None,
        },
    }
}
