//! Policies and the ledger survive between CLI invocations in a state
//! directory: `policies.json` holds the rule list, `ledger.jsonl` one entry
//! per line.

use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use escrow_core::escrow::{Escrow, LedgerEntry, PolicyRule};
use tracing::warn;

use crate::error::CliError;

const POLICIES: &str = "policies.json";
const LEDGER: &str = "ledger.jsonl";

#[derive(Debug, Clone)]
pub struct StateDir {
    root: PathBuf,
}

impl StateDir {
    pub fn open(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::State(format!("{}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn policies_path(&self) -> PathBuf {
        self.root.join(POLICIES)
    }

    pub fn ledger_path(&self) -> PathBuf {
        self.root.join(LEDGER)
    }

    pub fn load_rules(&self) -> Result<Vec<PolicyRule>, CliError> {
        let path = self.policies_path();
        match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| CliError::State(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
            Err(e) => Err(CliError::State(format!("{}: {e}", path.display()))),
        }
    }

    pub fn save_rules(&self, rules: &[PolicyRule]) -> Result<(), CliError> {
        let path = self.policies_path();
        let tmp = path.with_extension("json.tmp");
        let text = serde_json::to_string_pretty(rules).expect("rules serialize");
        fs::write(&tmp, text)
            .and_then(|_| fs::rename(&tmp, &path))
            .map_err(|e| CliError::State(format!("{}: {e}", path.display())))
    }

    pub fn load_ledger(&self) -> Result<Vec<LedgerEntry>, CliError> {
        let path = self.ledger_path();
        let file = match fs::File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(CliError::State(format!("{}: {e}", path.display()))),
        };
        let mut out = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| CliError::State(format!("{}: {e}", path.display())))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry = serde_json::from_str(&line)
                .map_err(|e| CliError::State(format!("{}:{}: {e}", path.display(), i + 1)))?;
            out.push(entry);
        }
        Ok(out)
    }

    pub fn append_ledger(&self, entry: &LedgerEntry) -> std::io::Result<()> {
        let mut f = OpenOptions::new().create(true).append(true).open(self.ledger_path())?;
        let mut line = serde_json::to_vec(entry).expect("entry serializes");
        line.push(b'\n');
        f.write_all(&line)
    }

    /// Mirror rule changes and ledger appends of `escrow` into this directory.
    pub fn attach(&self, escrow: &Arc<Escrow>) {
        let dir = self.clone();
        escrow.on_rules_change(move |rules| {
            if let Err(e) = dir.save_rules(rules) {
                warn!("cannot persist policies: {e}");
            }
        });
        let dir = self.clone();
        escrow.on_ledger_append(move |entry| {
            if let Err(e) = dir.append_ledger(entry) {
                warn!("cannot persist ledger entry: {e}");
            }
        });
    }
}
