//! Optional `key = value` config file.
//!
//! One setting per line; blank lines and lines starting with `#` are
//! ignored. Values may be wrapped in double quotes. Recognized keys:
//!
//! | key                   | meaning                                  |
//! |-----------------------|------------------------------------------|
//! | `state_dir`           | where policies and the ledger persist    |
//! | `fixture_dir`         | provider fixture directory               |
//! | `http_listen`         | escrow HTTP API address                  |
//! | `server_listen`       | compute server address                   |
//! | `policy_default`      | `pending`, `allow` or `deny`             |
//! | `seed`                | synthetic data seed                      |
//! | `throttle_rate`       | bytes per second toward compute servers  |
//! | `throttle_latency_ms` | added latency per flush                  |
//! | `psk`                 | passphrase for authenticated channels    |
//!
//! Command-line flags win over environment variables, which win over the
//! file, which wins over built-in defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::CliError;

pub const KEYS: [&str; 9] = [
    "state_dir",
    "fixture_dir",
    "http_listen",
    "server_listen",
    "policy_default",
    "seed",
    "throttle_rate",
    "throttle_latency_ms",
    "psk",
];

#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    path: PathBuf,
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(path, &text)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| CliError::Config(format!("{}:{}: {msg}", path.display(), i + 1));
            let (key, value) = line.split_once('=').ok_or_else(|| bad("expected key = value"))?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(bad(&format!("unknown key {key:?}")));
            }
            let value = value.trim();
            let value = value
                .strip_prefix('"')
                .and_then(|v| v.strip_suffix('"'))
                .unwrap_or(value);
            values.insert(key.to_string(), value.to_string());
        }
        Ok(Self {
            path: path.to_path_buf(),
            values,
        })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// `explicit` (flag or env) if set, else the file value, else `None`.
    pub fn pick<T: FromStr>(&self, explicit: Option<T>, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        if explicit.is_some() {
            return Ok(explicit);
        }
        self.get(key)
            .map(|v| {
                v.parse()
                    .map_err(|e| CliError::Config(format!("{}: {key}: {e}", self.path.display())))
            })
            .transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_quotes_and_precedence() {
        let cfg = ConfigFile::parse(
            Path::new("x.conf"),
            "# comment\n\nhttp_listen = 127.0.0.1:9000\nseed=\"7\"\n",
        )
        .unwrap();
        assert_eq!(cfg.get("http_listen"), Some("127.0.0.1:9000"));
        assert_eq!(cfg.pick::<u64>(None, "seed").unwrap(), Some(7));
        assert_eq!(cfg.pick(Some(3u64), "seed").unwrap(), Some(3));
        assert_eq!(cfg.pick::<u64>(None, "throttle_rate").unwrap(), None);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_lines() {
        assert!(ConfigFile::parse(Path::new("x"), "colour = red").is_err());
        assert!(ConfigFile::parse(Path::new("x"), "seed").is_err());
        let cfg = ConfigFile::parse(Path::new("x"), "seed = many").unwrap();
        assert!(cfg.pick::<u64>(None, "seed").is_err());
    }
}
