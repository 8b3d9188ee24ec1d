//! Flat key=value config files, merged under CLI flags.
//!
//! Format: one `key = value` per line; `#` starts a comment; blank lines
//! ignored. Keys are the long flag names with `-` replaced by `_`
//! (e.g. `sinr_db`). A flag given on the command line always wins over the
//! file. Unknown keys are rejected so that a typo cannot silently fall back
//! to a default.

use std::collections::BTreeMap;

use crate::error::{CliError, CliResult};

pub struct Settings {
    file: BTreeMap<String, String>,
    path: Option<String>,
}

impl Settings {
    pub fn load(path: Option<&str>) -> CliResult<Settings> {
        let mut file = BTreeMap::new();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read config file {p:?}: {e}")))?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    CliError::Usage(format!("{p}:{}: expected key = value", lineno + 1))
                })?;
                file.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        Ok(Settings { file, path: path.map(String::from) })
    }

    pub fn path(&self) -> Option<&str> {
        self.path.as_deref()
    }

    /// Removes and returns the file value for `key`, if present.
    pub fn take(&mut self, key: &str) -> Option<String> {
        self.file.remove(key)
    }

    /// Rejects any config keys nothing consumed.
    pub fn finish(self) -> CliResult<()> {
        if let Some(key) = self.file.keys().next() {
            return Err(CliError::Usage(format!("unknown config key {key:?}")));
        }
        Ok(())
    }
}

/// Flag value if given, else the config-file value.
pub fn pick(flag: Option<String>, file: Option<String>) -> Option<String> {
    flag.or(file)
}

/// Parses a required setting; absence is a usage error naming the flag.
pub fn req<T>(
    name: &str,
    raw: Option<String>,
    parse: impl Fn(&str) -> Result<T, String>,
) -> CliResult<T> {
    let raw = raw.ok_or_else(|| {
        CliError::Usage(format!("missing required value for --{name} (flag or config key)"))
    })?;
    parse(&raw).map_err(|e| CliError::Usage(format!("invalid --{name}: {e}")))
}

/// Parses an optional setting, falling back to `default`.
pub fn opt<T>(
    name: &str,
    raw: Option<String>,
    default: T,
    parse: impl Fn(&str) -> Result<T, String>,
) -> CliResult<T> {
    match raw {
        Some(raw) => parse(&raw).map_err(|e| CliError::Usage(format!("invalid --{name}: {e}"))),
        None => Ok(default),
    }
}

/// Parses an optional setting with no default (None when absent).
pub fn opt_some<T>(
    name: &str,
    raw: Option<String>,
    parse: impl Fn(&str) -> Result<T, String>,
) -> CliResult<Option<T>> {
    raw.map(|raw| parse(&raw).map_err(|e| CliError::Usage(format!("invalid --{name}: {e}"))))
        .transpose()
}
