//! Artifact emission: CSV/JSON files plus a manifest with content hashes.
//!
//! Every subcommand writes its outputs through an [`ArtifactSet`] and ends
//! by writing `manifest.json` (subcommand, config path, output directory,
//! master seed, and the sha256 of every emitted file). Reruns of the same
//! invocation reproduce every byte: no timestamps, no map-order
//! nondeterminism, floats printed via Rust's shortest round-trip form.

use std::fs;
use std::path::PathBuf;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliResult;

#[derive(Serialize)]
struct ArtifactEntry {
    name: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    subcommand: &'a str,
    config_path: Option<&'a str>,
    out_dir: &'a str,
    seed: Option<u64>,
    artifacts: &'a [ArtifactEntry],
}

pub struct ArtifactSet {
    dir: PathBuf,
    label: String,
    entries: Vec<ArtifactEntry>,
}

impl ArtifactSet {
    pub fn create(out: &str) -> CliResult<ArtifactSet> {
        let dir = PathBuf::from(out);
        fs::create_dir_all(&dir)?;
        Ok(ArtifactSet { dir, label: out.to_string(), entries: Vec::new() })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> CliResult<()> {
        fs::write(self.dir.join(name), contents)?;
        let digest = Sha256::digest(contents.as_bytes());
        self.entries.push(ArtifactEntry {
            name: name.to_string(),
            sha256: format!("{digest:x}"),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, &text)
    }

    /// Writes `manifest.json` and consumes the set. Call last.
    pub fn finish(
        mut self,
        subcommand: &str,
        config_path: Option<&str>,
        seed: Option<u64>,
    ) -> CliResult<()> {
        self.entries.sort_by(|a, b| a.name.cmp(&b.name));
        let manifest = Manifest {
            schema_version: 1,
            subcommand,
            config_path,
            out_dir: &self.label,
            seed,
            artifacts: &self.entries,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(self.dir.join("manifest.json"), text)?;
        Ok(())
    }
}

/// CSV body: header, rows, trailing newline. Comma separators and '.'
/// decimals come from the row formatting itself.
pub fn csv(header: &str, rows: &[String]) -> String {
    let mut out = String::with_capacity(header.len() + rows.iter().map(|r| r.len() + 1).sum::<usize>() + 1);
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(row);
        out.push('\n');
    }
    out
}

/// Shortest round-trip decimal form ('.' decimal separator, no exponent
/// for the magnitudes we emit; deterministic).
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}
