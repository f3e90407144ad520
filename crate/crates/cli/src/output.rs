use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const TOOL: &str = env!("CARGO_PKG_NAME");
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Provenance stamped on every output file.
#[derive(Debug, Clone, Serialize)]
pub struct Meta {
    pub tool: &'static str,
    pub version: &'static str,
    pub seed: u64,
    pub scenario_sha256: String,
}

impl Meta {
    pub fn new(seed: u64, scenario_sha256: &str) -> Self {
        Self {
            tool: TOOL,
            version: VERSION,
            seed,
            scenario_sha256: scenario_sha256.to_string(),
        }
    }

    fn csv_comment(&self) -> String {
        format!(
            "# {} {} seed={} scenario=sha256:{}",
            self.tool, self.version, self.seed, self.scenario_sha256
        )
    }
}

/// Writes a CSV file whose first line is the provenance comment.
pub fn write_csv(
    path: &Path,
    meta: &Meta,
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{}", meta.csv_comment())
        .and_then(|_| body(&mut w))
        .and_then(|_| w.flush())
        .with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
