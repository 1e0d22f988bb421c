//! CSV and JSON writers with a provenance header.

use std::io::Write;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::run::EnergyScanRecord;

pub const COLUMNS: [&str; 11] = [
    "energy",
    "T",
    "R",
    "lambda",
    "xi",
    "g",
    "idos",
    "ipr",
    "engine",
    "converged",
    "seed",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metadata {
    pub tool: String,
    pub rng: String,
    pub seed: u64,
    pub config_sha256: String,
    pub timestamp: String,
}

impl Metadata {
    pub fn new(config_text: &str, seed: u64) -> Self {
        Self {
            tool: format!("qwire {}", env!("CARGO_PKG_VERSION")),
            rng: qwire::chain::RNG_NAME.to_string(),
            seed,
            config_sha256: hex(&Sha256::digest(config_text.as_bytes())),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// `#`-prefixed metadata lines, the header row and one line per record.
pub fn write_csv<W: Write>(mut out: W, meta: &Metadata, records: &[EnergyScanRecord]) -> std::io::Result<()> {
    writeln!(out, "# tool: {}", meta.tool)?;
    writeln!(out, "# rng: {}", meta.rng)?;
    writeln!(out, "# seed: {}", meta.seed)?;
    writeln!(out, "# config-sha256: {}", meta.config_sha256)?;
    writeln!(out, "# timestamp: {}", meta.timestamp)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(COLUMNS)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()
}

#[derive(Serialize)]
struct JsonDocument<'a> {
    metadata: &'a Metadata,
    records: &'a [EnergyScanRecord],
}

pub fn write_json<W: Write>(mut out: W, meta: &Metadata, records: &[EnergyScanRecord]) -> std::io::Result<()> {
    serde_json::to_writer_pretty(
        &mut out,
        &JsonDocument {
            metadata: meta,
            records,
        },
    )?;
    writeln!(out)
}
