//! Self-describing report headers.
//!
//! Every artifact starts with `#` lines naming the command, the SHA-256 of
//! the canonical run configuration and a generation timestamp. The
//! timestamp line is the only part that changes between identical runs.

use sha2::{Digest, Sha256};
use std::time::{SystemTime, UNIX_EPOCH};

pub const TIMESTAMP_PREFIX: &str = "# generated-unix: ";

pub fn config_hash(canonical: &str) -> String {
    bytes_hash(canonical.as_bytes())
}

/// SHA-256 hex digest of arbitrary bytes, e.g. a model file.
pub fn bytes_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `body` preceded by the standard header.
pub fn with_header(command: &str, canonical_config: &str, body: &str) -> String {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!(
        "# headwise {command}\n# config-sha256: {}\n{TIMESTAMP_PREFIX}{secs}\n{body}",
        config_hash(canonical_config)
    )
}

/// The report with its timestamp line removed, for comparing reruns.
pub fn strip_timestamp(report: &str) -> String {
    report
        .lines()
        .filter(|l| !l.starts_with(TIMESTAMP_PREFIX))
        .map(|l| format!("{l}\n"))
        .collect()
}

/// The body of a report: every line not starting with `#`.
pub fn payload(report: &str) -> String {
    report
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect()
}
