//! Artifact writing: comment headers, atomic file writes, config hashing.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Hex SHA-256 of the normalized invocation, excluding the timestamp toggle
/// so it never changes the identity of a run.
pub fn config_hash(argv: &[String]) -> String {
    let mut hasher = Sha256::new();
    for arg in argv {
        if arg == "--no-timestamp" {
            continue;
        }
        hasher.update(arg.as_bytes());
        hasher.update([0u8]);
    }
    let digest = hasher.finalize();
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// The comment header that starts every emitted CSV.
pub fn csv_header(config_hash: &str, seed: u64, timestamp: bool) -> String {
    let mut h = format!("# tool: detok v{TOOL_VERSION}\n# config: {config_hash}\n# seed: {seed}\n");
    if timestamp {
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        h.push_str(&format!("# created: {now}\n"));
    }
    h
}

/// Write a file atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)
}

/// Cache directory: DETOK_CACHE_DIR when set, else none.
pub fn cache_dir() -> Option<PathBuf> {
    std::env::var_os("DETOK_CACHE_DIR").map(PathBuf::from)
}
