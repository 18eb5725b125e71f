//! Append-only run directories: `<root>/<command>-<timestamp>[-<n>]`.

use std::path::{Path, PathBuf};

use chrono::Utc;
use lnm_core::error::Result;

/// Create a fresh run directory; existing directories are never reused or
/// overwritten.
pub fn create_run_dir(root: &Path, command: &str) -> Result<PathBuf> {
    let stamp = Utc::now().format("%Y%m%d-%H%M%S");
    let base = root.join(format!("{command}-{stamp}"));
    let mut candidate = base.clone();
    let mut counter = 1;
    while candidate.exists() {
        counter += 1;
        candidate = PathBuf::from(format!("{}-{counter}", base.display()));
    }
    std::fs::create_dir_all(&candidate)?;
    Ok(candidate)
}

/// Write a serializable value as pretty JSON.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(lnm_core::LnmError::from)?;
    std::fs::write(path, json)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reruns_never_reuse_a_directory() {
        let root = tempfile::tempdir().unwrap();
        let a = create_run_dir(root.path(), "train-vae").unwrap();
        let b = create_run_dir(root.path(), "train-vae").unwrap();
        assert_ne!(a, b);
        assert!(a.exists() && b.exists());
    }
}
