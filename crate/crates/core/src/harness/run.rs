use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// First 12 hex digits of the SHA-256 of the config's JSON encoding.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let bytes = serde_json::to_vec(config)
        .map_err(|e| Error::Config(format!("cannot encode config: {e}")))?;
    let digest = Sha256::digest(&bytes);
    Ok(hex::encode(digest)[..12].to_string())
}

/// Creates `<root>/<command>-<UTC timestamp>-<config hash>`.
pub fn create_run_dir<T: Serialize>(root: &Path, command: &str, config: &T) -> Result<PathBuf> {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let dir = root.join(format!("{command}-{stamp}-{}", config_hash(config)?));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Data(format!("cannot encode {}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_tracks_content() {
        let a = config_hash(&("bptt", 16)).unwrap();
        assert_eq!(a.len(), 12);
        assert_eq!(a, config_hash(&("bptt", 16)).unwrap());
        assert_ne!(a, config_hash(&("rtrl", 16)).unwrap());
    }

    #[test]
    fn run_dir_named_by_hash() {
        let root = tempfile::tempdir().unwrap();
        let dir = create_run_dir(root.path(), "pretrain", &1u8).unwrap();
        let name = dir.file_name().unwrap().to_str().unwrap().to_string();
        assert!(name.starts_with("pretrain-") && name.ends_with(&config_hash(&1u8).unwrap()));
        assert!(dir.is_dir());
    }
}
