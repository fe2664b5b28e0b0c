use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use icrlsm_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub const MANIFEST_FILE: &str = "run_manifest.json";
pub const VERSION: &str = concat!("icrlsm ", env!("CARGO_PKG_VERSION"), " (", env!("ICRLSM_GIT_REV"), ")");

/// A cell or seed that did not finish.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub cell: String,
    pub exit_code: i32,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    /// Zero in deterministic mode.
    pub wall_seconds: f64,
    pub failures: Vec<Failure>,
    /// SHA-256 of every file under the output directory except this manifest,
    /// keyed by `/`-separated relative path.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn write(
        command: &str,
        config: &ExperimentConfig,
        wall_seconds: f64,
        failures: Vec<Failure>,
    ) -> Result<RunManifest> {
        let dir = &config.output_dir;
        let manifest = RunManifest {
            command: command.into(),
            version: VERSION.into(),
            config: config.clone(),
            seeds: config.seeds.clone(),
            wall_seconds: if config.train.deterministic { 0.0 } else { wall_seconds },
            failures,
            outputs: hash_tree(dir)?,
        };
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| io(&path, e))?;
        Ok(manifest)
    }
}

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

pub fn hash_tree(root: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(|e| io(&dir, e))? {
            let path = entry.map_err(|e| io(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path.strip_prefix(root).expect("walk stays under root");
            if rel == Path::new(MANIFEST_FILE) {
                continue;
            }
            let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            out.insert(key, sha256_file(&path)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashes_nested_files_and_skips_manifest() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("a/b")).unwrap();
        fs::write(dir.path().join("a/b/x.txt"), "abc").unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), "{}").unwrap();
        let tree = hash_tree(dir.path()).unwrap();
        assert_eq!(tree.len(), 1);
        assert_eq!(tree["a/b/x.txt"], "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
