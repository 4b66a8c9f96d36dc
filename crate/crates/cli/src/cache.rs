//! Content-addressed store for fixed-point grids:
//! `<root>/<model hash>/<op>-<params hash>/{grid.csv, meta.json}`.

use std::path::{Path, PathBuf};

use dhlab_core::transfer_grid::{GridMeta, TailGrid};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the canonical JSON form of `value`.
pub fn hash_json<T: Serialize>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("serializable"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedMeta {
    pub grid: GridMeta,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct Cache {
    root: PathBuf,
    model_hash: String,
}

impl Cache {
    pub fn new(root: PathBuf, model_hash: &str) -> Self {
        Cache {
            root,
            model_hash: model_hash[..16].to_string(),
        }
    }

    fn entry(&self, op: &str, params_hash: &str) -> PathBuf {
        self.root.join(&self.model_hash).join(format!("{op}-{}", &params_hash[..16]))
    }

    pub fn get(&self, op: &str, params_hash: &str) -> Option<(TailGrid, CachedMeta)> {
        let dir = self.entry(op, params_hash);
        let meta: CachedMeta = serde_json::from_slice(&std::fs::read(dir.join("meta.json")).ok()?).ok()?;
        if meta.grid.config_hash != params_hash {
            return None;
        }
        let csv = std::fs::read_to_string(dir.join("grid.csv")).ok()?;
        let grid = TailGrid::from_csv(&csv, &meta.grid).ok()?;
        (grid.len() == meta.grid.n_nodes).then_some((grid, meta))
    }

    pub fn put(&self, op: &str, params_hash: &str, grid: &TailGrid, iterations: usize, residual: f64) -> Result<(), CliError> {
        let dir = self.entry(op, params_hash);
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        let meta = CachedMeta {
            grid: grid.meta(params_hash),
            iterations,
            residual,
        };
        // grid first, so a readable meta.json implies a complete grid
        write_atomic(&dir.join("grid.csv"), grid.to_csv().as_bytes())?;
        write_atomic(&dir.join("meta.json"), &serde_json::to_vec_pretty(&meta)?)?;
        Ok(())
    }
}

/// Writes through a uniquely named temp file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    use std::io::Write;
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}
