//! On-disk dataset cache keyed by the request fingerprint.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use datacert_core::pipeline::DatasetProvider;
use datacert_core::scenario::{collect_dataset, DatasetKey, TransitionDataset};
use datacert_core::systems::System;
use datacert_core::{Error, Result};

/// Serves datasets from a CSV file whose `.meta` sidecar records the
/// fingerprint of the request that produced it. Any mismatch resamples and
/// overwrites both files.
#[derive(Debug)]
pub struct CachedProvider {
    path: PathBuf,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl CachedProvider {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        CachedProvider {
            path: path.into(),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    /// Requests that had to sample the system.
    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    fn load(&self, key: &DatasetKey) -> Option<TransitionDataset> {
        if !self.path.is_file() || !key.matches_meta(&self.path) {
            return None;
        }
        let m = key.inputs.as_ref().map_or(0, |u| u.dim());
        match TransitionDataset::read_csv(&self.path, &key.spec, m, key.seed) {
            Ok(d) if d.len() == key.n_samples && d.n_hat() == key.n_hat => Some(d),
            Ok(_) => None,
            Err(e) => {
                eprintln!(
                    "warning: ignoring unreadable dataset cache {}: {e}",
                    self.path.display()
                );
                None
            }
        }
    }
}

impl DatasetProvider for CachedProvider {
    fn provide(&self, system: &dyn System, key: &DatasetKey) -> Result<TransitionDataset> {
        if let Some(data) = self.load(key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(data);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let data = collect_dataset(
            system,
            &key.spec,
            key.inputs.as_ref(),
            key.n_samples,
            key.n_hat,
            key.seed,
        )?;
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| {
                Error::Config(format!(
                    "cannot create cache directory {}: {e}",
                    dir.display()
                ))
            })?;
        }
        // Drop the old sidecar first so an interrupted write never pairs a new
        // fingerprint with stale rows.
        let meta = DatasetKey::meta_path(&self.path);
        if meta.exists() {
            std::fs::remove_file(&meta)
                .map_err(|e| Error::Config(format!("cannot replace {}: {e}", meta.display())))?;
        }
        data.write_csv(&self.path)?;
        key.write_meta(&self.path)?;
        Ok(data)
    }
}
