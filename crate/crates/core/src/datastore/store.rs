//! Named datasets with copy-on-write versions and immutable snapshot handles.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};

use super::dataset::Dataset;
use crate::error::{Error, Result};

struct Entry {
    current: Arc<Dataset>,
    alive: Arc<AtomicBool>,
}

/// Pins one version of a dataset. Reads fail once the dataset is deleted.
#[derive(Clone)]
pub struct Snapshot {
    dataset: Arc<Dataset>,
    alive: Arc<AtomicBool>,
}

impl Snapshot {
    pub fn dataset_id(&self) -> &str {
        &self.dataset.dataset_id
    }

    pub fn version(&self) -> u64 {
        self.dataset.snapshot_version
    }

    pub fn get(&self) -> Result<&Dataset> {
        if self.alive.load(Ordering::SeqCst) {
            Ok(&self.dataset)
        } else {
            Err(Error::StaleSnapshot(self.dataset.dataset_id.clone()))
        }
    }
}

impl std::fmt::Debug for Snapshot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Snapshot")
            .field("dataset_id", &self.dataset.dataset_id)
            .field("version", &self.dataset.snapshot_version)
            .finish()
    }
}

#[derive(Default)]
pub struct DatasetStore {
    entries: RwLock<BTreeMap<String, Entry>>,
}

impl DatasetStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces a dataset. Replacing bumps the version past the old one
    /// so snapshot versions stay monotone per id.
    pub fn put(&self, mut dataset: Dataset) -> Snapshot {
        let mut entries = self.entries.write().expect("store lock");
        let id = dataset.dataset_id.clone();
        let alive = match entries.get(&id) {
            Some(old) => {
                dataset.snapshot_version = dataset.snapshot_version.max(old.current.snapshot_version + 1);
                old.alive.clone()
            }
            None => Arc::new(AtomicBool::new(true)),
        };
        let current = Arc::new(dataset);
        entries.insert(
            id,
            Entry {
                current: current.clone(),
                alive: alive.clone(),
            },
        );
        Snapshot { dataset: current, alive }
    }

    pub fn snapshot(&self, dataset_id: &str) -> Result<Snapshot> {
        let entries = self.entries.read().expect("store lock");
        let e = entries
            .get(dataset_id)
            .ok_or_else(|| Error::UnknownDataset(dataset_id.to_string()))?;
        Ok(Snapshot {
            dataset: e.current.clone(),
            alive: e.alive.clone(),
        })
    }

    /// Applies `f` to a copy of the current version; on success the copy
    /// becomes current. Existing snapshots keep the old contents.
    pub fn update<T>(&self, dataset_id: &str, f: impl FnOnce(&mut Dataset) -> Result<T>) -> Result<(Snapshot, T)> {
        let mut entries = self.entries.write().expect("store lock");
        let e = entries
            .get_mut(dataset_id)
            .ok_or_else(|| Error::UnknownDataset(dataset_id.to_string()))?;
        let mut next = (*e.current).clone();
        let out = f(&mut next)?;
        if next.snapshot_version == e.current.snapshot_version {
            next.snapshot_version += 1;
        }
        e.current = Arc::new(next);
        Ok((
            Snapshot {
                dataset: e.current.clone(),
                alive: e.alive.clone(),
            },
            out,
        ))
    }

    pub fn delete(&self, dataset_id: &str) -> Result<()> {
        let mut entries = self.entries.write().expect("store lock");
        let e = entries
            .remove(dataset_id)
            .ok_or_else(|| Error::UnknownDataset(dataset_id.to_string()))?;
        e.alive.store(false, Ordering::SeqCst);
        Ok(())
    }

    pub fn ids(&self) -> Vec<String> {
        self.entries.read().expect("store lock").keys().cloned().collect()
    }
}
