//! In-memory dataset: validated records kept in sample-id order.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub dataset_id: String,
    pub dimension: usize,
    /// Incremented by every mutation.
    pub snapshot_version: u64,
    pub provenance: String,
    records: Vec<EmbeddingRecord>,
}

/// Checks one record against the dataset invariants. `row` is 1-based.
pub(crate) fn validate_record(r: &EmbeddingRecord, dimension: usize, row: usize) -> Result<()> {
    if r.sample_id.is_empty() {
        return Err(Error::Parse {
            row,
            message: "empty sample id".into(),
        });
    }
    if r.vector.len() != dimension {
        return Err(Error::RowDimensionMismatch {
            row,
            expected: dimension,
            actual: r.vector.len(),
        });
    }
    if let Some(k) = r.vector.iter().position(|x| !x.is_finite()) {
        return Err(Error::Parse {
            row,
            message: format!("component {k} is not finite"),
        });
    }
    Ok(())
}

impl Dataset {
    pub fn empty(dataset_id: impl Into<String>, dimension: usize) -> Self {
        Self {
            dataset_id: dataset_id.into(),
            dimension,
            snapshot_version: 0,
            provenance: String::new(),
            records: Vec::new(),
        }
    }

    /// Validates every record (rows are numbered from 1 in input order) and
    /// sorts by sample id. The dimension is taken from the first record.
    pub fn from_records(dataset_id: impl Into<String>, records: Vec<EmbeddingRecord>) -> Result<Self> {
        let dimension = records.first().map_or(0, |r| r.vector.len());
        let mut ds = Self::empty(dataset_id, dimension);
        ds.records = Self::checked(records, dimension, &BTreeSet::new())?;
        ds.records.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        Ok(ds)
    }

    pub fn with_provenance(mut self, note: impl Into<String>) -> Self {
        self.provenance = note.into();
        self
    }

    fn checked(records: Vec<EmbeddingRecord>, dimension: usize, existing: &BTreeSet<&str>) -> Result<Vec<EmbeddingRecord>> {
        let mut seen = BTreeSet::new();
        for (i, r) in records.iter().enumerate() {
            validate_record(r, dimension, i + 1)?;
            if existing.contains(r.sample_id.as_str()) || !seen.insert(r.sample_id.as_str()) {
                return Err(Error::DuplicateId {
                    row: i + 1,
                    id: r.sample_id.clone(),
                });
            }
        }
        Ok(records)
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, sample_id: &str) -> Option<&EmbeddingRecord> {
        self.records
            .binary_search_by(|r| r.sample_id.as_str().cmp(sample_id))
            .ok()
            .map(|i| &self.records[i])
    }

    /// Adds records all-or-nothing.
    pub fn insert(&mut self, records: Vec<EmbeddingRecord>) -> Result<()> {
        if self.records.is_empty() && self.dimension == 0 {
            self.dimension = records.first().map_or(0, |r| r.vector.len());
        }
        let existing: BTreeSet<&str> = self.records.iter().map(|r| r.sample_id.as_str()).collect();
        let fresh = Self::checked(records, self.dimension, &existing)?;
        self.records.extend(fresh);
        self.records.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        self.snapshot_version += 1;
        Ok(())
    }

    /// Removes the given ids; returns how many were present.
    pub fn remove(&mut self, ids: &[String]) -> usize {
        let drop: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
        let before = self.records.len();
        self.records.retain(|r| !drop.contains(r.sample_id.as_str()));
        let removed = before - self.records.len();
        self.snapshot_version += 1;
        removed
    }

    /// Sets or clears layout labels; unknown ids fail the whole call.
    pub fn set_labels(&mut self, labels: &[(String, Option<String>)]) -> Result<()> {
        for (id, _) in labels {
            if self.get(id).is_none() {
                return Err(Error::InvalidArgument(format!("unknown sample `{id}`")));
            }
        }
        for (id, label) in labels {
            let i = self
                .records
                .binary_search_by(|r| r.sample_id.as_str().cmp(id))
                .expect("checked above");
            self.records[i].layout_label = label.clone();
        }
        self.snapshot_version += 1;
        Ok(())
    }
}
