//! Defaults file (`layoutspace.toml`) and data-directory resolution.

use std::path::{Path, PathBuf};

use layoutspace_core::DistanceMetric;
use serde::Deserialize;

use crate::CliError;

pub const CONFIG_FILE: &str = "layoutspace.toml";

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Defaults {
    pub seed: u64,
    pub metric: DistanceMetric,
    pub k_neighbors: usize,
    pub min_similarity: f64,
    pub threshold: f64,
    pub max_hops: usize,
    pub top: usize,
    pub bind: String,
    pub token: Option<String>,
    pub max_page: usize,
}

impl Default for Defaults {
    fn default() -> Self {
        Self {
            seed: 0,
            metric: DistanceMetric::CosineDistance,
            k_neighbors: 20,
            min_similarity: -1.0,
            threshold: 0.9,
            max_hops: 3,
            top: 50,
            bind: "127.0.0.1:8080".into(),
            token: None,
            max_page: 10_000,
        }
    }
}

impl Defaults {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    /// Reads `explicit` if given, otherwise `<data_dir>/layoutspace.toml` when
    /// it exists, otherwise built-in defaults.
    pub fn load(explicit: Option<&Path>, data_dir: Option<&Path>) -> Result<Self, CliError> {
        let path = match (explicit, data_dir) {
            (Some(p), _) => Some(p.to_path_buf()),
            (None, Some(d)) if d.join(CONFIG_FILE).is_file() => Some(d.join(CONFIG_FILE)),
            _ => None,
        };
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(&p).map_err(|e| CliError::Io(p.clone(), e))?;
                Self::parse(&text)
            }
            None => Ok(Self::default()),
        }
    }
}

/// Relative paths are taken from the data directory when one is set.
#[derive(Debug, Clone, Default)]
pub struct Paths {
    pub data_dir: Option<PathBuf>,
}

impl Paths {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        match &self.data_dir {
            Some(d) if p.is_relative() => d.join(p),
            _ => p.to_path_buf(),
        }
    }
}
