//! Triage queue assembly and the verdict book with its append-only audit log.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::anomaly::{AnomalyScore, FlaggedCluster};
use super::graph::ExpansionResult;
use crate::cluster::kmeans::{ClusterId, ClusterModel};
use crate::cluster::refine::z_score;
use crate::embedding::{fingerprint, working_matrix, EmbeddingRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    Sample,
    Cluster,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    ZScore,
    AnomalousCluster,
    SeedExpansion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewState {
    Pending,
    ConfirmedFraud,
    ConfirmedGenuine,
    Skipped,
}

impl std::str::FromStr for ReviewState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pending" => Ok(ReviewState::Pending),
            "confirmed_fraud" => Ok(ReviewState::ConfirmedFraud),
            "confirmed_genuine" => Ok(ReviewState::ConfirmedGenuine),
            "skipped" => Ok(ReviewState::Skipped),
            other => Err(Error::InvalidArgument(format!("unknown verdict `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageItem {
    pub item_id: String,
    pub kind: ItemKind,
    /// Sample id, or cluster id for cluster items.
    pub target_id: String,
    pub priority: f64,
    pub provenance: Provenance,
    /// Every source that surfaced this target.
    pub sources: Vec<Provenance>,
    /// Raw score of the winning source before normalization.
    pub score: f64,
    pub review_state: ReviewState,
    #[serde(default)]
    pub reviewer: Option<String>,
    #[serde(default)]
    pub timestamp: Option<DateTime<Utc>>,
    /// Cluster members at queue time (cluster items only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub members: Vec<String>,
    /// Medoid followed by the two highest-z members (cluster items only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub representatives: Vec<String>,
}

pub fn sample_item_id(sample_id: &str) -> String {
    format!("sample:{sample_id}")
}

pub fn cluster_item_id(model_version: u32, cluster: ClusterId) -> String {
    format!("cluster:v{model_version}:{cluster}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceWeights {
    pub z_score: f64,
    pub anomalous_cluster: f64,
    pub seed_expansion: f64,
}

impl Default for ProvenanceWeights {
    fn default() -> Self {
        Self {
            z_score: 1.0,
            anomalous_cluster: 1.0,
            seed_expansion: 1.0,
        }
    }
}

impl ProvenanceWeights {
    fn of(&self, p: Provenance) -> f64 {
        match p {
            Provenance::ZScore => self.z_score,
            Provenance::AnomalousCluster => self.anomalous_cluster,
            Provenance::SeedExpansion => self.seed_expansion,
        }
    }
}

/// Everything one queue is assembled from. All parts must describe the same
/// dataset snapshot as `records`.
#[derive(Debug, Clone, Copy)]
pub struct TriageSources<'a> {
    pub records: &'a [EmbeddingRecord],
    pub model: Option<&'a ClusterModel>,
    pub anomalies: &'a [AnomalyScore],
    pub flagged: &'a [FlaggedCluster],
    pub expansion: Option<&'a ExpansionResult>,
}

/// Cluster member minimizing the summed distance to the other members.
fn medoid(model: &ClusterModel, working: &ndarray::Array2<f64>, members: &[usize]) -> usize {
    let mut best = (f64::INFINITY, members[0]);
    for &i in members {
        let total: f64 = members
            .iter()
            .map(|&j| model.metric.working_distance(working.row(i), working.row(j)))
            .sum();
        if total < best.0 || (total == best.0 && model.sample_ids[i] < model.sample_ids[best.1]) {
            best = (total, i);
        }
    }
    best.1
}

/// Builds the prioritized queue. Each source's scores are divided by that
/// source's maximum and multiplied by its weight; only positive scores are
/// queued. Members of flagged clusters are folded into their cluster item and
/// a target surfaced by several sources becomes one item with the highest
/// priority. Order: priority (descending), cluster items first, target id.
pub fn assemble_triage_queue(sources: &TriageSources, weights: &ProvenanceWeights) -> Result<Vec<TriageItem>> {
    let snapshot = fingerprint(sources.records);
    if let Some(model) = sources.model {
        if model.snapshot != snapshot {
            return Err(Error::SnapshotMismatch);
        }
    } else if !sources.anomalies.is_empty() || !sources.flagged.is_empty() {
        return Err(Error::InvalidArgument("z-scores and flagged clusters need their cluster model".into()));
    }
    if let Some(exp) = sources.expansion {
        if exp.snapshot != snapshot {
            return Err(Error::SnapshotMismatch);
        }
    }
    let known: BTreeSet<&str> = sources.records.iter().map(|r| r.sample_id.as_str()).collect();
    for a in sources.anomalies {
        if !known.contains(a.sample_id.as_str()) {
            return Err(Error::SnapshotMismatch);
        }
    }

    let mut items: Vec<TriageItem> = Vec::new();
    let mut folded: BTreeSet<String> = BTreeSet::new();

    if let (Some(model), false) = (sources.model, sources.flagged.is_empty()) {
        let working = working_matrix(sources.records, model.metric)?;
        let dist = model.centroid_distances(&working);
        let max = sources
            .flagged
            .iter()
            .map(|f| f.min_distance_to_known_layout)
            .fold(0.0, f64::max);
        for f in sources.flagged {
            let cluster = model.clusters.get(&f.cluster_id).ok_or(Error::UnknownCluster(f.cluster_id))?;
            let members = model.members(f.cluster_id);
            let med = medoid(model, &working, &members);
            let mut by_z: Vec<(f64, usize)> = members
                .iter()
                .filter(|&&i| i != med)
                .map(|&i| {
                    let d = dist[i].expect("member");
                    (z_score(d, cluster.stats.mean_distance, cluster.stats.std_distance), i)
                })
                .collect();
            by_z.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| model.sample_ids[a.1].cmp(&model.sample_ids[b.1])));
            let mut representatives = vec![model.sample_ids[med].clone()];
            representatives.extend(by_z.iter().take(2).map(|&(_, i)| model.sample_ids[i].clone()));
            let mut member_ids: Vec<String> = members.iter().map(|&i| model.sample_ids[i].clone()).collect();
            member_ids.sort();
            folded.extend(member_ids.iter().cloned());
            let norm = if max > 0.0 { f.min_distance_to_known_layout / max } else { 0.0 };
            items.push(TriageItem {
                item_id: cluster_item_id(model.version, f.cluster_id),
                kind: ItemKind::Cluster,
                target_id: f.cluster_id.to_string(),
                priority: weights.anomalous_cluster * norm,
                provenance: Provenance::AnomalousCluster,
                sources: vec![Provenance::AnomalousCluster],
                score: f.min_distance_to_known_layout,
                review_state: ReviewState::Pending,
                reviewer: None,
                timestamp: None,
                members: member_ids,
                representatives,
            });
        }
    }

    let mut samples: BTreeMap<String, TriageItem> = BTreeMap::new();
    let mut offer = |id: &str, provenance: Provenance, score: f64, norm: f64| {
        if folded.contains(id) {
            return;
        }
        let priority = weights.of(provenance) * norm;
        let entry = samples.entry(id.to_string()).or_insert_with(|| TriageItem {
            item_id: sample_item_id(id),
            kind: ItemKind::Sample,
            target_id: id.to_string(),
            priority,
            provenance,
            sources: Vec::new(),
            score,
            review_state: ReviewState::Pending,
            reviewer: None,
            timestamp: None,
            members: Vec::new(),
            representatives: Vec::new(),
        });
        if !entry.sources.contains(&provenance) {
            entry.sources.push(provenance);
            entry.sources.sort();
        }
        if priority > entry.priority || (priority == entry.priority && provenance < entry.provenance) {
            entry.priority = priority;
            entry.provenance = provenance;
            entry.score = score;
        }
    };

    let z_max = sources.anomalies.iter().map(|a| a.z).fold(0.0, f64::max);
    for a in sources.anomalies.iter().filter(|a| a.z > 0.0) {
        offer(&a.sample_id, Provenance::ZScore, a.z, a.z / z_max);
    }
    if let Some(exp) = sources.expansion {
        let s_max = exp.candidates.iter().map(|c| c.score).fold(0.0, f64::max);
        for c in exp.candidates.iter().filter(|c| c.score > 0.0) {
            offer(&c.sample_id, Provenance::SeedExpansion, c.score, c.score / s_max);
        }
    }
    items.extend(samples.into_values());
    items.sort_by(|a, b| {
        b.priority
            .total_cmp(&a.priority)
            .then(b.kind.cmp(&a.kind))
            .then_with(|| a.target_id.cmp(&b.target_id))
    });
    Ok(items)
}

/// Source of verdict timestamps.
pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub DateTime<Utc>);

impl Clock for FixedClock {
    fn now(&self) -> DateTime<Utc> {
        self.0
    }
}

/// One sample-granular verdict. Cluster verdicts emit one entry per member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u64,
    pub timestamp: DateTime<Utc>,
    pub item_id: String,
    pub sample_id: String,
    pub verdict: ReviewState,
    pub reviewer: String,
}

/// Review states rebuilt from an audit log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReviewStates {
    pub items: BTreeMap<String, ReviewState>,
    pub samples: BTreeMap<String, ReviewState>,
}

pub fn replay(entries: &[AuditEntry]) -> Result<ReviewStates> {
    let mut states = ReviewStates::default();
    let mut last = 0;
    for e in entries {
        if e.seq <= last {
            return Err(Error::InvalidArgument(format!("audit sequence is not increasing at {}", e.seq)));
        }
        last = e.seq;
        states.items.insert(e.item_id.clone(), e.verdict);
        states.samples.insert(e.sample_id.clone(), e.verdict);
    }
    Ok(states)
}

pub fn read_audit_log(path: &Path) -> Result<Vec<AuditEntry>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (row, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            row: row + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// The set of queued items, their review states and the audit log.
/// Attaching a file makes every verdict append to it before returning.
#[derive(Debug, Default)]
pub struct TriageBook {
    items: BTreeMap<String, TriageItem>,
    order: Vec<String>,
    samples: BTreeMap<String, ReviewState>,
    log: Vec<AuditEntry>,
    sink: Option<PathBuf>,
}

impl TriageBook {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens (or creates) an audit log file and restores state from it.
    pub fn with_log_file(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let log = if path.exists() { read_audit_log(&path)? } else { Vec::new() };
        let states = replay(&log)?;
        Ok(Self {
            samples: states.samples,
            log,
            sink: Some(path),
            ..Self::default()
        })
    }

    /// Adds queue items. Items already present keep their review state; new
    /// items whose id has a logged verdict take that verdict.
    pub fn load_queue(&mut self, queue: &[TriageItem]) {
        let reviewed: BTreeMap<&str, &AuditEntry> = self.log.iter().map(|e| (e.item_id.as_str(), e)).collect();
        for item in queue {
            if self.items.contains_key(&item.item_id) {
                continue;
            }
            let mut item = item.clone();
            if let Some(e) = reviewed.get(item.item_id.as_str()) {
                item.review_state = e.verdict;
                item.reviewer = Some(e.reviewer.clone());
                item.timestamp = Some(e.timestamp);
            }
            self.order.push(item.item_id.clone());
            self.items.insert(item.item_id.clone(), item);
        }
    }

    pub fn items(&self) -> Vec<&TriageItem> {
        self.order.iter().map(|id| &self.items[id]).collect()
    }

    pub fn item(&self, item_id: &str) -> Option<&TriageItem> {
        self.items.get(item_id)
    }

    pub fn audit_log(&self) -> &[AuditEntry] {
        &self.log
    }

    pub fn sample_state(&self, sample_id: &str) -> ReviewState {
        self.samples.get(sample_id).copied().unwrap_or(ReviewState::Pending)
    }

    /// Samples confirmed as fraud, usable as expansion seeds.
    pub fn seeds(&self) -> Vec<String> {
        self.samples
            .iter()
            .filter(|(_, s)| **s == ReviewState::ConfirmedFraud)
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn record_verdict(
        &mut self,
        item_id: &str,
        verdict: ReviewState,
        reviewer: &str,
        clock: &dyn Clock,
    ) -> Result<(TriageItem, Vec<AuditEntry>)> {
        if verdict == ReviewState::Pending {
            return Err(Error::InvalidArgument("a verdict cannot be `pending`".into()));
        }
        let item = self
            .items
            .get(item_id)
            .ok_or_else(|| Error::UnknownItem(item_id.to_string()))?;
        if item.review_state != ReviewState::Pending {
            return Err(Error::AlreadyReviewed(item_id.to_string()));
        }
        let targets: Vec<String> = match item.kind {
            ItemKind::Sample => vec![item.target_id.clone()],
            ItemKind::Cluster => item.members.clone(),
        };
        let now = clock.now();
        let mut seq = self.log.last().map_or(0, |e| e.seq);
        let entries: Vec<AuditEntry> = targets
            .into_iter()
            .map(|sample_id| {
                seq += 1;
                AuditEntry {
                    seq,
                    timestamp: now,
                    item_id: item_id.to_string(),
                    sample_id,
                    verdict,
                    reviewer: reviewer.to_string(),
                }
            })
            .collect();
        if let Some(path) = &self.sink {
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            let mut buf = Vec::new();
            for e in &entries {
                serde_json::to_writer(&mut buf, e).map_err(|err| Error::io(path, err.into()))?;
                buf.push(b'\n');
            }
            file.write_all(&buf).and_then(|_| file.sync_data()).map_err(|e| Error::io(path, e))?;
        }
        for e in &entries {
            self.samples.insert(e.sample_id.clone(), verdict);
        }
        self.log.extend(entries.iter().cloned());
        let item = self.items.get_mut(item_id).expect("checked above");
        item.review_state = verdict;
        item.reviewer = Some(reviewer.to_string());
        item.timestamp = Some(now);
        Ok((item.clone(), entries))
    }
}
