//! Exact cosine k-NN similarity graph and thresholded breadth-first expansion
//! from confirmed seeds.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use ndarray::{s, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{fingerprint, working_matrix, DistanceMetric, EmbeddingRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphParams {
    pub k_neighbors: usize,
    /// Edges with lower cosine similarity are dropped.
    pub min_similarity: f64,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self {
            k_neighbors: 20,
            min_similarity: -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: String,
    pub b: String,
    pub similarity: f64,
}

#[derive(Debug, Clone)]
pub struct SimilarityGraph {
    pub sample_ids: Vec<String>,
    pub params: GraphParams,
    /// Fingerprint of the records the graph was built from.
    pub snapshot: u64,
    /// Sorted by neighbor index; symmetric.
    adjacency: Vec<Vec<(usize, f64)>>,
    unit: Array2<f64>,
    index: HashMap<String, usize>,
}

impl SimilarityGraph {
    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn neighbors(&self, sample_id: &str) -> Option<Vec<(&str, f64)>> {
        let i = *self.index.get(sample_id)?;
        Some(
            self.adjacency[i]
                .iter()
                .map(|&(j, w)| (self.sample_ids[j].as_str(), w))
                .collect(),
        )
    }

    /// Every undirected edge once, ordered by endpoint index.
    pub fn edges(&self) -> Vec<Edge> {
        let mut out = Vec::new();
        for (i, row) in self.adjacency.iter().enumerate() {
            for &(j, w) in row {
                if i < j {
                    out.push(Edge {
                        a: self.sample_ids[i].clone(),
                        b: self.sample_ids[j].clone(),
                        similarity: w,
                    });
                }
            }
        }
        out
    }

    pub fn contains(&self, sample_id: &str) -> bool {
        self.index.contains_key(sample_id)
    }

    /// Cosine similarity between two nodes, `None` if either is unknown.
    pub fn similarity(&self, a: &str, b: &str) -> Option<f64> {
        let (i, j) = (*self.index.get(a)?, *self.index.get(b)?);
        Some(self.unit.row(i).dot(&self.unit.row(j)).clamp(-1.0, 1.0))
    }
}

pub fn build_similarity_graph(records: &[EmbeddingRecord], params: &GraphParams) -> Result<SimilarityGraph> {
    let n = records.len();
    if n < 2 {
        return Err(Error::InvalidArgument("a similarity graph needs at least two samples".into()));
    }
    if params.k_neighbors == 0 || params.min_similarity.is_nan() {
        return Err(Error::InvalidArgument("k_neighbors must be positive".into()));
    }
    let mut index = HashMap::with_capacity(n);
    for (i, r) in records.iter().enumerate() {
        if index.insert(r.sample_id.clone(), i).is_some() {
            return Err(Error::DuplicateId {
                row: i,
                id: r.sample_id.clone(),
            });
        }
    }
    let unit = working_matrix(records, DistanceMetric::CosineDistance)?;
    let k = params.k_neighbors.min(n - 1);
    let block = 256;
    let starts: Vec<usize> = (0..n).step_by(block).collect();
    let lists: Vec<Vec<(usize, f64)>> = starts
        .into_par_iter()
        .flat_map_iter(|start| {
            let end = (start + block).min(n);
            let gram = unit.slice(s![start..end, ..]).dot(&unit.t());
            (start..end).map(move |i| {
                let row = gram.row(i - start);
                let mut cand: Vec<(usize, f64)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| (j, row[j].clamp(-1.0, 1.0)))
                    .collect();
                let cmp = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
                if cand.len() > k {
                    cand.select_nth_unstable_by(k - 1, cmp);
                    cand.truncate(k);
                }
                cand
            })
        })
        .collect();
    let mut sets: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
    for (i, list) in lists.into_iter().enumerate() {
        for (j, _) in list {
            // both directions share one exactly symmetric weight
            let (a, b) = (i.min(j), i.max(j));
            let w = unit.row(a).dot(&unit.row(b)).clamp(-1.0, 1.0);
            if w >= params.min_similarity {
                sets[i].insert(j, w);
                sets[j].insert(i, w);
            }
        }
    }
    let adjacency = sets.into_iter().map(|m| m.into_iter().collect()).collect();
    Ok(SimilarityGraph {
        sample_ids: records.iter().map(|r| r.sample_id.clone()).collect(),
        params: params.clone(),
        snapshot: fingerprint(records),
        adjacency,
        unit,
        index,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpandParams {
    /// Only edges with at least this similarity are crossed.
    pub threshold: f64,
    pub max_hops: usize,
}

impl Default for ExpandParams {
    fn default() -> Self {
        Self {
            threshold: 0.9,
            max_hops: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub sample_id: String,
    /// Highest cosine similarity to any seed.
    pub score: f64,
    /// Breadth-first distance from the nearest seed.
    pub hops: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionResult {
    pub seed_ids: Vec<String>,
    pub candidates: Vec<Candidate>,
    pub params: ExpandParams,
    pub snapshot: u64,
}

/// Candidates are ordered by score (descending), then hops, then id.
pub fn expand_from_seeds(graph: &SimilarityGraph, seeds: &[String], params: &ExpandParams) -> Result<ExpansionResult> {
    if !params.threshold.is_finite() || params.max_hops == 0 {
        return Err(Error::InvalidArgument("threshold must be finite and max_hops at least 1".into()));
    }
    let mut seed_idx = BTreeSet::new();
    for s in seeds {
        let i = *graph.index.get(s).ok_or_else(|| Error::UnknownSeed(s.clone()))?;
        seed_idx.insert(i);
    }
    let mut hops: BTreeMap<usize, usize> = seed_idx.iter().map(|&i| (i, 0)).collect();
    let mut queue: VecDeque<usize> = seed_idx.iter().copied().collect();
    while let Some(i) = queue.pop_front() {
        let h = hops[&i];
        if h == params.max_hops {
            continue;
        }
        for &(j, w) in &graph.adjacency[i] {
            if w >= params.threshold && !hops.contains_key(&j) {
                hops.insert(j, h + 1);
                queue.push_back(j);
            }
        }
    }
    let seeds_vec: Vec<usize> = seed_idx.iter().copied().collect();
    let seed_rows = graph.unit.select(Axis(0), &seeds_vec);
    let mut candidates: Vec<Candidate> = hops
        .into_iter()
        .filter(|(i, _)| !seed_idx.contains(i))
        .map(|(i, h)| {
            let score = seed_rows
                .rows()
                .into_iter()
                .map(|s| s.dot(&graph.unit.row(i)).clamp(-1.0, 1.0))
                .fold(f64::NEG_INFINITY, f64::max);
            Candidate {
                sample_id: graph.sample_ids[i].clone(),
                score,
                hops: h,
            }
        })
        .collect();
    candidates.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.hops.cmp(&b.hops))
            .then_with(|| a.sample_id.cmp(&b.sample_id))
    });
    Ok(ExpansionResult {
        seed_ids: seeds_vec.iter().map(|&i| graph.sample_ids[i].clone()).collect(),
        candidates,
        params: params.clone(),
        snapshot: graph.snapshot,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> Vec<EmbeddingRecord> {
        // unit vectors at increasing angles: neighbors on the arc are most similar
        (0..n)
            .map(|i| {
                let t = i as f32 * 0.1;
                EmbeddingRecord::new(format!("n{i:02}"), vec![t.cos(), t.sin()])
            })
            .collect()
    }

    #[test]
    fn identical_vectors_have_unit_edge() {
        let recs = vec![
            EmbeddingRecord::new("a", vec![1.0, 2.0, 3.0]),
            EmbeddingRecord::new("b", vec![2.0, 4.0, 6.0]),
            EmbeddingRecord::new("c", vec![-1.0, 0.5, 0.0]),
        ];
        let g = build_similarity_graph(&recs, &GraphParams { k_neighbors: 1, min_similarity: -1.0 }).unwrap();
        let nb = g.neighbors("a").unwrap();
        assert_eq!(nb[0].0, "b");
        assert!((nb[0].1 - 1.0).abs() < 1e-12);
        let none = build_similarity_graph(
            &recs,
            &GraphParams {
                k_neighbors: 2,
                min_similarity: 1.0 + 1e-9,
            },
        )
        .unwrap();
        assert_eq!(none.edge_count(), 0);
    }

    #[test]
    fn expansion_contract() {
        let recs = line(10);
        let g = build_similarity_graph(&recs, &GraphParams { k_neighbors: 2, min_similarity: -1.0 }).unwrap();
        let seeds = vec!["n00".to_string()];
        let all = expand_from_seeds(&g, &seeds, &ExpandParams { threshold: 0.0, max_hops: 9 }).unwrap();
        assert_eq!(all.candidates.len(), 9);
        assert!(all.candidates.windows(2).all(|w| w[0].score >= w[1].score));
        assert_eq!(all.candidates[0].sample_id, "n01");
        assert_eq!(all.candidates[0].hops, 1);

        let near = expand_from_seeds(&g, &seeds, &ExpandParams { threshold: 0.0, max_hops: 1 }).unwrap();
        assert_eq!(near.candidates.len(), 2);

        let none = expand_from_seeds(&g, &seeds, &ExpandParams { threshold: 0.9999, max_hops: 3 }).unwrap();
        assert!(none.candidates.is_empty());

        assert!(matches!(
            expand_from_seeds(&g, &["zz".to_string()], &ExpandParams::default()),
            Err(Error::UnknownSeed(_))
        ));
    }
}
