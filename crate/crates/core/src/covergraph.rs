//! Weighted directed δ-ball graph.
//!
//! Vertex `x` has an edge to every `x'` with `d(x, x') <= δ` (closed ball, so
//! self-loops always exist). Because `d` is symmetric, the incoming edges of
//! `x` come from exactly its out-neighbors; each edge stores the position of
//! its reverse so incoming weights can be rewritten in O(degree).
//!
//! The out-degree rank (ODR) of a vertex is the sum of its outgoing weights and
//! is kept in a cache that every mutation updates.

use std::collections::BTreeSet;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datapool::EmbeddingPool;
use crate::error::{Error, Result};

/// Neighbor lists up to a maximal radius, with distances, from which graphs of
/// any smaller radius can be cut without touching the features again.
#[derive(Debug, Clone)]
pub struct NeighborTable {
    radius: f64,
    lists: Vec<Vec<(u32, f64)>>,
}

impl NeighborTable {
    pub fn build(pool: &EmbeddingPool, radius: f64) -> Self {
        let n = pool.len();
        let lists = (0..n)
            .into_par_iter()
            .map(|i| {
                (0..n)
                    .filter_map(|j| {
                        let d = pool.distance(i, j);
                        (d <= radius).then_some((j as u32, d))
                    })
                    .collect()
            })
            .collect();
        NeighborTable { radius, lists }
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverGraph {
    delta: f64,
    offsets: Vec<usize>,
    targets: Vec<u32>,
    reverse: Vec<usize>,
    weights: Vec<f64>,
    odr: Vec<f64>,
}

impl CoverGraph {
    /// Exact δ-ball graph with unit weights.
    pub fn build(pool: &EmbeddingPool, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::invalid(format!("delta must be positive, got {delta}")));
        }
        Ok(Self::from_table(&NeighborTable::build(pool, delta), delta))
    }

    /// Cuts the graph of radius `delta` out of a table built with a radius of at
    /// least `delta`.
    pub fn from_table(table: &NeighborTable, delta: f64) -> Self {
        assert!(delta <= table.radius, "table radius {} < delta {delta}", table.radius);
        let n = table.lists.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for list in &table.lists {
            targets.extend(list.iter().filter(|(_, d)| *d <= delta).map(|(j, _)| *j));
            offsets.push(targets.len());
        }
        let mut reverse = vec![0usize; targets.len()];
        for x in 0..n {
            for e in offsets[x]..offsets[x + 1] {
                let y = targets[e] as usize;
                let row = &targets[offsets[y]..offsets[y + 1]];
                let pos = row.binary_search(&(x as u32)).expect("ball graph is symmetric");
                reverse[e] = offsets[y] + pos;
            }
        }
        let weights = vec![1.0; targets.len()];
        let odr = (0..n).map(|x| (offsets[x + 1] - offsets[x]) as f64).collect();
        CoverGraph {
            delta,
            offsets,
            targets,
            reverse,
            weights,
            odr,
        }
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn len(&self) -> usize {
        self.odr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.odr.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.targets.len()
    }

    /// Out-neighbors of `x`, i.e. the samples in its δ-ball, ascending.
    pub fn ball(&self, x: usize) -> impl Iterator<Item = usize> + '_ {
        self.targets[self.offsets[x]..self.offsets[x + 1]]
            .iter()
            .map(|&t| t as usize)
    }

    pub fn degree(&self, x: usize) -> usize {
        self.offsets[x + 1] - self.offsets[x]
    }

    pub fn odr(&self, x: usize) -> f64 {
        self.odr[x]
    }

    pub fn odr_all(&self) -> &[f64] {
        &self.odr
    }

    /// `(src, dst, weight)` for every edge, grouped by source.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.len()).flat_map(move |x| {
            (self.offsets[x]..self.offsets[x + 1]).map(move |e| (x, self.targets[e] as usize, self.weights[e]))
        })
    }

    /// Union of the balls around `centers`.
    pub fn covered_by(&self, centers: &[usize]) -> BTreeSet<usize> {
        centers.iter().flat_map(|&z| self.ball(z)).collect()
    }

    fn set_edge(&mut self, e: usize, src: usize, w: f64) {
        let old = self.weights[e];
        if old != w {
            self.weights[e] = w;
            self.odr[src] += w - old;
        }
    }

    fn set_incoming_of(&mut self, x: usize, w: f64) {
        for e in self.offsets[x]..self.offsets[x + 1] {
            let src = self.targets[e] as usize;
            let r = self.reverse[e];
            self.set_edge(r, src, w);
        }
    }

    /// Zeroes every incoming edge of every sample covered by a target's ball.
    pub fn zero_incoming(&mut self, targets: &[usize]) {
        for x in self.covered_by(targets) {
            self.set_incoming_of(x, 0.0);
        }
    }

    /// Zeroes every outgoing edge of the sources.
    pub fn zero_outgoing(&mut self, sources: &[usize]) {
        for &z in sources {
            for e in self.offsets[z]..self.offsets[z + 1] {
                self.set_edge(e, z, 0.0);
            }
            // exact, no accumulated rounding
            self.odr[z] = 0.0;
        }
    }

    /// Overwrites the incoming weights of every sample in the targets' balls.
    pub fn set_incoming_weight(&mut self, targets: &[usize], w: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::invalid(format!("edge weight must be in [0, 1], got {w}")));
        }
        for x in self.covered_by(targets) {
            self.set_incoming_of(x, w);
        }
        Ok(())
    }

    /// Restores all weights to 1.
    pub fn reset_weights(&mut self) {
        self.weights.iter_mut().for_each(|w| *w = 1.0);
        for x in 0..self.len() {
            self.odr[x] = self.degree(x) as f64;
        }
    }

    /// Recomputes the ODR cache from the weights.
    pub fn recompute_odr(&mut self) {
        for x in 0..self.len() {
            self.odr[x] = self.weights[self.offsets[x]..self.offsets[x + 1]].iter().sum();
        }
    }

    /// Rebuilds weights from scratch for a clean/noisy partition of the
    /// labeled set: incoming edges of the noisy balls get `noisy_weight`,
    /// incoming edges of the clean balls are zeroed (clean coverage wins where
    /// balls overlap), and outgoing edges of noisy samples are zeroed.
    pub fn refresh(&mut self, clean: &[usize], noisy: &[usize], noisy_weight: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&noisy_weight) {
            return Err(Error::invalid(format!(
                "noisy weight must be in [0, 1], got {noisy_weight}"
            )));
        }
        self.reset_weights();
        if noisy_weight != 1.0 {
            self.set_incoming_weight(noisy, noisy_weight)?;
        }
        self.zero_incoming(clean);
        self.zero_outgoing(noisy);
        Ok(())
    }

    /// Candidate with maximal ODR; ties go to the lowest index.
    pub fn argmax_odr(&self, candidates: &[usize]) -> Result<usize> {
        let mut best: Option<usize> = None;
        for &c in candidates {
            best = match best {
                None => Some(c),
                Some(b) => {
                    let (oc, ob) = (self.odr[c], self.odr[b]);
                    if oc > ob || (oc == ob && c < b) {
                        Some(c)
                    } else {
                        Some(b)
                    }
                }
            };
        }
        best.ok_or(Error::EmptyCandidates)
    }

    pub fn max_odr(&self, candidates: impl IntoIterator<Item = usize>) -> f64 {
        candidates.into_iter().map(|c| self.odr[c]).fold(0.0, f64::max)
    }

    /// Writes `src dst weight` per edge.
    pub fn dump_edges<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (s, d, w) in self.edges() {
            writeln!(out, "{s} {d} {w}")?;
        }
        Ok(())
    }
}

/// Result of the δ-update search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaUpdate {
    pub delta: f64,
    /// `(δ', max ODR over unlabeled vertices)` for every candidate.
    pub curve: Vec<(f64, f64)>,
    /// True when no candidate graph has a non-loop edge left.
    pub exhausted: bool,
}

/// `count` evenly spaced radii in `(0.05 δ, 0.95 δ]`.
pub fn delta_grid(delta_init: f64, count: usize) -> Vec<f64> {
    let lo = 0.05 * delta_init;
    let step = 0.9 * delta_init / count as f64;
    (1..=count).map(|k| lo + k as f64 * step).collect()
}

/// For each candidate radius, builds the ball graph, removes the incoming
/// edges of everything covered by `labeled_clean`, and measures the maximal
/// ODR among `unlabeled`. Returns the radius with the largest maximum
/// (`prefer_larger` breaks ties), or `current` with `exhausted` set when every
/// maximum is at most 1.
pub fn update_delta(
    pool: &EmbeddingPool,
    labeled_clean: &[usize],
    unlabeled: &[usize],
    candidates: &[f64],
    current: f64,
    prefer_larger: bool,
) -> Result<DeltaUpdate> {
    if candidates.is_empty() {
        return Err(Error::invalid("empty delta candidate list"));
    }
    if candidates.iter().any(|&d| d.is_nan() || d <= 0.0) {
        return Err(Error::invalid("delta candidates must be positive"));
    }
    let radius = candidates.iter().copied().fold(0.0, f64::max);
    let table = NeighborTable::build(pool, radius);
    let curve: Vec<(f64, f64)> = candidates
        .par_iter()
        .map(|&d| {
            let mut g = CoverGraph::from_table(&table, d);
            g.zero_incoming(labeled_clean);
            (d, g.max_odr(unlabeled.iter().copied()))
        })
        .collect();
    let mut best = 0usize;
    for (k, &(d, m)) in curve.iter().enumerate() {
        let (bd, bm) = curve[best];
        let better = m > bm || (m == bm && if prefer_larger { d > bd } else { d < bd });
        if better {
            best = k;
        }
    }
    let exhausted = curve[best].1 <= 1.0;
    Ok(DeltaUpdate {
        delta: if exhausted { current } else { curve[best].0 },
        curve,
        exhausted,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub covered: BTreeSet<usize>,
    pub coverage_fraction: f64,
}

/// Exact union of the δ-balls around `labeled_clean`.
pub fn coverage(pool: &EmbeddingPool, delta: f64, labeled_clean: &[usize]) -> CoverageReport {
    let n = pool.len();
    let flags: Vec<bool> = (0..n)
        .into_par_iter()
        .map(|x| labeled_clean.iter().any(|&l| pool.distance(l, x) <= delta))
        .collect();
    let covered: BTreeSet<usize> = flags.iter().enumerate().filter_map(|(i, &f)| f.then_some(i)).collect();
    CoverageReport {
        coverage_fraction: covered.len() as f64 / n as f64,
        covered,
    }
}
