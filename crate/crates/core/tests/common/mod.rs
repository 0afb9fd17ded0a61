#![allow(dead_code)]

use nas_core::datapool::{generate_synthetic, SyntheticSpec};
use nas_core::{CoverGraph, EmbeddingPool};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn synthetic(classes: usize, per_class: usize, dim: usize, spread: f64, seed: u64) -> EmbeddingPool {
    generate_synthetic(&SyntheticSpec {
        class_count: classes,
        points_per_class: per_class,
        dimension: dim,
        cluster_spread: spread,
        center_spread: 1.0,
        seed,
    })
    .unwrap()
}

/// Uniform points in [-1, 1]^dim, normalized, with random labels.
pub fn uniform(n: usize, dim: usize, classes: usize, seed: u64) -> EmbeddingPool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = Array2::from_shape_fn((n, dim), |_| rng.random_range(-1.0..1.0));
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    EmbeddingPool::new(f, labels, classes, true).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Brute-force greedy max coverage: each pick covers the most uncovered
/// points within `delta`; ties go to the lowest index.
pub fn greedy_max_coverage(pool: &EmbeddingPool, delta: f64, budget: usize) -> Vec<usize> {
    let n = pool.len();
    let mut covered = vec![false; n];
    let mut picked = vec![false; n];
    let mut out = Vec::with_capacity(budget);
    for _ in 0..budget {
        let mut best: Option<(usize, usize)> = None;
        for c in (0..n).filter(|&c| !picked[c]) {
            let gain = (0..n).filter(|&x| !covered[x] && pool.distance(c, x) <= delta).count();
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((c, gain));
            }
        }
        let (c, _) = best.unwrap();
        picked[c] = true;
        for (x, cov) in covered.iter_mut().enumerate() {
            if pool.distance(c, x) <= delta {
                *cov = true;
            }
        }
        out.push(c);
    }
    out
}

/// Brute-force greedy k-center from an empty anchor set; ties go to the
/// lowest index.
pub fn greedy_k_center(pool: &EmbeddingPool, budget: usize) -> Vec<usize> {
    let n = pool.len();
    let mut out: Vec<usize> = Vec::with_capacity(budget);
    for _ in 0..budget {
        let mut best: Option<(usize, f64)> = None;
        for c in (0..n).filter(|c| !out.contains(c)) {
            let d = out.iter().map(|&s| pool.distance(c, s)).fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(_, b)| d > b) {
                best = Some((c, d));
            }
        }
        out.push(best.unwrap().0);
    }
    out
}

/// CoverGraph operations replayed against [`Model`].
#[derive(Debug, Clone)]
pub enum Op {
    ZeroIncoming(Vec<usize>),
    ZeroOutgoing(Vec<usize>),
    SetIncoming(Vec<usize>, f64),
    Reset,
    Refresh(Vec<usize>, Vec<usize>, f64),
}

/// Dense model: `adj[src][dst]` marks edges, `w[(src, dst)]` holds their weight.
pub struct Model {
    pub adj: Vec<Vec<bool>>,
    pub w: Array2<f64>,
}

impl Model {
    pub fn new(pool: &EmbeddingPool, delta: f64) -> Self {
        let n = pool.len();
        let adj: Vec<Vec<bool>> = (0..n)
            .map(|i| (0..n).map(|j| pool.distance(i, j) <= delta).collect())
            .collect();
        let w = Array2::from_shape_fn((n, n), |(i, j)| if adj[i][j] { 1.0 } else { 0.0 });
        Model { adj, w }
    }

    fn covered(&self, centers: &[usize]) -> Vec<usize> {
        let n = self.adj.len();
        (0..n).filter(|&x| centers.iter().any(|&c| self.adj[c][x])).collect()
    }

    fn set_incoming(&mut self, targets: &[usize], v: f64) {
        for x in self.covered(targets) {
            for s in 0..self.adj.len() {
                if self.adj[s][x] {
                    self.w[(s, x)] = v;
                }
            }
        }
    }

    fn zero_outgoing(&mut self, sources: &[usize]) {
        for &z in sources {
            self.w.row_mut(z).fill(0.0);
        }
    }

    fn reset(&mut self) {
        let n = self.adj.len();
        for i in 0..n {
            for j in 0..n {
                self.w[(i, j)] = if self.adj[i][j] { 1.0 } else { 0.0 };
            }
        }
    }

    pub fn apply(&mut self, op: &Op) {
        match op {
            Op::ZeroIncoming(t) => self.set_incoming(t, 0.0),
            Op::ZeroOutgoing(z) => self.zero_outgoing(z),
            Op::SetIncoming(t, w) => self.set_incoming(t, *w),
            Op::Reset => self.reset(),
            Op::Refresh(c, z, w) => {
                self.reset();
                if *w != 1.0 {
                    self.set_incoming(z, *w);
                }
                self.set_incoming(c, 0.0);
                self.zero_outgoing(z);
            }
        }
    }
}

pub fn apply(g: &mut CoverGraph, op: &Op) {
    match op {
        Op::ZeroIncoming(t) => g.zero_incoming(t),
        Op::ZeroOutgoing(z) => g.zero_outgoing(z),
        Op::SetIncoming(t, w) => g.set_incoming_weight(t, *w).unwrap(),
        Op::Reset => g.reset_weights(),
        Op::Refresh(c, z, w) => g.refresh(c, z, *w).unwrap(),
    }
}
