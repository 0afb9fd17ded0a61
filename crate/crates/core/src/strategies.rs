//! Greedy query-selection strategies behind one interface.
//!
//! Every strategy sees only the anchors it is given as "labeled" (for NAS that
//! is the clean part of L) and picks from the candidate list. Ties always go to
//! the lowest sample index, independent of candidate order.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covergraph::{delta_grid, update_delta, CoverGraph};
use crate::datapool::EmbeddingPool;
use crate::error::{Error, Result};
use crate::rng;

/// Pools up to this size get a precomputed kernel matrix in MaxHerding.
const KERNEL_CACHE_LIMIT: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbCoverParams {
    pub delta: f64,
    /// Search a smaller radius when the graph runs out of non-loop edges.
    pub delta_update: bool,
    pub delta_grid: usize,
    /// Tie rule of the radius search.
    pub prefer_larger_delta: bool,
}

impl Default for ProbCoverParams {
    fn default() -> Self {
        ProbCoverParams {
            delta: 0.5,
            delta_update: true,
            delta_grid: 16,
            prefer_larger_delta: true,
        }
    }
}

fn default_sigma() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StrategySpec {
    Random,
    #[serde(rename = "probcover")]
    ProbCover(ProbCoverParams),
    #[serde(rename = "maxherding")]
    MaxHerding {
        #[serde(default = "default_sigma")]
        sigma: f64,
    },
    Coreset,
}

impl StrategySpec {
    pub fn name(&self) -> &'static str {
        match self {
            StrategySpec::Random => "random",
            StrategySpec::ProbCover(_) => "probcover",
            StrategySpec::MaxHerding { .. } => "maxherding",
            StrategySpec::Coreset => "coreset",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            StrategySpec::ProbCover(p) => {
                if !(p.delta > 0.0 && p.delta.is_finite()) {
                    return Err(Error::config("strategy.delta", "must be positive"));
                }
                if p.delta_grid == 0 {
                    return Err(Error::config("strategy.delta_grid", "must be positive"));
                }
                Ok(())
            }
            StrategySpec::MaxHerding { sigma } => {
                if !(*sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::config("strategy.sigma", "must be positive"));
                }
                Ok(())
            }
            StrategySpec::Random | StrategySpec::Coreset => Ok(()),
        }
    }
}

/// What a strategy is asked to do in one call.
#[derive(Debug, Clone, Copy)]
pub struct StrategyRequest<'a> {
    /// Samples treated as labeled.
    pub labeled_clean: &'a [usize],
    /// Labeled samples judged noisy; only the ProbCover graph uses them.
    pub labeled_noisy: &'a [usize],
    /// Incoming weight given to the balls of noisy samples (1 for NPC, 1 − q̂
    /// for Weighted NPC).
    pub noisy_weight: f64,
    pub unlabeled: &'a [usize],
    pub batch: usize,
}

impl<'a> StrategyRequest<'a> {
    pub fn new(labeled_clean: &'a [usize], unlabeled: &'a [usize], batch: usize) -> Self {
        StrategyRequest {
            labeled_clean,
            labeled_noisy: &[],
            noisy_weight: 1.0,
            unlabeled,
            batch,
        }
    }

    fn check(&self) -> Result<()> {
        if self.unlabeled.is_empty() {
            return Err(Error::EmptyCandidates);
        }
        if self.batch == 0 {
            return Err(Error::invalid("batch must be >= 1"));
        }
        if self.batch > self.unlabeled.len() {
            return Err(Error::invalid(format!(
                "batch {} exceeds {} candidates",
                self.batch,
                self.unlabeled.len()
            )));
        }
        Ok(())
    }

    fn sorted_candidates(&self) -> Vec<usize> {
        let mut c = self.unlabeled.to_vec();
        c.sort_unstable();
        c.dedup();
        c
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Selection {
    pub chosen: Vec<usize>,
    /// Greedy objective value at each pick.
    pub per_pick_scores: Vec<f64>,
    /// Notable events (radius updates, fallbacks) in human-readable form.
    pub events: Vec<String>,
}

impl Selection {
    fn push(&mut self, idx: usize, score: f64) {
        self.chosen.push(idx);
        self.per_pick_scores.push(score);
    }
}

/// Uniform pick of one candidate, keyed by the number of samples already
/// labeled or chosen so the same state always gives the same pick.
fn fallback_pick(remaining: &BTreeSet<usize>, seed: u64, picked_so_far: usize) -> usize {
    let mut r = rng::stream(rng::derive(seed, picked_so_far as u64), rng::SELECT);
    let k = r.random_range(0..remaining.len());
    *remaining.iter().nth(k).expect("non-empty")
}

/// ProbCover: repeatedly picks the candidate with the highest ODR and zeroes
/// the incoming edges of its ball.
///
/// The graph must already reflect the request's anchors (see
/// [`CoverGraph::refresh`]). When no candidate has an ODR above 1 and radius
/// updates are enabled, a smaller radius is searched; if the search finds
/// nothing, the rest of the batch is drawn at random.
pub fn probcover_select(
    request: &StrategyRequest<'_>,
    graph: &mut CoverGraph,
    pool: &EmbeddingPool,
    params: &ProbCoverParams,
    seed: u64,
) -> Result<Selection> {
    request.check()?;
    let mut remaining: BTreeSet<usize> = request.unlabeled.iter().copied().collect();
    let mut sel = Selection::default();
    let mut fallback = false;
    // set by a radius update, cleared by the next greedy pick
    let mut just_updated = false;
    let base_count = request.labeled_clean.len() + request.labeled_noisy.len();

    while sel.chosen.len() < request.batch {
        if fallback {
            let pick = fallback_pick(&remaining, seed, base_count + sel.chosen.len());
            remaining.remove(&pick);
            graph.zero_incoming(&[pick]);
            sel.push(pick, graph.odr(pick));
            continue;
        }
        let cand: Vec<usize> = remaining.iter().copied().collect();
        let best = graph.max_odr(cand.iter().copied());
        if best <= 1.0 && params.delta_update {
            if just_updated {
                fallback = true;
                sel.events.push(format!(
                    "graph still exhausted after radius update; {} random picks",
                    request.batch - sel.chosen.len()
                ));
                continue;
            }
            let mut anchors = request.labeled_clean.to_vec();
            anchors.extend_from_slice(&sel.chosen);
            let grid = delta_grid(graph.delta(), params.delta_grid);
            let upd = update_delta(pool, &anchors, &cand, &grid, graph.delta(), params.prefer_larger_delta)?;
            if upd.exhausted {
                fallback = true;
                sel.events.push(format!(
                    "radius search found no edges below delta {:.6}; {} random picks",
                    graph.delta(),
                    request.batch - sel.chosen.len()
                ));
                continue;
            }
            sel.events
                .push(format!("delta update {:.6} -> {:.6}", graph.delta(), upd.delta));
            *graph = CoverGraph::build(pool, upd.delta)?;
            graph.refresh(request.labeled_clean, request.labeled_noisy, request.noisy_weight)?;
            graph.zero_incoming(&sel.chosen);
            just_updated = true;
            continue;
        }
        let pick = graph.argmax_odr(&cand)?;
        let score = graph.odr(pick);
        graph.zero_incoming(&[pick]);
        remaining.remove(&pick);
        sel.push(pick, score);
        just_updated = false;
    }
    Ok(sel)
}

#[inline]
fn gaussian(sq_dist: f64, sigma: f64) -> f64 {
    (-sq_dist / (2.0 * sigma * sigma)).exp()
}

/// MaxHerding with a Gaussian kernel: greedy maximization of the total kernel
/// coverage `Σ_x max_s k(x, s)` over all pool points.
pub fn maxherding_select(request: &StrategyRequest<'_>, pool: &EmbeddingPool, sigma: f64) -> Result<Selection> {
    request.check()?;
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::invalid("sigma must be positive"));
    }
    let n = pool.len();
    let cache: Option<Vec<f64>> = (n <= KERNEL_CACHE_LIMIT).then(|| {
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| (0..n).map(|j| gaussian(pool.sq_distance(i, j), sigma)).collect())
            .collect();
        rows.concat()
    });
    let kernel = |i: usize, j: usize| -> f64 {
        match &cache {
            Some(k) => k[i * n + j],
            None => gaussian(pool.sq_distance(i, j), sigma),
        }
    };

    let mut best_sim = vec![0.0f64; n];
    for &a in request.labeled_clean {
        for (x, m) in best_sim.iter_mut().enumerate() {
            *m = m.max(kernel(x, a));
        }
    }
    let mut remaining = request.sorted_candidates();
    let mut sel = Selection::default();
    while sel.chosen.len() < request.batch {
        let gains: Vec<f64> = remaining
            .par_iter()
            .map(|&c| {
                let mut g = 0.0;
                for (x, &m) in best_sim.iter().enumerate() {
                    let k = kernel(x, c);
                    if k > m {
                        g += k - m;
                    }
                }
                g
            })
            .collect();
        let mut best = 0usize;
        for k in 1..gains.len() {
            if gains[k] > gains[best] {
                best = k;
            }
        }
        let pick = remaining.remove(best);
        for (x, m) in best_sim.iter_mut().enumerate() {
            *m = m.max(kernel(x, pick));
        }
        sel.push(pick, gains[best]);
    }
    Ok(sel)
}

/// Greedy k-center: each pick maximizes the distance to the nearest anchor or
/// earlier pick.
pub fn coreset_select(request: &StrategyRequest<'_>, pool: &EmbeddingPool) -> Result<Selection> {
    request.check()?;
    let mut remaining = request.sorted_candidates();
    let mut min_dist: Vec<f64> = remaining
        .par_iter()
        .map(|&c| {
            request
                .labeled_clean
                .iter()
                .map(|&a| pool.distance(c, a))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mut sel = Selection::default();
    while sel.chosen.len() < request.batch {
        let mut best = 0usize;
        for k in 1..remaining.len() {
            if min_dist[k] > min_dist[best] {
                best = k;
            }
        }
        let pick = remaining.remove(best);
        let score = min_dist.remove(best);
        for (k, &c) in remaining.iter().enumerate() {
            min_dist[k] = min_dist[k].min(pool.distance(c, pick));
        }
        sel.push(pick, score);
    }
    Ok(sel)
}

/// Uniform sample without replacement.
pub fn random_select(request: &StrategyRequest<'_>, seed: u64) -> Result<Selection> {
    request.check()?;
    let mut cand = request.sorted_candidates();
    let mut r = rng::stream(seed, rng::SELECT);
    let (picked, _) = cand.partial_shuffle(&mut r, request.batch);
    Ok(Selection {
        per_pick_scores: vec![0.0; picked.len()],
        chosen: picked.to_vec(),
        events: Vec::new(),
    })
}

/// A strategy plus the state it carries between calls (the ProbCover graph).
#[derive(Debug, Clone)]
pub struct Selector<'p> {
    pool: &'p EmbeddingPool,
    spec: StrategySpec,
    graph: Option<CoverGraph>,
    seed: u64,
}

impl<'p> Selector<'p> {
    pub fn new(pool: &'p EmbeddingPool, spec: StrategySpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let graph = match &spec {
            StrategySpec::ProbCover(p) => Some(CoverGraph::build(pool, p.delta)?),
            _ => None,
        };
        Ok(Selector {
            pool,
            spec,
            graph,
            seed,
        })
    }

    pub fn spec(&self) -> &StrategySpec {
        &self.spec
    }

    pub fn graph(&self) -> Option<&CoverGraph> {
        self.graph.as_ref()
    }

    /// Radius currently in effect (ProbCover only).
    pub fn delta(&self) -> Option<f64> {
        self.graph.as_ref().map(|g| g.delta())
    }

    /// Runs one selection call. For ProbCover the graph weights are rebuilt
    /// from the request's clean/noisy partition before picking.
    pub fn select(&mut self, request: &StrategyRequest<'_>) -> Result<Selection> {
        match &self.spec {
            StrategySpec::Random => {
                let labeled = request.labeled_clean.len() + request.labeled_noisy.len();
                random_select(request, rng::derive(self.seed, labeled as u64))
            }
            StrategySpec::ProbCover(params) => {
                let graph = self.graph.as_mut().expect("graph built for ProbCover");
                graph.refresh(request.labeled_clean, request.labeled_noisy, request.noisy_weight)?;
                probcover_select(request, graph, self.pool, params, self.seed)
            }
            StrategySpec::MaxHerding { sigma } => maxherding_select(request, self.pool, *sigma),
            StrategySpec::Coreset => coreset_select(request, self.pool),
        }
    }
}
