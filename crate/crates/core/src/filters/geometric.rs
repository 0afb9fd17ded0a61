use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::{Array1, Axis};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::{FilterInput, FilterVerdict};
use crate::datapool::sq_dist;
use crate::error::{Error, Result};
use crate::rng;

/// Noisy iff the plurality label among the `max(1, ⌊|L|/C⌋)` nearest labeled
/// neighbours differs from the sample's own; ties involving the own label are clean.
pub fn knn(input: &FilterInput<'_>) -> Result<FilterVerdict> {
    let n = input.labeled.len();
    if n < 2 {
        return Ok(FilterVerdict::all_clean(input.labeled));
    }
    let c = input.class_count();
    let k = (n / c).max(1).min(n - 1);
    let mut flags = vec![false; n];
    let mut scores = vec![0.0; n];
    for p in 0..n {
        let mut nbrs: Vec<(f64, usize)> = (0..n)
            .filter(|&q| q != p)
            .map(|q| (input.pool.sq_distance(input.labeled[p], input.labeled[q]), q))
            .collect();
        nbrs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut counts = vec![0usize; c];
        for &(_, q) in &nbrs[..k] {
            counts[input.observed[q]] += 1;
        }
        let own = counts[input.observed[p]];
        let best = counts.iter().copied().max().unwrap_or(0);
        flags[p] = own < best;
        scores[p] = own as f64 / k as f64;
    }
    Ok(FilterVerdict::from_flags(input.labeled, &flags, Some(&scores)))
}

pub fn knn_k(labeled: usize, classes: usize) -> usize {
    (labeled / classes).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CentroidParams {
    pub trials: usize,
    pub subset_fraction: f64,
}

impl Default for CentroidParams {
    fn default() -> Self {
        CentroidParams {
            trials: 10,
            subset_fraction: 0.7,
        }
    }
}

impl CentroidParams {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::config("filter.trials", "must be >= 1"));
        }
        if !(self.subset_fraction > 0.0 && self.subset_fraction <= 1.0) {
            return Err(Error::config("filter.subset_fraction", "must be in (0, 1]"));
        }
        Ok(())
    }
}

/// Robust class centroids (minimum diagonal-covariance determinant over
/// random subsets); noisy iff a foreign centroid is strictly closer.
pub fn centroids_ransac(input: &FilterInput<'_>, params: &CentroidParams) -> Result<FilterVerdict> {
    params.validate()?;
    let n = input.labeled.len();
    let c = input.class_count();
    let d = input.pool.dim();
    let mut members = vec![Vec::new(); c];
    for (p, &l) in input.observed.iter().enumerate() {
        members[l].push(input.labeled[p]);
    }
    let mut rng = rng::stream(input.seed, rng::FILTER);
    let mut centroids: Vec<Option<Array1<f64>>> = vec![None; c];
    for (class, idx) in members.iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() == 1 {
            centroids[class] = Some(input.pool.row(idx[0]).to_owned());
            continue;
        }
        let m = ((params.subset_fraction * idx.len() as f64).ceil() as usize).clamp(1, idx.len());
        let mut best: Option<(f64, Array1<f64>)> = None;
        for _ in 0..params.trials {
            let picked: Vec<usize> = index::sample(&mut rng, idx.len(), m)
                .into_iter()
                .map(|t| idx[t])
                .collect();
            let x = input.pool.gather(&picked);
            let mean = x.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(d));
            let var = x.var_axis(Axis(0), 0.0);
            let logdet: f64 = var.iter().map(|v| (v + 1e-12).ln()).sum();
            if best.as_ref().is_none_or(|(b, _)| logdet < *b) {
                best = Some((logdet, mean));
            }
        }
        centroids[class] = best.map(|(_, m)| m);
    }

    let mut flags = vec![false; n];
    let mut scores = vec![0.0; n];
    for p in 0..n {
        let x = input.pool.row(input.labeled[p]);
        let own_class = input.observed[p];
        let own = centroids[own_class]
            .as_ref()
            .map_or(f64::INFINITY, |m| sq_dist(x, m.view()).sqrt());
        let other = centroids
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != own_class)
            .filter_map(|(_, m)| m.as_ref().map(|m| sq_dist(x, m.view()).sqrt()))
            .fold(f64::INFINITY, f64::min);
        flags[p] = other < own;
        scores[p] = if other.is_finite() { other - own } else { 0.0 };
    }
    Ok(FilterVerdict::from_flags(input.labeled, &flags, Some(&scores)))
}

/// Optimal two-cluster split of 1-D values. Returns the threshold `t` such
/// that values `< t` form the low cluster, or `None` when the values do not
/// spread.
pub fn two_means_split(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v[v.len() - 1] - v[0] < 1e-9 {
        return None;
    }
    let n = v.len();
    let mut prefix = vec![0.0; n + 1];
    let mut prefix_sq = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + v[i];
        prefix_sq[i + 1] = prefix_sq[i] + v[i] * v[i];
    }
    let sse = |a: usize, b: usize| {
        let m = (b - a) as f64;
        let s = prefix[b] - prefix[a];
        (prefix_sq[b] - prefix_sq[a]) - s * s / m
    };
    let mut best = (f64::INFINITY, 1);
    for k in 1..n {
        if v[k] - v[k - 1] <= 0.0 {
            continue;
        }
        let cost = sse(0, k) + sse(k, n);
        if cost < best.0 {
            best = (cost, k);
        }
    }
    Some(0.5 * (v[best.1 - 1] + v[best.1]))
}

/// Per class, alignment with the principal eigenvector of the members'
/// Gram matrix; the low-alignment 2-means cluster is noisy.
pub fn fine(input: &FilterInput<'_>) -> Result<FilterVerdict> {
    let n = input.labeled.len();
    let c = input.class_count();
    let d = input.pool.dim();
    let mut by_class = vec![Vec::new(); c];
    for (p, &l) in input.observed.iter().enumerate() {
        by_class[l].push(p);
    }
    let mut flags = vec![false; n];
    let mut scores = vec![1.0; n];
    for positions in by_class.iter().filter(|m| !m.is_empty()) {
        let rows: Vec<usize> = positions.iter().map(|&p| input.labeled[p]).collect();
        let x = input.pool.gather(&rows);
        let xm = DMatrix::from_row_iterator(rows.len(), d, x.iter().copied());
        let eig = SymmetricEigen::new(xm.transpose() * &xm);
        let top = eig.eigenvalues.imax();
        let mut u: DVector<f64> = eig.eigenvectors.column(top).into_owned();
        let mean: DVector<f64> = xm.row_mean().transpose();
        if u.dot(&mean) < 0.0 {
            u = -u;
        }
        let class_scores: Vec<f64> = (0..rows.len())
            .map(|r| {
                let row = xm.row(r).transpose();
                let norm2 = row.norm_squared();
                if norm2 == 0.0 {
                    0.0
                } else {
                    row.dot(&u).powi(2) / norm2
                }
            })
            .collect();
        for (&p, &s) in positions.iter().zip(&class_scores) {
            scores[p] = s;
        }
        if positions.len() < 3 {
            continue;
        }
        if let Some(t) = two_means_split(&class_scores) {
            for (&p, &s) in positions.iter().zip(&class_scores) {
                flags[p] = s < t;
            }
        }
    }
    Ok(FilterVerdict::from_flags(input.labeled, &flags, Some(&scores)))
}
