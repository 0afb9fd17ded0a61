//! Simulated noisy annotator.
//!
//! Noisy labels are fixed when the annotator is built, so repeated queries of
//! the same sample always return the same (possibly wrong) label.

use std::path::Path;

use ndarray::Axis;
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::datapool::{write_labels, EmbeddingPool};
use crate::error::{Error, Result};
use crate::probe::{train_linear_probe, LinearProbeConfig};
use crate::rng;

/// Neighbors inspected when picking an anchor's dominant foreign class.
const ANCHOR_NEIGHBORHOOD: usize = 50;
const STOCHASTIC_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    None,
    Symmetric,
    Asymmetric,
    InstanceDependent,
}

impl NoiseKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            NoiseKind::None => "none",
            NoiseKind::Symmetric => "symmetric",
            NoiseKind::Asymmetric => "asymmetric",
            NoiseKind::InstanceDependent => "instance_dependent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    #[serde(default)]
    pub rate: f64,
    /// Row-stochastic C×C matrix, `T[i][j] = P(noisy = j | true = i)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition: Option<Vec<Vec<f64>>>,
    /// Fraction of the anchors that seed noise clusters (instance-dependent).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_fraction: Option<f64>,
    /// Number of confusion anchors; defaults to C.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchors: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        NoiseSpec {
            kind: NoiseKind::None,
            rate: 0.0,
            transition: None,
            cluster_fraction: None,
            anchors: None,
            seed: 0,
        }
    }

    pub fn symmetric(rate: f64, seed: u64) -> Self {
        NoiseSpec {
            kind: NoiseKind::Symmetric,
            rate,
            seed,
            ..Self::none()
        }
    }

    pub fn asymmetric(transition: Vec<Vec<f64>>, seed: u64) -> Self {
        NoiseSpec {
            kind: NoiseKind::Asymmetric,
            transition: Some(transition),
            seed,
            ..Self::none()
        }
    }

    pub fn instance_dependent(rate: f64, seed: u64) -> Self {
        NoiseSpec {
            kind: NoiseKind::InstanceDependent,
            rate,
            seed,
            ..Self::none()
        }
    }

    pub fn validate(&self, class_count: usize) -> Result<()> {
        let rate_ok = (0.0..1.0).contains(&self.rate);
        match self.kind {
            NoiseKind::None => Ok(()),
            NoiseKind::Symmetric | NoiseKind::InstanceDependent => {
                if !rate_ok {
                    return Err(Error::config("noise.rate", "must be in [0, 1)"));
                }
                if let Some(f) = self.cluster_fraction {
                    if !(f > 0.0 && f <= 1.0) {
                        return Err(Error::config("noise.cluster_fraction", "must be in (0, 1]"));
                    }
                }
                if self.anchors == Some(0) {
                    return Err(Error::config("noise.anchors", "must be positive"));
                }
                Ok(())
            }
            NoiseKind::Asymmetric => {
                let t = self
                    .transition
                    .as_ref()
                    .ok_or_else(|| Error::config("noise.transition", "required for asymmetric noise"))?;
                check_stochastic(t, class_count)
            }
        }
    }
}

fn check_stochastic(t: &[Vec<f64>], class_count: usize) -> Result<()> {
    if t.len() != class_count || t.iter().any(|r| r.len() != class_count) {
        return Err(Error::config(
            "noise.transition",
            format!("must be {class_count}x{class_count}"),
        ));
    }
    for (i, row) in t.iter().enumerate() {
        if row.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::config(
                "noise.transition",
                format!("row {i} has a negative entry"),
            ));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > STOCHASTIC_TOLERANCE {
            return Err(Error::config("noise.transition", format!("row {i} sums to {s}, not 1")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotator {
    noisy_labels: Vec<usize>,
    corruption_mask: Vec<bool>,
}

impl Annotator {
    /// Wraps precomputed noisy labels (e.g. read from a file).
    pub fn from_labels(pool: &EmbeddingPool, noisy_labels: Vec<usize>) -> Result<Self> {
        if noisy_labels.len() != pool.len() {
            return Err(Error::Alignment(format!(
                "{} noisy labels for a pool of {}",
                noisy_labels.len(),
                pool.len()
            )));
        }
        if let Some(bad) = noisy_labels.iter().find(|&&l| l >= pool.class_count()) {
            return Err(Error::invalid(format!("noisy label {bad} out of range")));
        }
        let corruption_mask = noisy_labels
            .iter()
            .zip(pool.true_labels())
            .map(|(a, b)| a != b)
            .collect();
        Ok(Annotator {
            noisy_labels,
            corruption_mask,
        })
    }

    pub fn noisy_labels(&self) -> &[usize] {
        &self.noisy_labels
    }

    pub fn corruption_mask(&self) -> &[bool] {
        &self.corruption_mask
    }

    pub fn len(&self) -> usize {
        self.noisy_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.noisy_labels.is_empty()
    }

    pub fn realized_rate(&self) -> f64 {
        self.corruption_mask.iter().filter(|&&m| m).count() as f64 / self.len() as f64
    }

    /// Returns the observed label of every requested index, in request order.
    pub fn annotate(&self, indices: &[usize]) -> Result<Vec<(usize, usize)>> {
        indices
            .iter()
            .map(|&i| {
                self.noisy_labels.get(i).map(|&l| (i, l)).ok_or(Error::IndexOutOfRange {
                    index: i,
                    len: self.len(),
                })
            })
            .collect()
    }

    pub fn export_labels(&self, path: &Path) -> Result<()> {
        write_labels(path, &self.noisy_labels)
    }
}

/// Number of samples corrupted for a given rate: nearest integer, ties up.
pub fn corrupted_count(rate: f64, n: usize) -> usize {
    ((rate * n as f64 + 0.5).floor() as usize).min(n)
}

pub fn build_annotator(pool: &EmbeddingPool, spec: &NoiseSpec) -> Result<Annotator> {
    let c = pool.class_count();
    spec.validate(c)?;
    let truth = pool.true_labels();
    let mut noisy = truth.to_vec();
    let mut rng = rng::stream(spec.seed, rng::NOISE);
    match spec.kind {
        NoiseKind::None => {}
        NoiseKind::Symmetric => {
            let k = corrupted_count(spec.rate, pool.len());
            for i in index::sample(&mut rng, pool.len(), k) {
                // uniform over the other C-1 classes
                let r = rng.random_range(0..c - 1);
                noisy[i] = if r >= truth[i] { r + 1 } else { r };
            }
        }
        NoiseKind::Asymmetric => {
            let t = spec.transition.as_ref().expect("validated");
            let rows = t
                .iter()
                .map(|r| WeightedIndex::new(r).map_err(|e| Error::config("noise.transition", e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            for (i, y) in truth.iter().enumerate() {
                noisy[i] = rows[*y].sample(&mut rng);
            }
        }
        NoiseKind::InstanceDependent => {
            instance_dependent(pool, spec, &mut noisy, &mut rng);
        }
    }
    Annotator::from_labels(pool, noisy)
}

/// Corrupts the `round(qN)` samples closest to a set of seeded anchors, giving
/// spatially clustered noise.
fn instance_dependent(pool: &EmbeddingPool, spec: &NoiseSpec, noisy: &mut [usize], rng: &mut impl Rng) {
    let n = pool.len();
    let c = pool.class_count();
    let truth = pool.true_labels();
    let k = corrupted_count(spec.rate, n);
    if k == 0 {
        return;
    }
    let anchor_count = spec.anchors.unwrap_or(c).min(n);
    let active = ((spec.cluster_fraction.unwrap_or(1.0) * anchor_count as f64).round() as usize).clamp(1, anchor_count);
    let anchors: Vec<usize> = index::sample(rng, n, active).into_iter().collect();

    let foreign: Vec<usize> = anchors.iter().map(|&a| dominant_foreign_class(pool, a)).collect();

    // (distance to nearest anchor, index, anchor slot)
    let mut ranked: Vec<(f64, usize, usize)> = (0..n)
        .map(|i| {
            let (slot, d) = anchors
                .iter()
                .enumerate()
                .map(|(s, &a)| (s, pool.sq_distance(i, a)))
                .min_by(|x, y| x.1.total_cmp(&y.1))
                .expect("at least one anchor");
            (d, i, slot)
        })
        .collect();
    ranked.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    for &(_, i, slot) in ranked.iter().take(k) {
        let target = foreign[slot];
        noisy[i] = if target != truth[i] {
            target
        } else {
            truth[anchors[slot]]
        };
        if noisy[i] == truth[i] {
            // anchor and sample share the foreign class; any other class will do
            noisy[i] = (truth[i] + 1) % c;
        }
    }
}

fn dominant_foreign_class(pool: &EmbeddingPool, anchor: usize) -> usize {
    let c = pool.class_count();
    let truth = pool.true_labels();
    let own = truth[anchor];
    let mut order: Vec<usize> = (0..pool.len()).filter(|&j| j != anchor).collect();
    order.sort_by(|&a, &b| {
        pool.sq_distance(anchor, a)
            .total_cmp(&pool.sq_distance(anchor, b))
            .then(a.cmp(&b))
    });
    let mut counts = vec![0usize; c];
    for &j in order.iter().take(ANCHOR_NEIGHBORHOOD) {
        if truth[j] != own {
            counts[truth[j]] += 1;
        }
    }
    let best = (0..c)
        .filter(|&k| k != own)
        .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
        .expect("C >= 2");
    if counts[best] > 0 {
        return best;
    }
    // no foreign class nearby: use the class of the nearest foreign sample
    order
        .iter()
        .map(|&j| truth[j])
        .find(|&l| l != own)
        .unwrap_or((own + 1) % c)
}

/// Transition matrix derived from the confusions of a weak linear probe.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionReport {
    pub matrix: Vec<Vec<f64>>,
    /// Mixing weight applied to the confusion matrix.
    pub alpha: f64,
    /// Rows whose confusion had no usable mass and were replaced by a
    /// uniform off-diagonal row.
    pub fallback_rows: Vec<usize>,
    pub events: Vec<String>,
}

/// Trains a deliberately weak probe on half of each class, tabulates its
/// confusions on the other half and mixes the row-normalized confusion matrix
/// with the identity so the expected off-diagonal mass equals `target_rate`.
pub fn confusion_transition(
    pool: &EmbeddingPool,
    probe_epochs: usize,
    target_rate: f64,
    seed: u64,
) -> Result<TransitionReport> {
    if !(0.0..1.0).contains(&target_rate) {
        return Err(Error::invalid("target rate must be in [0, 1)"));
    }
    let c = pool.class_count();
    let truth = pool.true_labels();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, &y) in truth.iter().enumerate() {
        by_class[y].push(i);
    }
    if let Some(k) = by_class.iter().position(|v| v.len() < 2) {
        return Err(Error::invalid(format!("class {k} has fewer than 2 samples")));
    }
    let mut rng = rng::stream(seed, rng::NOISE);
    let (mut train, mut held) = (Vec::new(), Vec::new());
    for members in &mut by_class {
        members.shuffle(&mut rng);
        let half = members.len() / 2;
        train.extend_from_slice(&members[..half]);
        held.extend_from_slice(&members[half..]);
    }
    let cfg = LinearProbeConfig {
        epochs: probe_epochs.max(1),
        seed,
        ..LinearProbeConfig::default()
    };
    let x_train = pool.gather(&train);
    let y_train: Vec<usize> = train.iter().map(|&i| truth[i]).collect();
    let probe = train_linear_probe(x_train.view(), &y_train, c, &cfg)?;
    let preds = probe.predict_batch(pool.gather(&held).view());

    let mut confusion = vec![vec![0.0f64; c]; c];
    for (&i, &p) in held.iter().zip(&preds) {
        confusion[truth[i]][p] += 1.0;
    }
    let mut events = Vec::new();
    let mut fallback_rows = Vec::new();
    // off-diagonal part of each row, normalized to a distribution
    let mut off = vec![vec![0.0f64; c]; c];
    let mut off_mass = vec![0.0f64; c];
    for i in 0..c {
        let total: f64 = confusion[i].iter().sum();
        let off_total = total - confusion[i][i];
        if total == 0.0 || off_total == 0.0 {
            if total == 0.0 {
                fallback_rows.push(i);
                events.push(format!("class {i}: no predicted mass, uniform off-diagonal fallback"));
            }
            for (j, v) in off[i].iter_mut().enumerate() {
                if j != i {
                    *v = 1.0 / (c - 1) as f64;
                }
            }
        } else {
            for j in 0..c {
                if j != i {
                    off[i][j] = confusion[i][j] / off_total;
                }
            }
        }
        off_mass[i] = if total == 0.0 { 1.0 } else { off_total / total };
    }

    let weights: Vec<f64> = by_class.iter().map(|m| m.len() as f64 / pool.len() as f64).collect();
    let expected_off: f64 = weights.iter().zip(&off_mass).map(|(w, m)| w * m).sum();
    let mut matrix = vec![vec![0.0f64; c]; c];
    let alpha;
    if target_rate == 0.0 {
        alpha = 0.0;
        for (i, row) in matrix.iter_mut().enumerate() {
            row[i] = 1.0;
        }
    } else if expected_off > 0.0 && target_rate / expected_off <= 1.0 {
        // T = (1 - a) I + a T_conf
        alpha = target_rate / expected_off;
        for i in 0..c {
            for j in 0..c {
                let conf_ij = if i == j {
                    1.0 - off_mass[i]
                } else {
                    off_mass[i] * off[i][j]
                };
                matrix[i][j] = alpha * conf_ij + if i == j { 1.0 - alpha } else { 0.0 };
            }
        }
    } else {
        // probe too accurate to reach the target by mixing; spread exactly
        // `target_rate` per row along the confusion directions instead
        alpha = 1.0;
        events.push(format!(
            "confusion off-diagonal mass {expected_off:.4} below target {target_rate}; using off-diagonal profile"
        ));
        for i in 0..c {
            for j in 0..c {
                matrix[i][j] = if i == j {
                    1.0 - target_rate
                } else {
                    target_rate * off[i][j]
                };
            }
        }
    }
    // exact row normalization against accumulated rounding
    for row in &mut matrix {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    Ok(TransitionReport {
        matrix,
        alpha,
        fallback_rows,
        events,
    })
}

/// Leave-one-out k-NN accuracy of predicting the corruption mask from
/// features; used to check whether noise is spatially clustered.
pub fn mask_knn_accuracy(pool: &EmbeddingPool, mask: &[bool], k: usize) -> f64 {
    let n = pool.len();
    let feats = pool.features();
    let mut hits = 0usize;
    for i in 0..n {
        let row = feats.index_axis(Axis(0), i);
        let mut d: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (crate::datapool::sq_dist(row, feats.row(j)), j))
            .collect();
        let k = k.min(d.len());
        d.select_nth_unstable_by(k.saturating_sub(1), |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let noisy_votes = d[..k].iter().filter(|(_, j)| mask[*j]).count();
        let pred = 2 * noisy_votes > k;
        if pred == mask[i] {
            hits += 1;
        }
    }
    hits as f64 / n as f64
}
