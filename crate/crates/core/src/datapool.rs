//! Embedding pool, labeled/unlabeled bookkeeping, synthetic data and the ALNE
//! file format.
//!
//! All rows are L2-normalized when a pool is generated or loaded, and every
//! distance in the crate is the Euclidean distance between normalized rows
//! (see [`EmbeddingPool::distance`]).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

const ALNE_MAGIC: &[u8; 4] = b"ALNE";
const ALNE_VERSION: u32 = 1;
const ALNE_HEADER_LEN: usize = 24;
const NORM_TOLERANCE: f64 = 1e-6;

/// N×D feature matrix plus the ground-truth labels of every row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPool {
    features: Array2<f64>,
    true_labels: Vec<usize>,
    class_count: usize,
    normalized: bool,
}

impl EmbeddingPool {
    /// Builds a pool, optionally L2-normalizing every row.
    pub fn new(features: Array2<f64>, true_labels: Vec<usize>, class_count: usize, normalize: bool) -> Result<Self> {
        let (n, d) = features.dim();
        if n == 0 || d == 0 {
            return Err(Error::invalid(format!("pool must be non-empty, got {n}x{d}")));
        }
        if class_count < 2 {
            return Err(Error::invalid(format!("class_count must be >= 2, got {class_count}")));
        }
        if true_labels.len() != n {
            return Err(Error::Alignment(format!(
                "{} feature rows but {} labels",
                n,
                true_labels.len()
            )));
        }
        if let Some(bad) = true_labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::invalid(format!("label {bad} >= class_count {class_count}")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("features contain NaN or infinite values"));
        }
        let mut pool = EmbeddingPool {
            features,
            true_labels,
            class_count,
            normalized: false,
        };
        if normalize {
            pool.normalize_rows()?;
        }
        Ok(pool)
    }

    fn normalize_rows(&mut self) -> Result<()> {
        for (i, mut row) in self.features.axis_iter_mut(Axis(0)).enumerate() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::invalid(format!(
                    "row {i} has zero norm and cannot be normalized"
                )));
            }
            row.mapv_inplace(|v| v / norm);
        }
        self.normalized = true;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    /// Ground truth. Only the annotator, the ideal filter and metric code
    /// should read this.
    pub fn true_labels(&self) -> &[usize] {
        &self.true_labels
    }

    pub fn check_index(&self, i: usize) -> Result<()> {
        if i < self.len() {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                index: i,
                len: self.len(),
            })
        }
    }

    /// Squared Euclidean distance between rows `i` and `j`.
    ///
    /// Summation order is fixed, so `sq_distance(i, j) == sq_distance(j, i)`
    /// bit for bit.
    #[inline]
    pub fn sq_distance(&self, i: usize, j: usize) -> f64 {
        sq_dist(self.features.row(i), self.features.row(j))
    }

    #[inline]
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.sq_distance(i, j).sqrt()
    }

    /// Gathers the given rows into a dense matrix.
    pub fn gather(&self, indices: &[usize]) -> Array2<f64> {
        self.features.select(Axis(0), indices)
    }

    /// Checks the unit-norm invariant.
    pub fn rows_unit_norm(&self) -> bool {
        self.features
            .axis_iter(Axis(0))
            .all(|r| (r.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() <= NORM_TOLERANCE)
    }
}

#[inline]
pub(crate) fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// Parameters of the Gaussian-mixture generator used in place of real SSL
/// embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub class_count: usize,
    pub points_per_class: usize,
    pub dimension: usize,
    /// Per-class isotropic standard deviation.
    pub cluster_spread: f64,
    /// Scale of the random class centers.
    pub center_spread: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::config("class_count", "must be >= 2"));
        }
        if self.points_per_class == 0 {
            return Err(Error::config("points_per_class", "must be positive"));
        }
        if self.dimension == 0 {
            return Err(Error::config("dimension", "must be positive"));
        }
        if !(self.cluster_spread > 0.0 && self.cluster_spread.is_finite()) {
            return Err(Error::config("cluster_spread", "must be positive"));
        }
        if !(self.center_spread > 0.0 && self.center_spread.is_finite()) {
            return Err(Error::config("center_spread", "must be positive"));
        }
        Ok(())
    }

    pub fn pool_size(&self) -> usize {
        self.class_count * self.points_per_class
    }
}

fn class_centers(spec: &SyntheticSpec) -> Vec<Vec<f64>> {
    let normal = Normal::new(0.0, spec.center_spread).expect("validated spread");
    let mut rng = rng::stream(spec.seed, rng::SYNTH_CENTERS);
    (0..spec.class_count)
        .map(|_| (0..spec.dimension).map(|_| normal.sample(&mut rng)).collect())
        .collect()
}

fn sample_mixture(spec: &SyntheticSpec, centers: &[Vec<f64>], per_class: usize, stream: u64) -> Result<EmbeddingPool> {
    let n = spec.class_count * per_class;
    let normal = Normal::new(0.0, spec.cluster_spread).expect("validated spread");
    let mut rng = rng::stream(spec.seed, stream);
    let mut labels: Vec<usize> = (0..spec.class_count)
        .flat_map(|c| std::iter::repeat_n(c, per_class))
        .collect();
    labels.shuffle(&mut rng);
    let mut features = Array2::<f64>::zeros((n, spec.dimension));
    for (i, &c) in labels.iter().enumerate() {
        for (k, v) in features.row_mut(i).iter_mut().enumerate() {
            *v = centers[c][k] + normal.sample(&mut rng);
        }
    }
    EmbeddingPool::new(features, labels, spec.class_count, true)
}

/// Generates `C × points_per_class` normalized rows from a seeded Gaussian mixture.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<EmbeddingPool> {
    spec.validate()?;
    let centers = class_centers(spec);
    sample_mixture(spec, &centers, spec.points_per_class, rng::SYNTH_TRAIN)
}

/// Generates the training pool plus an independent test pool drawn from the
/// same mixture (same class centers), `test_fraction` of the training size.
pub fn generate_synthetic_split(spec: &SyntheticSpec, test_fraction: f64) -> Result<(EmbeddingPool, EmbeddingPool)> {
    spec.validate()?;
    if !(test_fraction > 0.0 && test_fraction.is_finite()) {
        return Err(Error::invalid("test_fraction must be positive"));
    }
    let centers = class_centers(spec);
    let train = sample_mixture(spec, &centers, spec.points_per_class, rng::SYNTH_TRAIN)?;
    let test_ppc = ((spec.points_per_class as f64 * test_fraction).round() as usize).max(1);
    let test = sample_mixture(spec, &centers, test_ppc, rng::SYNTH_TEST)?;
    Ok((train, test))
}

/// Writes features in the ALNE binary layout (f32 little-endian, row-major).
pub fn save_embeddings(pool: &EmbeddingPool, path: &Path) -> Result<()> {
    write_alne(pool.features(), path)
}

pub fn write_alne(features: ArrayView2<'_, f64>, path: &Path) -> Result<()> {
    let (n, d) = features.dim();
    let mut buf = Vec::with_capacity(ALNE_HEADER_LEN + n * d * 4);
    buf.extend_from_slice(ALNE_MAGIC);
    buf.extend_from_slice(&ALNE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    buf.extend_from_slice(&(d as u64).to_le_bytes());
    for v in features.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses an ALNE buffer into an N×D matrix.
pub fn parse_alne(bytes: &[u8]) -> Result<Array2<f64>> {
    let fmt = |offset: usize, message: &str| Error::Format {
        offset: offset as u64,
        message: message.to_string(),
    };
    if bytes.len() < 4 || &bytes[..4] != ALNE_MAGIC {
        return Err(fmt(0, "bad magic bytes, expected \"ALNE\""));
    }
    if bytes.len() < ALNE_HEADER_LEN {
        return Err(fmt(bytes.len(), "truncated header"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != ALNE_VERSION {
        return Err(fmt(4, &format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let d = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    if n == 0 {
        return Err(fmt(8, "N must be positive"));
    }
    if d == 0 {
        return Err(fmt(16, "D must be positive"));
    }
    let expected = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| fmt(8, "N*D overflows"))?;
    let body = &bytes[ALNE_HEADER_LEN..];
    if body.len() as u64 != expected {
        return Err(fmt(
            ALNE_HEADER_LEN + body.len().min(expected as usize),
            &format!("expected {expected} payload bytes, found {}", body.len()),
        ));
    }
    let data: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(Array2::from_shape_vec((n as usize, d as usize), data).expect("shape checked"))
}

/// Reads one decimal class index per line.
pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    parse_labels(&text)
}

pub fn parse_labels(text: &str) -> Result<Vec<usize>> {
    let mut labels = Vec::new();
    let mut offset = 0usize;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if !trimmed.is_empty() {
            let v = trimmed.parse::<usize>().map_err(|_| Error::Format {
                offset: offset as u64,
                message: format!("invalid label {trimmed:?}"),
            })?;
            labels.push(v);
        }
        offset += line.len();
    }
    Ok(labels)
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut out = Vec::with_capacity(labels.len() * 3);
    for l in labels {
        writeln!(out, "{l}")?;
    }
    fs::write(path, out).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads an ALNE feature file and its label file. Rows are L2-normalized.
///
/// The class count is inferred as `max(label) + 1` (at least 2) unless given.
pub fn load_embeddings(path: &Path, labels_path: &Path, class_count: Option<usize>) -> Result<EmbeddingPool> {
    let bytes = fs::read(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    let features = parse_alne(&bytes)?;
    let labels = read_labels(labels_path)?;
    if labels.len() != features.nrows() {
        return Err(Error::Alignment(format!(
            "{} has {} rows but {} has {} labels",
            path.display(),
            features.nrows(),
            labels_path.display(),
            labels.len()
        )));
    }
    let inferred = labels.iter().max().map_or(2, |m| (m + 1).max(2));
    let c = class_count.unwrap_or(inferred);
    EmbeddingPool::new(features, labels, c, true)
}

/// Partition of the pool into unlabeled and labeled samples, with the labels
/// the annotator returned.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelState {
    unlabeled: BTreeSet<usize>,
    labeled: Vec<usize>,
    observed: BTreeMap<usize, usize>,
    query_log: Vec<(usize, usize)>,
    budget: usize,
    pool_size: usize,
}

impl LabelState {
    pub fn unlabeled(&self) -> &BTreeSet<usize> {
        &self.unlabeled
    }

    pub fn unlabeled_vec(&self) -> Vec<usize> {
        self.unlabeled.iter().copied().collect()
    }

    /// Labeled indices in annotation order.
    pub fn labeled(&self) -> &[usize] {
        &self.labeled
    }

    pub fn observed(&self, i: usize) -> Option<usize> {
        self.observed.get(&i).copied()
    }

    pub fn observed_labels(&self) -> &BTreeMap<usize, usize> {
        &self.observed
    }

    /// Observed labels aligned with [`LabelState::labeled`].
    pub fn labeled_observations(&self) -> Vec<usize> {
        self.labeled.iter().map(|i| self.observed[i]).collect()
    }

    pub fn query_log(&self) -> &[(usize, usize)] {
        &self.query_log
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn remaining_budget(&self) -> usize {
        self.budget - self.labeled.len()
    }

    pub fn pool_size(&self) -> usize {
        self.pool_size
    }

    /// Moves annotated samples from U to L.
    pub fn record(&mut self, round: usize, annotations: &[(usize, usize)]) -> Result<()> {
        if self.labeled.len() + annotations.len() > self.budget {
            return Err(Error::BudgetExceeded {
                requested: self.labeled.len() + annotations.len(),
                budget: self.budget,
            });
        }
        let mut seen = BTreeSet::new();
        for &(i, _) in annotations {
            if i >= self.pool_size {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: self.pool_size,
                });
            }
            if !self.unlabeled.contains(&i) || !seen.insert(i) {
                return Err(Error::invalid(format!("index {i} is not unlabeled")));
            }
        }
        for &(i, label) in annotations {
            self.unlabeled.remove(&i);
            self.labeled.push(i);
            self.observed.insert(i, label);
            self.query_log.push((round, i));
        }
        Ok(())
    }
}

/// Fresh state: everything unlabeled, empty L.
pub fn init_label_state(pool: &EmbeddingPool, budget: usize) -> Result<LabelState> {
    if budget == 0 || budget > pool.len() {
        return Err(Error::invalid(format!(
            "budget must be in 1..={}, got {budget}",
            pool.len()
        )));
    }
    Ok(LabelState {
        unlabeled: (0..pool.len()).collect(),
        labeled: Vec::new(),
        observed: BTreeMap::new(),
        query_log: Vec::new(),
        budget,
        pool_size: pool.len(),
    })
}

/// Budget reaching `expected_spc` clean samples per class in expectation:
/// `round(spc × C / (1 − q))`, ties rounded up.
pub fn budget_for_spc(expected_spc: usize, class_count: usize, noise_rate: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&noise_rate) {
        return Err(Error::invalid(format!(
            "noise rate must be in [0, 1), got {noise_rate}"
        )));
    }
    if expected_spc == 0 || class_count == 0 {
        return Err(Error::invalid("expected_spc and class_count must be positive"));
    }
    let raw = expected_spc as f64 * class_count as f64 / (1.0 - noise_rate);
    Ok((raw + 0.5).floor() as usize)
}
