//! Linear-probe evaluation on the labeled set and the reported metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datapool::{EmbeddingPool, LabelState};
use crate::error::{Error, Result};
use crate::filters::{aum_scores, AumParams, FilterInput, FilterVerdict};
use crate::probe::{train_linear_probe, LinearProbeConfig};

/// Which labeled samples the evaluation probe trains on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrainPolicy {
    /// Only the samples the filter judged clean.
    FilterThenTrain,
    AllSamples,
    /// The `p·|L|` samples with the highest AUM; `p = 1 − q̂` when unset.
    TopPConfident {
        #[serde(default)]
        p: Option<f64>,
    },
}

impl TrainPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            TrainPolicy::FilterThenTrain => "filter_then_train",
            TrainPolicy::AllSamples => "all_samples",
            TrainPolicy::TopPConfident { .. } => "top_p_confident",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let TrainPolicy::TopPConfident { p: Some(p) } = self {
            if !(*p > 0.0 && *p <= 1.0) {
                return Err(Error::config("policy.p", "must be in (0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterMetrics {
    pub precision: f64,
    pub recall: f64,
    pub predicted_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub test_accuracy: f64,
    pub n_train_used: usize,
    /// Set when the training set was empty and the uniform-prior accuracy
    /// `1/C` is reported instead.
    pub empty_train: bool,
    pub filter: Option<FilterMetrics>,
    pub seed: u64,
}

/// Noisy is the positive class. Precision is 1 when nothing is predicted
/// noisy; recall is 1 when nothing is truly noisy.
pub fn filter_metrics(verdict: &FilterVerdict, corruption_mask: &[bool]) -> Result<FilterMetrics> {
    let truth = |i: usize| {
        corruption_mask.get(i).copied().ok_or(Error::IndexOutOfRange {
            index: i,
            len: corruption_mask.len(),
        })
    };
    let mut hits = 0usize;
    for &i in &verdict.noisy {
        if truth(i)? {
            hits += 1;
        }
    }
    let mut truly = hits;
    for &i in &verdict.clean {
        if truth(i)? {
            truly += 1;
        }
    }
    let precision = if verdict.noisy.is_empty() {
        1.0
    } else {
        hits as f64 / verdict.noisy.len() as f64
    };
    let recall = if truly == 0 { 1.0 } else { hits as f64 / truly as f64 };
    Ok(FilterMetrics {
        precision,
        recall,
        predicted_ratio: verdict.predicted_noise_ratio,
    })
}

/// Everything [`evaluate`] needs besides the data.
#[derive(Debug, Clone)]
pub struct EvalSetup<'a> {
    pub policy: &'a TrainPolicy,
    /// Verdict on the final labeled set; required by `filter_then_train` and
    /// by `top_p_confident` without an explicit `p`.
    pub verdict: Option<&'a FilterVerdict>,
    pub probe: &'a LinearProbeConfig,
    /// Used for filter metrics only.
    pub corruption_mask: Option<&'a [bool]>,
    pub seed: u64,
}

/// Trains the evaluation probe on the policy's subset of L (with observed
/// labels) and scores it on the test pool's true labels.
pub fn evaluate(
    pool: &EmbeddingPool,
    test: &EmbeddingPool,
    state: &LabelState,
    setup: &EvalSetup<'_>,
) -> Result<EvalResult> {
    setup.policy.validate()?;
    if test.dim() != pool.dim() {
        return Err(Error::Alignment(format!(
            "test dimension {} differs from pool dimension {}",
            test.dim(),
            pool.dim()
        )));
    }
    let labeled = state.labeled();
    let train: Vec<usize> = match setup.policy {
        TrainPolicy::AllSamples => labeled.to_vec(),
        TrainPolicy::FilterThenTrain => {
            let v = setup
                .verdict
                .ok_or_else(|| Error::invalid("filter_then_train needs a filter verdict"))?;
            v.clean.clone()
        }
        TrainPolicy::TopPConfident { p } => {
            let p = match (p, setup.verdict) {
                (Some(p), _) => *p,
                (None, Some(v)) => 1.0 - v.predicted_noise_ratio,
                (None, None) => return Err(Error::invalid("top_p_confident needs p or a filter verdict")),
            };
            top_p_confident(pool, state, p, setup.seed)?
        }
    };
    let filter = match (setup.verdict, setup.corruption_mask) {
        (Some(v), Some(mask)) => Some(filter_metrics(v, mask)?),
        _ => None,
    };
    let c = pool.class_count();
    if train.is_empty() {
        return Ok(EvalResult {
            test_accuracy: 1.0 / c as f64,
            n_train_used: 0,
            empty_train: true,
            filter,
            seed: setup.seed,
        });
    }
    let x = pool.gather(&train);
    let y: Vec<usize> = train
        .iter()
        .map(|&i| {
            state
                .observed(i)
                .ok_or_else(|| Error::invalid(format!("{i} is not labeled")))
        })
        .collect::<Result<_>>()?;
    let probe = train_linear_probe(x.view(), &y, c, &setup.probe.with_seed(setup.seed))?;
    let test_accuracy = probe.accuracy(test.features(), test.true_labels());
    Ok(EvalResult {
        test_accuracy,
        n_train_used: train.len(),
        empty_train: false,
        filter,
        seed: setup.seed,
    })
}

/// The `ceil(p·|L|)` labeled samples with the highest AUM scores.
pub fn top_p_confident(pool: &EmbeddingPool, state: &LabelState, p: f64, seed: u64) -> Result<Vec<usize>> {
    let labeled = state.labeled();
    let n = labeled.len();
    let keep = ((p * n as f64).ceil() as usize).min(n);
    if keep == n {
        return Ok(labeled.to_vec());
    }
    let observed = state.labeled_observations();
    let unlabeled = state.unlabeled_vec();
    let scores = aum_scores(
        &FilterInput {
            pool,
            labeled,
            observed: &observed,
            unlabeled: &unlabeled,
            corruption_mask: None,
            seed,
        },
        &AumParams::default(),
    )?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores.real[b].total_cmp(&scores.real[a]).then(a.cmp(&b)));
    Ok(order[..keep].iter().map(|&p| labeled[p]).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaSummary {
    pub per_seed: Vec<(u64, f64)>,
    pub mean: f64,
    /// Standard error of the mean (sample std / sqrt(n)); 0 for one seed.
    pub se: f64,
}

/// Paired per-seed accuracy differences against random selection.
pub fn accuracy_delta_vs_random(strategy: &BTreeMap<u64, f64>, random: &BTreeMap<u64, f64>) -> Result<DeltaSummary> {
    if strategy.keys().ne(random.keys()) {
        return Err(Error::invalid("strategy and random results cover different seeds"));
    }
    if strategy.is_empty() {
        return Err(Error::invalid("no seeds to compare"));
    }
    let per_seed: Vec<(u64, f64)> = strategy.iter().map(|(&s, &a)| (s, a - random[&s])).collect();
    let (mean, se) = mean_se(&per_seed.iter().map(|d| d.1).collect::<Vec<_>>());
    Ok(DeltaSummary { per_seed, mean, se })
}

/// Mean and standard error of the mean.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}
