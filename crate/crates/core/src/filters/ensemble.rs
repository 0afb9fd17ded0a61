use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{FilterInput, FilterVerdict};
use crate::error::{Error, Result};
use crate::probe::{train_linear_probe, train_linear_probe_with, LinearProbeConfig};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossValidationParams {
    pub folds: usize,
    /// Independent fold partitions; each contributes one held-out vote per sample.
    pub repeats: usize,
    pub probe: LinearProbeConfig,
}

impl Default for CrossValidationParams {
    fn default() -> Self {
        CrossValidationParams {
            folds: 3,
            repeats: 1,
            probe: LinearProbeConfig {
                epochs: 200,
                ..LinearProbeConfig::default()
            },
        }
    }
}

impl CrossValidationParams {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::config("filter.folds", "must be >= 2"));
        }
        if self.repeats == 0 {
            return Err(Error::config("filter.repeats", "must be >= 1"));
        }
        self.probe.validate()
    }
}

/// Stratified fold assignment: members of each observed class are shuffled
/// and dealt round-robin, continuing the deal across classes.
fn assign_folds(observed: &[usize], classes: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng::stream(seed, rng::FILTER);
    let mut by_class = vec![Vec::new(); classes];
    for (p, &l) in observed.iter().enumerate() {
        by_class[l].push(p);
    }
    let mut fold_of = vec![0; observed.len()];
    let mut next = 0;
    for members in &mut by_class {
        members.shuffle(&mut rng);
        for &p in members.iter() {
            fold_of[p] = next % folds;
            next += 1;
        }
    }
    fold_of
}

/// A sample is noisy iff fewer than half of its held-out predictions agree
/// with its observed label.
pub fn cross_validation(input: &FilterInput<'_>, params: &CrossValidationParams) -> Result<FilterVerdict> {
    params.validate()?;
    let n = input.labeled.len();
    if n < params.folds {
        return Err(Error::invalid(format!(
            "cross-validation needs |L| >= folds ({n} < {})",
            params.folds
        )));
    }
    let c = input.class_count();
    let x = input.pool.gather(input.labeled);
    let mut agree = vec![0usize; n];
    for r in 0..params.repeats {
        let rseed = rng::derive(input.seed, r as u64);
        let fold_of = assign_folds(input.observed, c, params.folds, rseed);
        for f in 0..params.folds {
            let train: Vec<usize> = (0..n).filter(|&p| fold_of[p] != f).collect();
            let held: Vec<usize> = (0..n).filter(|&p| fold_of[p] == f).collect();
            if held.is_empty() || train.is_empty() {
                continue;
            }
            let mut seen = vec![false; c];
            for &p in &train {
                seen[input.observed[p]] = true;
            }
            let xt = x.select(ndarray::Axis(0), &train);
            let yt: Vec<usize> = train.iter().map(|&p| input.observed[p]).collect();
            let cfg = params.probe.with_seed(rng::derive(rseed, f as u64 + 1));
            let probe = train_linear_probe(xt.view(), &yt, c, &cfg)?;
            for &p in &held {
                let label = input.observed[p];
                if seen[label] && probe.predict(x.row(p)) == label {
                    agree[p] += 1;
                }
            }
        }
    }
    let flags: Vec<bool> = agree.iter().map(|&a| 2 * a < params.repeats).collect();
    let scores: Vec<f64> = agree.iter().map(|&a| a as f64 / params.repeats as f64).collect();
    Ok(FilterVerdict::from_flags(input.labeled, &flags, Some(&scores)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisagreeNetParams {
    pub ensemble_size: usize,
    pub checkpoints: Vec<usize>,
    pub probe: LinearProbeConfig,
}

impl Default for DisagreeNetParams {
    fn default() -> Self {
        DisagreeNetParams {
            ensemble_size: 5,
            checkpoints: vec![10, 20, 30, 40],
            probe: LinearProbeConfig::filtering(),
        }
    }
}

impl DisagreeNetParams {
    pub fn validate(&self) -> Result<()> {
        if self.ensemble_size < 2 {
            return Err(Error::config("filter.ensemble_size", "must be >= 2"));
        }
        if self.checkpoints.is_empty() || self.checkpoints.contains(&0) {
            return Err(Error::config(
                "filter.checkpoints",
                "must be non-empty epoch numbers >= 1",
            ));
        }
        self.probe.validate()
    }
}

/// Agreement between ensemble members at several checkpoints; noisy iff
/// fewer than half of the (member, checkpoint) predictions match.
pub fn disagreenet(input: &FilterInput<'_>, params: &DisagreeNetParams) -> Result<FilterVerdict> {
    params.validate()?;
    let n = input.labeled.len();
    if n == 0 {
        return Ok(FilterVerdict::all_clean(input.labeled));
    }
    let c = input.class_count();
    let x = input.pool.gather(input.labeled);
    let last = *params.checkpoints.iter().max().expect("validated non-empty");
    let mut agree = vec![0usize; n];
    let mut votes = 0usize;
    for m in 0..params.ensemble_size {
        let cfg = LinearProbeConfig {
            epochs: params.probe.epochs.max(last),
            seed: rng::derive(input.seed, m as u64),
            ..params.probe.clone()
        };
        train_linear_probe_with(x.view(), input.observed, c, &cfg, |epoch, probe| {
            if params.checkpoints.contains(&epoch) {
                votes += 1;
                for (p, pred) in probe.predict_batch(x.view()).into_iter().enumerate() {
                    if pred == input.observed[p] {
                        agree[p] += 1;
                    }
                }
            }
        })?;
    }
    let scores: Vec<f64> = agree.iter().map(|&a| a as f64 / votes as f64).collect();
    let flags: Vec<bool> = scores.iter().map(|&s| s < 0.5).collect();
    Ok(FilterVerdict::from_flags(input.labeled, &flags, Some(&scores)))
}
