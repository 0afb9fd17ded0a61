//! Low-budget noise filters. Each filter splits the labeled set into a clean
//! and a noisy part from features and observed labels alone; only the ideal
//! filter looks at the simulator's corruption mask.

mod aum;
mod ensemble;
mod geometric;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::datapool::EmbeddingPool;
use crate::error::{Error, Result};
use crate::probe::LinearProbeConfig;

pub use aum::{aum_known_rate, aum_scores, lowbudget_aum, percentile, AumParams, AumScores};
pub use ensemble::{cross_validation, disagreenet, CrossValidationParams, DisagreeNetParams};
pub use geometric::{centroids_ransac, fine, knn, knn_k, two_means_split, CentroidParams};

/// Everything a filter may look at.
#[derive(Debug, Clone, Copy)]
pub struct FilterInput<'a> {
    pub pool: &'a EmbeddingPool,
    pub labeled: &'a [usize],
    /// Observed labels aligned with `labeled`.
    pub observed: &'a [usize],
    /// Donor pool for the AUM fake class.
    pub unlabeled: &'a [usize],
    /// Simulation ground truth; only the ideal filter reads it.
    pub corruption_mask: Option<&'a [bool]>,
    pub seed: u64,
}

impl FilterInput<'_> {
    pub fn class_count(&self) -> usize {
        self.pool.class_count()
    }

    fn check(&self) -> Result<()> {
        if self.labeled.len() != self.observed.len() {
            return Err(Error::Alignment(format!(
                "{} labeled indices but {} observed labels",
                self.labeled.len(),
                self.observed.len()
            )));
        }
        for &i in self.labeled {
            self.pool.check_index(i)?;
        }
        if let Some(bad) = self.observed.iter().find(|&&l| l >= self.class_count()) {
            return Err(Error::invalid(format!("observed label {bad} out of range")));
        }
        Ok(())
    }
}

/// Clean/noisy partition of the labeled set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub clean: Vec<usize>,
    pub noisy: Vec<usize>,
    /// `|noisy| / |L|` (0 for an empty L).
    pub predicted_noise_ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_sample_score: Option<BTreeMap<usize, f64>>,
}

impl FilterVerdict {
    /// Builds a verdict from per-sample noisy flags aligned with `labeled`.
    pub fn from_flags(labeled: &[usize], noisy_flags: &[bool], scores: Option<&[f64]>) -> Self {
        debug_assert_eq!(labeled.len(), noisy_flags.len());
        let mut clean = Vec::new();
        let mut noisy = Vec::new();
        for (&i, &f) in labeled.iter().zip(noisy_flags) {
            if f {
                noisy.push(i);
            } else {
                clean.push(i);
            }
        }
        let per_sample_score = scores.map(|s| labeled.iter().copied().zip(s.iter().copied()).collect());
        let mut v = FilterVerdict {
            clean,
            noisy,
            predicted_noise_ratio: 0.0,
            per_sample_score,
        };
        v.update_ratio();
        v
    }

    pub fn all_clean(labeled: &[usize]) -> Self {
        Self::from_flags(labeled, &vec![false; labeled.len()], None)
    }

    pub fn labeled_len(&self) -> usize {
        self.clean.len() + self.noisy.len()
    }

    pub(crate) fn update_ratio(&mut self) {
        let total = self.labeled_len();
        self.predicted_noise_ratio = if total == 0 {
            0.0
        } else {
            self.noisy.len() as f64 / total as f64
        };
    }

    /// True when clean and noisy are disjoint and together equal `labeled`.
    pub fn is_partition_of(&self, labeled: &[usize]) -> bool {
        let mut all: Vec<usize> = self.clean.iter().chain(&self.noisy).copied().collect();
        all.sort_unstable();
        let mut want = labeled.to_vec();
        want.sort_unstable();
        all == want
    }

    /// One line per labeled index: `index observed_label clean|noisy score`.
    pub fn write_text<W: Write>(&self, observed: &BTreeMap<usize, usize>, mut out: W) -> Result<()> {
        let mut rows: Vec<(usize, bool)> = self
            .clean
            .iter()
            .map(|&i| (i, false))
            .chain(self.noisy.iter().map(|&i| (i, true)))
            .collect();
        rows.sort_unstable();
        for (i, noisy) in rows {
            let label = observed
                .get(&i)
                .ok_or_else(|| Error::invalid(format!("no observed label for {i}")))?;
            let score = self
                .per_sample_score
                .as_ref()
                .and_then(|s| s.get(&i))
                .map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"));
            let tag = if noisy { "noisy" } else { "clean" };
            writeln!(out, "{i} {label} {tag} {score}")?;
        }
        Ok(())
    }
}

/// A filter and its parameters, as named in configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum FilterSpec {
    /// Everything clean.
    None,
    /// Perfect detection from the simulator's corruption mask.
    Ideal,
    CrossValidation(CrossValidationParams),
    LowbudgetAum(AumParams),
    AumKnownRate {
        rate: f64,
        #[serde(default)]
        params: AumParams,
    },
    Knn,
    Centroids(CentroidParams),
    Disagreenet(DisagreeNetParams),
    Fine,
}

impl FilterSpec {
    pub fn lowbudget_aum() -> Self {
        FilterSpec::LowbudgetAum(AumParams::default())
    }

    pub fn name(&self) -> &'static str {
        match self {
            FilterSpec::None => "none",
            FilterSpec::Ideal => "ideal",
            FilterSpec::CrossValidation(_) => "cross_validation",
            FilterSpec::LowbudgetAum(_) => "lowbudget_aum",
            FilterSpec::AumKnownRate { .. } => "aum_known_rate",
            FilterSpec::Knn => "knn",
            FilterSpec::Centroids(_) => "centroids",
            FilterSpec::Disagreenet(_) => "disagreenet",
            FilterSpec::Fine => "fine",
        }
    }

    /// Noise dropout is on by default only for LowBudgetAUM.
    pub fn default_dropout(&self) -> bool {
        matches!(self, FilterSpec::LowbudgetAum(_))
    }

    pub fn is_ideal(&self) -> bool {
        matches!(self, FilterSpec::Ideal)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FilterSpec::CrossValidation(p) => p.validate(),
            FilterSpec::LowbudgetAum(p) => p.validate(),
            FilterSpec::AumKnownRate { rate, params } => {
                if !(0.0..=1.0).contains(rate) {
                    return Err(Error::config("filter.rate", "must be in [0, 1]"));
                }
                params.validate()
            }
            FilterSpec::Centroids(p) => p.validate(),
            FilterSpec::Disagreenet(p) => p.validate(),
            FilterSpec::None | FilterSpec::Ideal | FilterSpec::Knn | FilterSpec::Fine => Ok(()),
        }
    }

    pub fn apply(&self, input: &FilterInput<'_>) -> Result<FilterVerdict> {
        input.check()?;
        match self {
            FilterSpec::None => Ok(FilterVerdict::all_clean(input.labeled)),
            FilterSpec::Ideal => ideal(input),
            FilterSpec::CrossValidation(p) => cross_validation(input, p),
            FilterSpec::LowbudgetAum(p) => lowbudget_aum(input, p),
            FilterSpec::AumKnownRate { rate, params } => aum_known_rate(input, *rate, params),
            FilterSpec::Knn => knn(input),
            FilterSpec::Centroids(p) => centroids_ransac(input, p),
            FilterSpec::Disagreenet(p) => disagreenet(input, p),
            FilterSpec::Fine => fine(input),
        }
    }
}

/// Marks exactly the corrupted samples as noisy.
pub fn ideal(input: &FilterInput<'_>) -> Result<FilterVerdict> {
    let mask = input
        .corruption_mask
        .ok_or_else(|| Error::invalid("the ideal filter needs the corruption mask"))?;
    let flags: Vec<bool> = input
        .labeled
        .iter()
        .map(|&i| {
            mask.get(i).copied().ok_or(Error::IndexOutOfRange {
                index: i,
                len: mask.len(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(FilterVerdict::from_flags(input.labeled, &flags, None))
}

pub(crate) fn default_filter_probe() -> LinearProbeConfig {
    LinearProbeConfig::filtering()
}
