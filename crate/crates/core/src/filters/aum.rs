use ndarray::{Array2, Axis};
use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use super::{default_filter_probe, FilterInput, FilterVerdict};
use crate::error::{Error, Result};
use crate::probe::{train_linear_probe_with, LinearProbeConfig};
use crate::rng;

const MIN_FAKE: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AumParams {
    pub probe: LinearProbeConfig,
    /// Percentile of fake-class scores used as the clean threshold.
    pub percentile: f64,
    /// Fake-class size; `None` means `max(5, C, round(|L| / (C + 1)))`.
    pub fake_count: Option<usize>,
}

impl Default for AumParams {
    fn default() -> Self {
        AumParams {
            probe: default_filter_probe(),
            percentile: 80.0,
            fake_count: None,
        }
    }
}

impl AumParams {
    pub fn validate(&self) -> Result<()> {
        self.probe.validate()?;
        if !(0.0..=100.0).contains(&self.percentile) {
            return Err(Error::config("filter.percentile", "must be in [0, 100]"));
        }
        Ok(())
    }
}

/// Per-sample AUM scores for the real labeled samples and the fake class.
#[derive(Debug, Clone, PartialEq)]
pub struct AumScores {
    /// Aligned with the input's labeled order.
    pub real: Vec<f64>,
    pub fake: Vec<f64>,
    pub fake_indices: Vec<usize>,
}

/// Trains the (C+1)-way probe and averages each sample's margin over epochs.
pub fn aum_scores(input: &FilterInput<'_>, params: &AumParams) -> Result<AumScores> {
    params.validate()?;
    let c = input.class_count();
    let n = input.labeled.len();
    let wanted = params
        .fake_count
        .unwrap_or_else(|| MIN_FAKE.max(c).max(((n as f64) / (c as f64 + 1.0)).round() as usize));
    let fake_count = wanted.min(input.unlabeled.len());
    if fake_count < MIN_FAKE {
        return Err(Error::invalid(format!(
            "AUM needs at least {MIN_FAKE} fake-class samples, got {fake_count}"
        )));
    }
    let mut rng = rng::stream(input.seed, rng::FILTER);
    let fake_indices: Vec<usize> = input.unlabeled.choose_multiple(&mut rng, fake_count).copied().collect();

    let all: Vec<usize> = input.labeled.iter().chain(&fake_indices).copied().collect();
    let x = input.pool.gather(&all);
    let y: Vec<usize> = input
        .observed
        .iter()
        .copied()
        .chain(std::iter::repeat_n(c, fake_count))
        .collect();

    let mut sums = vec![0.0; all.len()];
    let mut epochs = 0usize;
    let cfg = params.probe.with_seed(rng::derive(input.seed, rng::FILTER));
    train_linear_probe_with(x.view(), &y, c + 1, &cfg, |_, probe| {
        accumulate_margins(&probe.logits_batch(x.view()), &y, &mut sums);
        epochs += 1;
    })?;
    let scores: Vec<f64> = sums.iter().map(|s| s / epochs as f64).collect();
    Ok(AumScores {
        real: scores[..n].to_vec(),
        fake: scores[n..].to_vec(),
        fake_indices,
    })
}

fn accumulate_margins(logits: &Array2<f64>, y: &[usize], sums: &mut [f64]) {
    for ((row, &label), s) in logits.axis_iter(Axis(0)).zip(y).zip(sums.iter_mut()) {
        let assigned = row[label];
        let other = row
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != label)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        *s += assigned - other;
    }
}

/// Linear-interpolated percentile (`p` in [0, 100]) of a non-empty slice.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of an empty slice");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = (p / 100.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Real samples scoring above the fake-class percentile are clean.
pub fn lowbudget_aum(input: &FilterInput<'_>, params: &AumParams) -> Result<FilterVerdict> {
    if input.labeled.is_empty() {
        return Ok(FilterVerdict::all_clean(input.labeled));
    }
    let scores = aum_scores(input, params)?;
    let threshold = percentile(&scores.fake, params.percentile);
    let flags: Vec<bool> = scores.real.iter().map(|&s| s <= threshold).collect();
    Ok(FilterVerdict::from_flags(input.labeled, &flags, Some(&scores.real)))
}

/// Marks the `round(rate·|L|)` lowest-scoring samples noisy.
pub fn aum_known_rate(input: &FilterInput<'_>, rate: f64, params: &AumParams) -> Result<FilterVerdict> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::invalid(format!("known noise rate {rate} outside [0, 1]")));
    }
    let n = input.labeled.len();
    let k = (rate * n as f64 + 0.5).floor() as usize;
    if n == 0 || k == 0 {
        return Ok(FilterVerdict::all_clean(input.labeled));
    }
    let scores = aum_scores(input, params)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores.real[a].total_cmp(&scores.real[b]).then(a.cmp(&b)));
    let mut flags = vec![false; n];
    for &p in &order[..k.min(n)] {
        flags[p] = true;
    }
    Ok(FilterVerdict::from_flags(input.labeled, &flags, Some(&scores.real)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapool::{generate_synthetic, SyntheticSpec};

    fn pool(seed: u64) -> crate::datapool::EmbeddingPool {
        generate_synthetic(&SyntheticSpec {
            class_count: 5,
            points_per_class: 60,
            dimension: 16,
            cluster_spread: 0.15,
            center_spread: 1.0,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile(&[3.0, 1.0, 2.0, 4.0, 5.0], 50.0), 3.0);
        assert!((percentile(&[0.0, 10.0], 80.0) - 8.0).abs() < 1e-12);
        assert_eq!(percentile(&[7.0], 80.0), 7.0);
    }

    #[test]
    fn clean_labels_give_low_noise_estimate() {
        for seed in 0..3 {
            let p = pool(seed);
            let labeled: Vec<usize> = (0..50).collect();
            let observed: Vec<usize> = labeled.iter().map(|&i| p.true_labels()[i]).collect();
            let unlabeled: Vec<usize> = (50..p.len()).collect();
            let input = FilterInput {
                pool: &p,
                labeled: &labeled,
                observed: &observed,
                unlabeled: &unlabeled,
                corruption_mask: None,
                seed,
            };
            // 30% of |L| injected as the fake class.
            let params = AumParams {
                fake_count: Some(15),
                ..AumParams::default()
            };
            let v = lowbudget_aum(&input, &params).unwrap();
            assert!(v.is_partition_of(&labeled));
            assert!(v.predicted_noise_ratio <= 0.15, "q_hat {}", v.predicted_noise_ratio);
        }
    }

    #[test]
    fn permuted_labels_give_high_noise_estimate() {
        use rand::seq::SliceRandom;
        let p = pool(0);
        let labeled: Vec<usize> = (0..100).collect();
        let mut observed: Vec<usize> = labeled.iter().map(|&i| p.true_labels()[i]).collect();
        observed.shuffle(&mut rng::stream(9, 0));
        let unlabeled: Vec<usize> = (100..p.len()).collect();
        let input = FilterInput {
            pool: &p,
            labeled: &labeled,
            observed: &observed,
            unlabeled: &unlabeled,
            corruption_mask: None,
            seed: 4,
        };
        let params = AumParams {
            fake_count: Some(30),
            ..AumParams::default()
        };
        let v = lowbudget_aum(&input, &params).unwrap();
        assert!(v.predicted_noise_ratio >= 0.7, "q_hat {}", v.predicted_noise_ratio);
        for f in aum_scores(&input, &params).unwrap().fake_indices {
            assert!(!v.clean.contains(&f) && !v.noisy.contains(&f));
        }
    }

    #[test]
    fn known_rate_counts() {
        let p = pool(1);
        let labeled: Vec<usize> = (0..100).collect();
        let observed: Vec<usize> = labeled.iter().map(|&i| p.true_labels()[i]).collect();
        let unlabeled: Vec<usize> = (100..p.len()).collect();
        let input = FilterInput {
            pool: &p,
            labeled: &labeled,
            observed: &observed,
            unlabeled: &unlabeled,
            corruption_mask: None,
            seed: 1,
        };
        let params = AumParams::default();
        assert_eq!(aum_known_rate(&input, 0.38, &params).unwrap().noisy.len(), 38);
        assert!(aum_known_rate(&input, 0.0, &params).unwrap().noisy.is_empty());
        assert_eq!(aum_known_rate(&input, 1.0, &params).unwrap().noisy.len(), 100);
        assert!(aum_known_rate(&input, 1.5, &params).is_err());
    }

    #[test]
    fn too_few_fake_samples_is_an_error() {
        let p = pool(2);
        let labeled: Vec<usize> = (0..10).collect();
        let observed: Vec<usize> = labeled.iter().map(|&i| p.true_labels()[i]).collect();
        let input = FilterInput {
            pool: &p,
            labeled: &labeled,
            observed: &observed,
            unlabeled: &[20, 21, 22],
            corruption_mask: None,
            seed: 0,
        };
        assert!(lowbudget_aum(&input, &AumParams::default()).is_err());
    }
}
