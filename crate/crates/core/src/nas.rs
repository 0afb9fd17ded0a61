//! Noise-aware active sampling: alternate small selections, annotation and
//! noise filtering so the strategy only treats the clean part of L as labeled.
//! With the ProbCover strategy this is NPC (or Weighted NPC).

use std::io::Write;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datapool::{EmbeddingPool, LabelState};
use crate::error::{Error, Result};
use crate::filters::{FilterInput, FilterSpec, FilterVerdict};
use crate::noise::Annotator;
use crate::rng;
use crate::strategies::{Selector, StrategyRequest, StrategySpec};

/// Loop knobs shared by every NAS instantiation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NasOptions {
    /// Samples per round; `None` means C, or 1 for the ideal filter.
    pub inner_batch: Option<usize>,
    /// `None` means on for LowBudgetAUM, off otherwise.
    pub use_noise_dropout: Option<bool>,
    /// Weighted NPC: balls of noisy samples keep incoming weight 1 − q̂.
    pub weighted: bool,
    /// Plain-strategy rounds run until |L| reaches this size.
    pub warmup_budget: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NasConfig {
    pub strategy: StrategySpec,
    pub filter: FilterSpec,
    #[serde(flatten)]
    pub options: NasOptions,
}

impl NasConfig {
    pub fn new(strategy: StrategySpec, filter: FilterSpec) -> Self {
        NasConfig {
            strategy,
            filter,
            options: NasOptions::default(),
        }
    }

    pub fn inner_batch(&self, class_count: usize) -> usize {
        self.options
            .inner_batch
            .unwrap_or(if self.filter.is_ideal() { 1 } else { class_count })
    }

    pub fn dropout(&self) -> bool {
        self.options
            .use_noise_dropout
            .unwrap_or_else(|| self.filter.default_dropout())
    }

    pub fn validate(&self, budget: usize) -> Result<()> {
        self.strategy.validate()?;
        self.filter.validate()?;
        if self.options.inner_batch == Some(0) {
            return Err(Error::config("nas.inner_batch", "must be >= 1"));
        }
        if budget > 0 && self.options.warmup_budget >= budget {
            return Err(Error::config("nas.warmup_budget", "must be smaller than the budget"));
        }
        Ok(())
    }
}

/// One round of the loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: usize,
    /// Predicted noise ratio before dropout; null when no filter ran.
    pub q_hat: Option<f64>,
    /// Dropout percentage; null when dropout did not run.
    pub eta: Option<f64>,
    pub n_clean: usize,
    pub n_noisy: usize,
    pub picks: Vec<usize>,
    pub delta: Option<f64>,
    pub events: Vec<String>,
}

/// Writes traces as JSON lines.
pub fn write_traces<W: Write>(traces: &[RoundTrace], mut out: W) -> Result<()> {
    for t in traces {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DropoutOutcome {
    /// Verdict after moving samples; its ratio is recomputed.
    pub verdict: FilterVerdict,
    pub q_hat_before: f64,
    pub eta: f64,
    pub moved: usize,
}

/// `η = 100·max(min(q̂, 1 − q̂), 0.1)` with `q̂ = noisy / total`.
pub fn eta_percent(noisy: usize, total: usize) -> f64 {
    if total == 0 {
        return 10.0;
    }
    10.0 * eta_numerator(noisy, total) as f64 / total as f64
}

// 10·max(min(n, t − n), t / 10), kept integral so η·|noisy| rounds exactly.
fn eta_numerator(noisy: usize, total: usize) -> usize {
    (10 * noisy.min(total - noisy)).max(total)
}

/// Number of noisy samples dropout moves: `round(η% · noisy)`, half up.
pub fn dropout_count(noisy: usize, total: usize) -> usize {
    if total == 0 || noisy == 0 {
        return 0;
    }
    let m = eta_numerator(noisy, total);
    // round(m·noisy / (10·total))
    (2 * m * noisy + 10 * total) / (20 * total)
}

/// Moves a uniformly random `round(η%·|noisy|)` subset of the noisy samples
/// to the clean side.
pub fn noise_dropout(verdict: &FilterVerdict, seed: u64) -> DropoutOutcome {
    let total = verdict.labeled_len();
    let noisy = verdict.noisy.len();
    let q_hat_before = verdict.predicted_noise_ratio;
    let eta = eta_percent(noisy, total);
    let moved = dropout_count(noisy, total);
    let mut out = verdict.clone();
    if moved > 0 {
        let mut order: Vec<usize> = (0..noisy).collect();
        order.shuffle(&mut rng::stream(seed, rng::DROPOUT));
        let mut take = vec![false; noisy];
        for &p in &order[..moved] {
            take[p] = true;
        }
        out.noisy = verdict
            .noisy
            .iter()
            .zip(&take)
            .filter(|(_, &t)| !t)
            .map(|(&i, _)| i)
            .collect();
        out.clean
            .extend(verdict.noisy.iter().zip(&take).filter(|(_, &t)| t).map(|(&i, _)| i));
        out.update_ratio();
    }
    DropoutOutcome {
        verdict: out,
        q_hat_before,
        eta,
        moved,
    }
}

/// `T_S + ceil(B / b) · T_A`.
pub fn complexity_estimate(inner_batch: usize, budget: usize, strategy_time: f64, filter_time: f64) -> f64 {
    assert!(inner_batch >= 1, "inner batch must be >= 1");
    strategy_time + budget.div_ceil(inner_batch) as f64 * filter_time
}

/// Result of a selection run.
#[derive(Debug, Clone)]
pub struct NasOutcome {
    pub traces: Vec<RoundTrace>,
    /// Filter verdict on the final labeled set (the last filter call), used
    /// for training. `None` for plain runs.
    pub final_verdict: Option<FilterVerdict>,
    pub filter_calls: usize,
    pub strategy_time: Duration,
    pub filter_time: Duration,
}

fn filter_seed(seed: u64, round: usize) -> u64 {
    rng::derive(rng::derive(seed, rng::FILTER), round as u64)
}

fn run_filter(
    filter: &FilterSpec,
    pool: &EmbeddingPool,
    state: &LabelState,
    annotator: &Annotator,
    seed: u64,
    events: &mut Vec<String>,
) -> FilterVerdict {
    let labeled = state.labeled();
    let observed = state.labeled_observations();
    let unlabeled = state.unlabeled_vec();
    let input = FilterInput {
        pool,
        labeled,
        observed: &observed,
        unlabeled: &unlabeled,
        corruption_mask: Some(annotator.corruption_mask()),
        seed,
    };
    match filter.apply(&input) {
        Ok(v) => v,
        Err(e) => {
            events.push(format!("filter failed ({e}); treating all of L as clean"));
            FilterVerdict::all_clean(labeled)
        }
    }
}

/// Runs NAS until the label state's budget is spent.
pub fn run_nas(
    pool: &EmbeddingPool,
    annotator: &Annotator,
    state: &mut LabelState,
    config: &NasConfig,
    seed: u64,
) -> Result<NasOutcome> {
    config.validate(state.budget())?;
    if annotator.len() != pool.len() {
        return Err(Error::Alignment(format!(
            "annotator covers {} samples, pool has {}",
            annotator.len(),
            pool.len()
        )));
    }
    let b = config.inner_batch(pool.class_count());
    let dropout = config.dropout();
    let mut selector = Selector::new(pool, config.strategy.clone(), seed)?;
    let mut traces = Vec::new();
    let mut filter_calls = 0;
    let mut strategy_time = Duration::ZERO;
    let mut filter_time = Duration::ZERO;
    let mut round = state.query_log().iter().map(|&(r, _)| r + 1).max().unwrap_or(0);

    while state.remaining_budget() > 0 {
        let labeled = state.labeled().to_vec();
        let unlabeled = state.unlabeled_vec();
        if unlabeled.is_empty() {
            break;
        }
        let batch = b.min(state.remaining_budget()).min(unlabeled.len());
        let mut events = Vec::new();
        let (clean, noisy, q_hat, eta, weight) = if labeled.is_empty() || labeled.len() < config.options.warmup_budget {
            (labeled, Vec::new(), None, None, 1.0)
        } else {
            let t = Instant::now();
            let verdict = run_filter(
                &config.filter,
                pool,
                state,
                annotator,
                filter_seed(seed, round),
                &mut events,
            );
            filter_time += t.elapsed();
            filter_calls += 1;
            let q_before = verdict.predicted_noise_ratio;
            let (verdict, eta) = if dropout {
                let d = noise_dropout(&verdict, rng::derive(seed, round as u64));
                (d.verdict, Some(d.eta))
            } else {
                (verdict, None)
            };
            let weight = if config.options.weighted {
                1.0 - verdict.predicted_noise_ratio
            } else {
                1.0
            };
            (verdict.clean, verdict.noisy, Some(q_before), eta, weight)
        };

        let request = StrategyRequest {
            labeled_clean: &clean,
            labeled_noisy: &noisy,
            noisy_weight: weight,
            unlabeled: &unlabeled,
            batch,
        };
        let t = Instant::now();
        let sel = selector.select(&request)?;
        strategy_time += t.elapsed();
        events.extend(sel.events);
        let annotations = annotator.annotate(&sel.chosen)?;
        state.record(round, &annotations)?;
        traces.push(RoundTrace {
            round,
            q_hat,
            eta,
            n_clean: clean.len(),
            n_noisy: noisy.len(),
            picks: sel.chosen,
            delta: selector.delta(),
            events,
        });
        round += 1;
    }

    let final_verdict = if state.labeled().is_empty() {
        None
    } else {
        let mut events = Vec::new();
        let t = Instant::now();
        let v = run_filter(
            &config.filter,
            pool,
            state,
            annotator,
            filter_seed(seed, round),
            &mut events,
        );
        filter_time += t.elapsed();
        filter_calls += 1;
        if let Some(last) = traces.last_mut() {
            last.events.extend(events);
        }
        Some(v)
    };
    Ok(NasOutcome {
        traces,
        final_verdict,
        filter_calls,
        strategy_time,
        filter_time,
    })
}

/// Spends the remaining budget with one call of the plain strategy.
pub fn run_plain(
    pool: &EmbeddingPool,
    annotator: &Annotator,
    state: &mut LabelState,
    strategy: &StrategySpec,
    seed: u64,
) -> Result<NasOutcome> {
    let mut selector = Selector::new(pool, strategy.clone(), seed)?;
    let labeled = state.labeled().to_vec();
    let unlabeled = state.unlabeled_vec();
    let batch = state.remaining_budget().min(unlabeled.len());
    let mut traces = Vec::new();
    let t = Instant::now();
    if batch > 0 {
        let sel = selector.select(&StrategyRequest::new(&labeled, &unlabeled, batch))?;
        let round = state.query_log().iter().map(|&(r, _)| r + 1).max().unwrap_or(0);
        let annotations = annotator.annotate(&sel.chosen)?;
        state.record(round, &annotations)?;
        traces.push(RoundTrace {
            round,
            q_hat: None,
            eta: None,
            n_clean: labeled.len(),
            n_noisy: 0,
            picks: sel.chosen,
            delta: selector.delta(),
            events: sel.events,
        });
    }
    Ok(NasOutcome {
        traces,
        final_verdict: None,
        filter_calls: 0,
        strategy_time: t.elapsed(),
        filter_time: Duration::ZERO,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eta_examples() {
        assert_eq!(eta_percent(5, 10), 50.0);
        assert_eq!(eta_percent(19, 20), 10.0);
        assert_eq!(eta_percent(1, 20), 10.0);
        assert_eq!(eta_percent(3, 10), 30.0);
        assert_eq!(eta_percent(0, 10), 10.0);
    }

    #[test]
    fn dropout_counts() {
        // q̂ = 0.5 on 10: η = 50%, 5 noisy -> round(2.5) = 3
        assert_eq!(dropout_count(5, 10), 3);
        // q̂ = 0.3 on 10: η = 30%, round(0.9) = 1
        assert_eq!(dropout_count(3, 10), 1);
        // q̂ = 0.95 on 20: η = 10%, round(1.9) = 2
        assert_eq!(dropout_count(19, 20), 2);
        assert_eq!(dropout_count(0, 10), 0);
        for t in 1..60usize {
            for n in 0..=t {
                let exact = eta_percent(n, t) / 100.0 * n as f64;
                let want = (exact + 0.5 + 1e-9).floor() as usize;
                assert_eq!(dropout_count(n, t), want, "n={n} t={t}");
            }
        }
    }

    #[test]
    fn dropout_moves_subset() {
        let labeled: Vec<usize> = (0..20).collect();
        let flags: Vec<bool> = (0..20).map(|i| i % 2 == 0).collect();
        let v = FilterVerdict::from_flags(&labeled, &flags, None);
        let d = noise_dropout(&v, 7);
        assert_eq!(d.eta, 50.0);
        assert_eq!(d.moved, 5);
        assert_eq!(d.verdict.noisy.len(), 5);
        assert!(d.verdict.is_partition_of(&labeled));
        assert!(d.verdict.noisy.iter().all(|i| v.noisy.contains(i)));
        assert_eq!(d.q_hat_before, 0.5);
        assert_eq!(d.verdict.predicted_noise_ratio, 0.25);

        let empty = FilterVerdict::all_clean(&labeled);
        assert_eq!(noise_dropout(&empty, 1).verdict, empty);
    }

    #[test]
    fn complexity_examples() {
        assert_eq!(complexity_estimate(400, 400, 2.0, 3.0), 5.0);
        assert_eq!(complexity_estimate(1, 40, 2.0, 3.0), 122.0);
        assert_eq!(complexity_estimate(100, 400, 1.0, 1.0), 5.0);
        assert_eq!(complexity_estimate(7, 20, 0.0, 1.0), 3.0);
    }
}
