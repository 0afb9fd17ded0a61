mod common;

use nas_core::covergraph::coverage;
use nas_core::datapool::init_label_state;
use nas_core::nas::{run_nas, run_plain, NasConfig, NasOptions};
use nas_core::noise::build_annotator;
use nas_core::strategies::ProbCoverParams;
use nas_core::{FilterSpec, NoiseSpec, StrategySpec};

fn probcover(delta: f64) -> StrategySpec {
    StrategySpec::ProbCover(ProbCoverParams {
        delta,
        ..ProbCoverParams::default()
    })
}

#[test]
fn ideal_filter_without_noise_reduces_to_plain_probcover() {
    for seed in 0..4 {
        let pool = common::synthetic(6, 50, 8, 0.3, seed);
        let ann = build_annotator(&pool, &NoiseSpec::none()).unwrap();
        let mut plain = init_label_state(&pool, 60).unwrap();
        run_plain(&pool, &ann, &mut plain, &probcover(0.3), seed).unwrap();
        let mut nas = init_label_state(&pool, 60).unwrap();
        let out = run_nas(
            &pool,
            &ann,
            &mut nas,
            &NasConfig::new(probcover(0.3), FilterSpec::Ideal),
            seed,
        )
        .unwrap();
        assert_eq!(plain.labeled(), nas.labeled(), "seed {seed}");
        assert_eq!(out.traces.len(), 60, "ideal filter defaults to one pick per round");
    }
}

#[test]
fn filter_calls_follow_the_inner_batch() {
    let pool = common::synthetic(5, 40, 8, 0.3, 2);
    let ann = build_annotator(&pool, &NoiseSpec::symmetric(0.3, 2)).unwrap();
    let budget = 37;
    for b in [1, 5, 10, budget] {
        let mut cfg = NasConfig::new(probcover(0.3), FilterSpec::Knn);
        cfg.options.inner_batch = Some(b);
        let mut state = init_label_state(&pool, budget).unwrap();
        let out = run_nas(&pool, &ann, &mut state, &cfg, 0).unwrap();
        assert_eq!(out.filter_calls, budget.div_ceil(b), "b = {b}");
        assert!(out.final_verdict.unwrap().is_partition_of(state.labeled()));
    }
}

#[test]
fn warmup_skips_filtering_until_reached() {
    let pool = common::synthetic(5, 40, 8, 0.3, 4);
    let ann = build_annotator(&pool, &NoiseSpec::symmetric(0.3, 4)).unwrap();
    let cfg = NasConfig {
        strategy: probcover(0.3),
        filter: FilterSpec::Knn,
        options: NasOptions {
            inner_batch: Some(5),
            warmup_budget: 20,
            ..NasOptions::default()
        },
    };
    let mut state = init_label_state(&pool, 40).unwrap();
    let out = run_nas(&pool, &ann, &mut state, &cfg, 0).unwrap();
    let filtered: Vec<bool> = out.traces.iter().map(|t| t.q_hat.is_some()).collect();
    assert_eq!(filtered, [false, false, false, false, true, true, true, true]);
    assert_eq!(out.filter_calls, 5);
}

#[test]
fn npc_with_ideal_filter_covers_more_clean_ground() {
    let pool = common::synthetic(10, 100, 16, 0.3, 8);
    let ann = build_annotator(&pool, &NoiseSpec::symmetric(0.5, 8)).unwrap();
    let clean =
        |labeled: &[usize]| -> Vec<usize> { labeled.iter().copied().filter(|&i| !ann.corruption_mask()[i]).collect() };
    let mut plain = init_label_state(&pool, 100).unwrap();
    run_plain(&pool, &ann, &mut plain, &probcover(0.28), 8).unwrap();
    let mut npc = init_label_state(&pool, 100).unwrap();
    run_nas(
        &pool,
        &ann,
        &mut npc,
        &NasConfig::new(probcover(0.28), FilterSpec::Ideal),
        8,
    )
    .unwrap();
    let a = coverage(&pool, 0.28, &clean(plain.labeled())).coverage_fraction;
    let b = coverage(&pool, 0.28, &clean(npc.labeled())).coverage_fraction;
    assert!(b > a, "npc {b} vs probcover {a}");
}

#[test]
fn weighted_npc_spends_the_budget() {
    let pool = common::synthetic(5, 60, 8, 0.3, 6);
    let ann = build_annotator(&pool, &NoiseSpec::instance_dependent(0.3, 6)).unwrap();
    let mut cfg = NasConfig::new(probcover(0.3), FilterSpec::lowbudget_aum());
    cfg.options.weighted = true;
    let mut state = init_label_state(&pool, 50).unwrap();
    let out = run_nas(&pool, &ann, &mut state, &cfg, 3).unwrap();
    assert_eq!(state.labeled().len(), 50);
    assert!(out.traces.iter().skip(1).all(|t| t.q_hat.is_some() && t.eta.is_some()));
}
