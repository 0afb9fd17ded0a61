//! Random operation sequences on `CoverGraph` checked against a dense
//! weight-matrix model.

mod common;

use common::{apply, Model, Op};
use nas_core::{CoverGraph, EmbeddingPool};
use ndarray::Array2;
use proptest::prelude::*;

fn op(n: usize) -> impl Strategy<Value = Op> {
    let idx = move || prop::collection::vec(0..n, 0..6);
    prop_oneof![
        idx().prop_map(Op::ZeroIncoming),
        idx().prop_map(Op::ZeroOutgoing),
        (idx(), 0.0..=1.0f64).prop_map(|(t, w)| Op::SetIncoming(t, w)),
        Just(Op::Reset),
        (idx(), idx(), 0.0..=1.0f64).prop_map(|(c, z, w)| Op::Refresh(c, z, w)),
    ]
}

fn case() -> impl Strategy<Value = (usize, usize, Vec<f64>, f64, Vec<Op>)> {
    (2usize..=100, 1usize..=4).prop_flat_map(|(n, d)| {
        (
            Just(n),
            Just(d),
            prop::collection::vec(-1.0..1.0f64, n * d),
            0.05..1.5f64,
            prop::collection::vec(op(n), 1..24),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn odr_cache_matches_brute_force((n, d, feats, delta, ops) in case()) {
        let pool = EmbeddingPool::new(
            Array2::from_shape_vec((n, d), feats).unwrap(),
            (0..n).map(|i| i % 2).collect(),
            2,
            true,
        ).unwrap();
        let mut g = CoverGraph::build(&pool, delta).unwrap();
        let mut m = Model::new(&pool, delta);

        for x in 0..n {
            let ball: Vec<usize> = g.ball(x).collect();
            let want: Vec<usize> = (0..n).filter(|&y| m.adj[x][y]).collect();
            prop_assert_eq!(ball, want);
        }
        for op in &ops {
            apply(&mut g, op);
            m.apply(op);
            for x in 0..n {
                let brute: f64 = m.w.row(x).sum();
                prop_assert!((g.odr(x) - brute).abs() <= 1e-9,
                    "odr[{}] = {} but brute force gives {} after {:?}", x, g.odr(x), brute, op);
            }
        }
        for (s, t, w) in g.edges() {
            prop_assert!(m.adj[s][t]);
            prop_assert!((w - m.w[(s, t)]).abs() <= 1e-12);
        }
    }
}
