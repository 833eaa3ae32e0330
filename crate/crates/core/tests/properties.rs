use std::sync::Arc;

use proptest::prelude::*;
use rwde::environment::{sample_environment, RngStream};
use rwde::graphs::{self, WeightedDigraph};
use rwde::kappa::{self, kappa0_search, SearchOptions, Strategy as SearchStrategy};
use rwde::solver;
use rwde::walk::{self, StatsQuery};
use rwde::DirichletParams;

/// Weight vectors on `[-L, R]` with `L, R <= 3`, both endpoints present and
/// every other offset kept with probability 1/2.
fn small_params() -> impl Strategy<Value = DirichletParams> {
    (1i64..=3, 1i64..=3)
        .prop_flat_map(|(l, r)| {
            let n = (l + r + 1) as usize;
            (
                Just((l, r)),
                prop::collection::vec(0.05f64..2.0, n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
        .prop_filter_map("gcd or m0 too large", |((l, r), w, keep)| {
            let weights = (-l..=r)
                .zip(w.into_iter().zip(keep))
                .filter(|&(i, (_, k))| k || i == -l || i == r)
                .map(|(i, (x, _))| (i, x));
            let p = DirichletParams::new(l, r, weights).ok()?;
            (p.derive().m0 <= 10).then_some(p)
        })
}

fn search(p: &DirichletParams, d: i64, strategy: SearchStrategy) -> kappa::Kappa0Result {
    kappa0_search(p, d, SearchOptions::with_strategy(strategy)).unwrap()
}

fn closure_connected(g: &WeightedDigraph, set: &[i64]) -> bool {
    let idx: Vec<usize> = set.iter().map(|&x| g.index_of(x).unwrap()).collect();
    let n = idx.len();
    let mut reach = vec![vec![false; n]; n];
    for (a, &u) in idx.iter().enumerate() {
        for (b, &v) in idx.iter().enumerate() {
            reach[a][b] = g.find_edge(u, v).is_some();
        }
    }
    for k in 0..n {
        for a in 0..n {
            for b in 0..n {
                reach[a][b] |= reach[a][k] && reach[k][b];
            }
        }
    }
    (0..n).all(|a| (0..n).all(|b| reach[a][b]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn strategies_agree(p in small_params()) {
        let d = 10;
        let a = search(&p, d, SearchStrategy::Exhaustive);
        let b = search(&p, d, SearchStrategy::BranchAndBound);
        prop_assert_eq!(a.value, b.value);
        prop_assert_eq!(a.witness.offsets, b.witness.offsets);
    }

    #[test]
    fn kappa0_within_bounds(p in small_params()) {
        let d = p.derive();
        let k = search(&p, 10, SearchStrategy::BranchAndBound).value;
        prop_assert!(k >= d.c_plus + d.c_minus - 1e-12);
        prop_assert!(k <= d.d_plus + d.d_minus + 1e-12);
    }

    #[test]
    fn reflection_and_scaling(p in small_params(), c in 0.1f64..10.0) {
        let k = search(&p, 10, SearchStrategy::BranchAndBound).value;
        let reflected = search(&p.reflect(), 10, SearchStrategy::BranchAndBound).value;
        prop_assert!((k - reflected).abs() <= 1e-12 * k.max(1.0));
        let scaled = DirichletParams::new(p.left(), p.right(), p.weights().into_iter().map(|(i, w)| (i, c * w))).unwrap();
        let ks = search(&scaled, 10, SearchStrategy::BranchAndBound).value;
        prop_assert!((ks - c * k).abs() <= 1e-9 * ks.max(1.0));
    }

    #[test]
    fn adding_a_vertex_on_the_right_never_lowers_beta(
        p in small_params(),
        set in prop::collection::btree_set(0i64..12, 1..8),
        extra in 1i64..6,
    ) {
        let s: Vec<i64> = set.into_iter().collect();
        let mut t = s.clone();
        t.push(s.last().unwrap() + extra);
        let a = kappa::beta(&p, &s).unwrap().beta;
        let b = kappa::beta(&p, &t).unwrap().beta;
        prop_assert!(b >= a - 1e-12);
    }

    #[test]
    fn strong_connectivity_matches_closure(
        p in small_params(),
        set in prop::collection::btree_set(0i64..10, 1..7),
    ) {
        let g = graphs::build_window(&p, -4, 14);
        let s: Vec<i64> = set.into_iter().collect();
        prop_assert_eq!(graphs::strongly_connected(&g, &s), closure_connected(&g, &s));
    }

    #[test]
    fn walk_statistics_inequalities(
        p in small_params(),
        seed in 0u64..1000,
        x in -3i64..3,
        gap in 1i64..4,
    ) {
        let t = walk::simulate_lattice(&p, 400, seed, 0);
        let (l, r) = (p.left(), p.right());
        prop_assert!(t.positions.windows(2).all(|w| (-l..=r).contains(&(w[1] - w[0]))));
        let y = x + gap;
        let s = walk::trajectory_stats(&t, &StatsQuery {
            sites: vec![x],
            pairs: vec![(x, y)],
            ..StatsQuery::default()
        });
        prop_assert!(s.trips[0].count <= s.visits[&x]);
        prop_assert!(s.trips[0].count <= s.crossings[0].count);
    }

    #[test]
    fn online_regenerations_match_brute_force(
        steps in prop::collection::vec(-2i64..=3, 1..60),
        buffer in 0usize..5,
    ) {
        let mut xs = vec![0i64];
        for d in steps {
            xs.push(xs.last().unwrap() + d);
        }
        let last = xs.len() - 1;
        let expected: Vec<u64> = (1..=last)
            .filter(|&n| n + buffer <= last)
            .filter(|&n| xs[..n].iter().all(|&a| a < xs[n]) && xs[n + 1..].iter().all(|&a| a >= xs[n]))
            .map(|n| n as u64)
            .collect();
        let traj = walk::Trajectory {
            start: 0,
            positions: xs,
            stop_reason: walk::StopReason::Horizon,
            seed: 0,
            stream: 0,
        };
        prop_assert_eq!(walk::regeneration_times(&traj, buffer), expected);
    }
}

#[test]
fn trap_weights_golden() {
    let golden: serde_json::Value =
        serde_json::from_str(include_str!("golden/trap_weights.json")).unwrap();
    let p: DirichletParams = golden["alphas"].as_str().unwrap().parse().unwrap();
    let d = p.derive();
    assert_eq!(p.left(), golden["L"].as_i64().unwrap());
    assert_eq!(p.right(), golden["R"].as_i64().unwrap());
    assert_eq!(d.m0 as u64, golden["m0"].as_u64().unwrap());
    for (key, value) in [
        ("d_plus", d.d_plus),
        ("d_minus", d.d_minus),
        ("c_plus", d.c_plus),
        ("c_minus", d.c_minus),
        ("kappa1", d.kappa1),
    ] {
        assert!(
            (golden[key].as_f64().unwrap() - value).abs() < 1e-9,
            "{key}"
        );
    }
    let k = search(&p, 40, SearchStrategy::BranchAndBound);
    assert!((k.value - golden["kappa0"].as_f64().unwrap()).abs() < 1e-9);
    let witness: Vec<i64> = serde_json::from_value(golden["witness"].clone()).unwrap();
    assert_eq!(k.witness.offsets, witness);
}

#[test]
fn complementary_hitting_problems_sum_to_one() {
    let p = DirichletParams::new(2, 3, [(-2, 0.5), (-1, 1.0), (1, 0.7), (3, 0.4)]).unwrap();
    let g = Arc::new(graphs::build_window(&p, 0, 20));
    for i in 0..20 {
        let env = sample_environment(&g, &RngStream::new(9, i)).unwrap();
        let a = [0usize, 1];
        let b = [19usize, 20];
        let h1 = solver::hitting_values(&env, &a, &b).unwrap();
        let h2 = solver::hitting_values(&env, &b, &a).unwrap();
        assert!(h1.iter().zip(&h2).all(|(x, y)| (x + y - 1.0).abs() < 1e-10));
    }
}

#[test]
fn double_time_reversal_is_identity() {
    let p = DirichletParams::nearest_neighbor(1.0, 2.0).unwrap();
    let g = Arc::new(graphs::build_gm(&p, 7).unwrap());
    for i in 0..20 {
        let env = sample_environment(&g, &RngStream::new(4, i)).unwrap();
        let back = solver::time_reverse(&solver::time_reverse(&env).unwrap()).unwrap();
        for (t, h, _) in g.edges() {
            assert!((env.transition(t, h) - back.transition(t, h)).abs() < 1e-10);
        }
    }
}

#[test]
fn escape_brackets_tighten_with_window() {
    let p = DirichletParams::nearest_neighbor(1.0, 2.0).unwrap();
    // the same environment on a longer window: rows of shared sites agree
    // because sites are sampled in order from one stream
    let mut widths = Vec::new();
    for w in [16, 32, 64, 128] {
        let g = Arc::new(graphs::build_gplus(&p, w).unwrap());
        let env = sample_environment(&g, &RngStream::new(2, 0)).unwrap();
        let b = solver::escape_probability_bracket(&p, &env).unwrap();
        assert!(b.lower <= b.upper);
        widths.push(b.width());
    }
    assert!(widths.last().unwrap() <= &widths[0]);
}
