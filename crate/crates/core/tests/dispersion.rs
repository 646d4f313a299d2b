#![allow(clippy::needless_range_loop)]

mod common;

use common::{brute_knn, brute_s_next};
use mars_core::dispersion::{build_index, precompute_s_next, NeighborIndex, DEFAULT_LEAF_SIZE};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_points(rng: &mut impl Rng, n: usize, dim: usize) -> Vec<f64> {
    (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn tree_matches_exhaustive_search_on_512_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let dim = 16;
    let pts = random_points(&mut rng, 512, dim);
    let idx = build_index(&pts, dim, DEFAULT_LEAF_SIZE).unwrap();
    assert!(idx.uses_tree());
    for i in 0..512 {
        assert_eq!(idx.query(i, 20).unwrap(), brute_knn(&pts, dim, i, 20), "point {i}");
    }
}

#[test]
fn hundred_random_queries_match() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let dim = 4;
    let pts = random_points(&mut rng, 300, dim);
    let idx = build_index(&pts, dim, 8).unwrap();
    for _ in 0..100 {
        let i = rng.random_range(0..300);
        let m = rng.random_range(1..60);
        assert_eq!(idx.query(i, m).unwrap(), brute_knn(&pts, dim, i, m));
    }
}

#[test]
fn all_neighbours_when_m_is_n_minus_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pts = random_points(&mut rng, 80, 3);
    let idx = build_index(&pts, 3, 4).unwrap();
    for i in [0, 17, 79] {
        let got = idx.query(i, 79).unwrap();
        assert_eq!(got.len(), 79);
        assert_eq!(got, brute_knn(&pts, 3, i, 79));
        assert_eq!(idx.query(i, 500).unwrap(), got);
    }
}

#[test]
fn duplicate_heavy_data_through_the_tree() {
    // 200 points drawn from only 5 distinct locations.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let anchors = random_points(&mut rng, 5, 6);
    let pts: Vec<f64> = (0..200)
        .flat_map(|_| {
            let a = rng.random_range(0..5);
            anchors[a * 6..(a + 1) * 6].to_vec()
        })
        .collect();
    let idx = build_index(&pts, 6, 16).unwrap();
    for i in 0..200 {
        let got = idx.query(i, 20).unwrap();
        assert_eq!(got, brute_knn(&pts, 6, i, 20), "point {i}");
        let p = idx.point(i);
        // exact duplicates are reported first
        let dups = (0..200).filter(|&j| j != i && idx.point(j) == p).count();
        for &j in got.iter().take(dups.min(20)) {
            assert_eq!(idx.point(j), p);
        }
    }
}

#[test]
fn s_next_matches_double_loop_on_bimodal_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (n, horizon, dim) = (64, 4, 2);
    let width = horizon * dim;
    // histories cluster in two groups; each group's futures split into two modes
    let mut hist = Vec::new();
    let mut next = Vec::new();
    for i in 0..n {
        let group = (i % 2) as f64;
        let mode = if (i / 2) % 2 == 0 { 1.0 } else { -1.0 };
        for _ in 0..width {
            hist.push(group + 0.05 * rng.random_range(-1.0..1.0));
        }
        for h in 0..horizon {
            next.push(mode * (h as f64 + 1.0) * 0.1 + 0.01 * rng.random_range(-1.0..1.0));
            next.push(0.5 + 0.01 * rng.random_range(-1.0..1.0));
        }
    }
    let idx = build_index(&hist, width, 16).unwrap();
    let table = precompute_s_next(&next, horizon, dim, &idx, 20).unwrap();
    for i in 0..n {
        let nb = brute_knn(&hist, width, i, 20);
        let got: Vec<usize> = table.neighbors(i).collect();
        assert_eq!(got, nb);
        let expect = brute_s_next(&next, horizon, dim, i, &nb);
        for d in 0..dim {
            assert!((table.s_next(i)[d] - expect[d]).abs() < 1e-12);
            assert!(table.s_next(i)[d] >= 0.0);
        }
        assert!(!got.contains(&i));
    }
}

#[test]
fn s_next_matches_oracle_on_512_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (n, horizon, dim) = (512, 8, 2);
    let width = horizon * dim;
    let hist = random_points(&mut rng, n, width);
    let next = random_points(&mut rng, n, width);
    let idx = build_index(&hist, width, 16).unwrap();
    let table = precompute_s_next(&next, horizon, dim, &idx, 20).unwrap();
    for i in 0..n {
        let nb = brute_knn(&hist, width, i, 20);
        let expect = brute_s_next(&next, horizon, dim, i, &nb);
        for d in 0..dim {
            assert!((table.s_next(i)[d] - expect[d]).abs() < 1e-10);
        }
    }
}

#[test]
fn neighbour_relation_need_not_be_symmetric() {
    // 0 -- 1 ---- 2 on a line with m = 1: 2's nearest is 1, 1's nearest is 0.
    let idx = NeighborIndex::build(vec![0.0, 1.0, 3.0], 1, 16).unwrap();
    assert_eq!(idx.query(2, 1).unwrap(), vec![1]);
    assert_eq!(idx.query(1, 1).unwrap(), vec![0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn s_next_scales_with_actions(seed in 0u64..1000, scale in 0.01f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, horizon, dim) = (40, 3, 2);
        let hist = random_points(&mut rng, n, 4);
        let next = random_points(&mut rng, n, horizon * dim);
        let scaled: Vec<f64> = next.iter().map(|v| v * scale).collect();
        let idx = build_index(&hist, 4, 16).unwrap();
        let a = precompute_s_next(&next, horizon, dim, &idx, 5).unwrap();
        let b = precompute_s_next(&scaled, horizon, dim, &idx, 5).unwrap();
        for i in 0..n {
            for d in 0..dim {
                let expect = a.s_next(i)[d] * scale;
                prop_assert!((b.s_next(i)[d] - expect).abs() <= 1e-12 * expect.abs().max(1.0));
            }
        }
    }

    #[test]
    fn tree_is_exact_for_any_leaf_size(seed in 0u64..1000, leaf in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = random_points(&mut rng, 100, 3);
        let idx = build_index(&pts, 3, leaf).unwrap();
        for i in (0..100).step_by(7) {
            prop_assert_eq!(idx.query(i, 10).unwrap(), brute_knn(&pts, 3, i, 10));
        }
    }
}
