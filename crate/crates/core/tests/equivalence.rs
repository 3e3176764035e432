use proptest::prelude::*;
use trigrid_core::engine::Enumeration;
use trigrid_core::graph::{canonicalize, EdgeList};
use trigrid_core::oracle::{count_matrix, count_serial};
use trigrid_core::rmat::{generate, RmatParams};
use trigrid_core::{run, EngineOptions, RunConfig};

const GRIDS: [usize; 5] = [1, 4, 9, 16, 25];

/// Triangle count by row bitsets: for each edge (u, v), u < v, popcount of
/// the higher neighbours shared by both. No sorting, merging or hashing.
fn count_bitset(g: &EdgeList) -> u64 {
    let n = g.n as usize;
    let words = n.div_ceil(64);
    let mut higher = vec![0u64; n * words];
    for &(u, v) in &g.edges {
        let (a, b) = (u.min(v) as usize, u.max(v) as usize);
        higher[a * words + b / 64] |= 1 << (b % 64);
    }
    let mut total = 0u64;
    for &(u, v) in &g.edges {
        let (a, b) = (u.min(v) as usize, u.max(v) as usize);
        let ra = &higher[a * words..(a + 1) * words];
        let rb = &higher[b * words..(b + 1) * words];
        total += ra.iter().zip(rb).map(|(x, y)| (x & y).count_ones() as u64).sum::<u64>();
    }
    total
}

fn clique(n: u64) -> EdgeList {
    EdgeList::new(n, (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect())
}

fn cycle(n: u64) -> EdgeList {
    EdgeList::new(n, (0..n).map(|v| (v, (v + 1) % n)).collect())
}

fn star(n: u64) -> EdgeList {
    EdgeList::new(n, (1..n).map(|v| (0, v)).collect())
}

fn complete_bipartite(a: u64, b: u64) -> EdgeList {
    EdgeList::new(a + b, (0..a).flat_map(|u| (a..a + b).map(move |v| (u, v))).collect())
}

fn disjoint_triangles(t: u64) -> EdgeList {
    let edges = (0..t)
        .flat_map(|i| [(3 * i, 3 * i + 1), (3 * i + 1, 3 * i + 2), (3 * i, 3 * i + 2)])
        .collect();
    EdgeList::new(3 * t, edges)
}

fn assert_invariant_over_grids(g: &EdgeList, label: &str) {
    let g = canonicalize(g).unwrap();
    let expected = count_serial(&g);
    for p in GRIDS {
        let got = run(&g, &RunConfig::new(p)).unwrap().triangles;
        assert_eq!(got, expected, "{label} at p={p}");
    }
}

#[test]
fn structured_graphs_match_oracle() {
    for n in 1..=12 {
        assert_invariant_over_grids(&clique(n), &format!("K{n}"));
    }
    for n in [3, 4, 5, 17] {
        assert_invariant_over_grids(&cycle(n), &format!("C{n}"));
    }
    assert_invariant_over_grids(&star(30), "star");
    assert_invariant_over_grids(&complete_bipartite(5, 7), "K5,7");
    assert_invariant_over_grids(&disjoint_triangles(7), "7 triangles");
    assert_invariant_over_grids(&EdgeList::new(10, vec![]), "empty");
}

#[test]
fn clique_counts_are_binomial() {
    for n in [4u64, 9, 12] {
        let r = run(&clique(n), &RunConfig::new(9)).unwrap();
        assert_eq!(r.triangles, n * (n - 1) * (n - 2) / 6);
    }
}

#[test]
fn golden_scale10_seed42() {
    let g = generate(&RmatParams::new(10, 16, 42)).unwrap();
    assert_eq!(g.len(), 10547);
    assert_eq!(count_serial(&g), 76095);
    assert_eq!(count_bitset(&g), 76095);
    assert_eq!(run(&g, &RunConfig::new(9)).unwrap().triangles, 76095);
}

#[test]
fn bitset_agrees_with_dense_oracle() {
    for n in [5u64, 13, 40, 64] {
        let g = canonicalize(&cycle(n)).unwrap();
        assert_eq!(count_bitset(&g), count_matrix(&g).unwrap());
        let g = clique(n.min(20));
        assert_eq!(count_bitset(&g), count_matrix(&g).unwrap());
    }
}

#[test]
fn toggles_agree_on_rmat() {
    let g = generate(&RmatParams::new(8, 8, 7)).unwrap();
    let expected = count_serial(&g);
    for opts in EngineOptions::all_combinations() {
        let r = run(&g, &RunConfig::new(4).with_options(opts)).unwrap();
        assert_eq!(r.triangles, expected, "{opts:?}");
    }
}

#[test]
fn jik_probes_fewer_than_ijk_on_skewed_graph() {
    let g = generate(&RmatParams::new(10, 16, 3)).unwrap();
    let probes = |enumeration| {
        let opts = EngineOptions { enumeration, ..Default::default() };
        run(&g, &RunConfig::new(4).with_options(opts)).unwrap().totals.probes
    };
    assert!(probes(Enumeration::Jik) < probes(Enumeration::Ijk));
}

fn arb_graph() -> impl Strategy<Value = EdgeList> {
    (2u64..40).prop_flat_map(|n| {
        proptest::collection::vec((0..n, 0..n), 0..120).prop_map(move |e| EdgeList::new(n, e))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn distributed_count_is_rank_invariant(g in arb_graph(), pick in 0usize..5) {
        let g = canonicalize(&g).unwrap();
        let p = GRIDS[pick];
        prop_assert_eq!(run(&g, &RunConfig::new(p)).unwrap().triangles, count_serial(&g));
    }

    #[test]
    fn pruning_never_adds_probes(g in arb_graph(), pick in 0usize..3) {
        let p = GRIDS[pick];
        let on = run(&g, &RunConfig::new(p)).unwrap();
        let off = EngineOptions { prune: false, ..Default::default() };
        let off = run(&g, &RunConfig::new(p).with_options(off)).unwrap();
        prop_assert!(on.totals.probes <= off.totals.probes);
        prop_assert_eq!(on.triangles, off.triangles);
    }
}
