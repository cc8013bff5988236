//! Structural invariants of the generated overlays and of Byzantine placement.

use std::collections::HashSet;

use gossip_poison::attack::{select_byzantine, PlacementStrategy};
use gossip_poison::rng::rng_from_seed;
use gossip_poison::topology::{
    gen_erdos_renyi, gen_fanout, gen_random_regular, gen_watts_strogatz, gen_zipf, is_connected, Family, Graph,
    TopologySpec,
};
use proptest::prelude::*;

fn assert_simple(g: &Graph) {
    for v in 0..g.n() {
        let nb = g.neighbors(v);
        assert!(!nb.contains(&v), "self-loop at {v}");
        assert_eq!(nb.iter().collect::<HashSet<_>>().len(), nb.len(), "duplicate edge at {v}");
        if !g.is_directed() {
            for &u in nb {
                assert!(g.neighbors(u).contains(&v), "edge {v}-{u} not mirrored");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn fanout_has_exact_out_degree(seed in any::<u64>(), n in 21usize..200) {
        let g = gen_fanout(n, 20, &mut rng_from_seed(seed)).unwrap();
        assert_simple(&g);
        prop_assert!(g.is_directed());
        prop_assert!((0..n).all(|v| g.out_degree(v) == 20));
        prop_assert_eq!((0..n).map(|v| g.in_degree(v)).sum::<usize>(), 20 * n);
    }

    #[test]
    fn regular_graphs_are_exactly_regular(seed in any::<u64>(), half in 11usize..100) {
        let n = 2 * half;
        for k in [3, 20] {
            let g = gen_random_regular(n, k, &mut rng_from_seed(seed)).unwrap();
            assert_simple(&g);
            prop_assert!((0..n).all(|v| g.out_degree(v) == k));
            prop_assert_eq!(g.edge_count(), n * k / 2);
        }
    }

    #[test]
    fn watts_strogatz_keeps_its_edge_count(seed in any::<u64>(), n in 30usize..200, p in 0.0f64..=1.0) {
        let g = gen_watts_strogatz(n, 20, p, &mut rng_from_seed(seed)).unwrap();
        assert_simple(&g);
        prop_assert_eq!(g.edge_count(), n * 20 / 2);
    }

    #[test]
    fn erdos_renyi_is_connected(seed in any::<u64>(), n in 10usize..200) {
        let g = gen_erdos_renyi(n, &mut rng_from_seed(seed)).unwrap();
        assert_simple(&g);
        prop_assert!(is_connected(&g));
    }

    #[test]
    fn zipf_graphs_are_connected_without_isolated_nodes(seed in any::<u64>(), n in 10usize..200) {
        let g = gen_zipf(n, 2.0, &mut rng_from_seed(seed)).unwrap();
        assert_simple(&g);
        prop_assert!((0..n).all(|v| g.out_degree(v) >= 1));
        prop_assert!(is_connected(&g));
    }

    #[test]
    fn generation_is_deterministic(seed in any::<u64>(), pick in 0usize..5) {
        let spec = TopologySpec::standard(Family::ALL[pick]);
        let a = spec.generate(100, &mut rng_from_seed(seed)).unwrap();
        let b = spec.generate(100, &mut rng_from_seed(seed)).unwrap();
        prop_assert_eq!(a.fingerprint(), b.fingerprint());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn classical_placement_takes_the_highest_degrees(seed in any::<u64>(), f in 0usize..60) {
        let g = gen_zipf(60, 2.0, &mut rng_from_seed(seed)).unwrap();
        let chosen = select_byzantine(&g, f, PlacementStrategy::Classical, &mut rng_from_seed(0)).unwrap();
        prop_assert_eq!(chosen.f(), f);
        let deg = |v: usize| g.degree(v).unwrap();
        for &v in chosen.members() {
            for u in (0..60).filter(|&u| !chosen.contains(u)) {
                prop_assert!(deg(v) > deg(u) || (deg(v) == deg(u) && v < u), "{v} chosen over {u}");
            }
        }
    }
}

#[test]
fn classical_placement_on_crafted_graphs() {
    let mut rng = rng_from_seed(0);
    // Hub 4 links everyone; 1 and 7 also link each other and 2; ties resolve to the lower id.
    let mut edges = vec![(1, 7), (1, 2), (7, 2)];
    edges.extend((0..9).filter(|&v| v != 4).map(|v| (4, v)));
    let mut adj = vec![Vec::new(); 9];
    for &(a, b) in &edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let g = Graph::from_adjacency(adj, false).unwrap();
    let mut top = |f| select_byzantine(&g, f, PlacementStrategy::Classical, &mut rng).unwrap().members().to_vec();
    assert_eq!(top(1), [4]);
    assert_eq!(top(3), [1, 2, 4]);
    assert_eq!(top(4), [1, 2, 4, 7]);

    // Directed graphs rank by in-degree plus out-degree.
    let adj = vec![vec![1], vec![2], vec![1], vec![1]];
    let g = Graph::from_adjacency(adj, true).unwrap();
    let chosen = select_byzantine(&g, 1, PlacementStrategy::Classical, &mut rng).unwrap();
    assert_eq!(chosen.members(), [1]);
}

#[test]
fn random_placement_is_uniform() {
    let g = gen_random_regular(100, 20, &mut rng_from_seed(1)).unwrap();
    let (trials, f) = (4000, 30);
    let mut counts = vec![0usize; 100];
    let mut rng = rng_from_seed(2);
    for _ in 0..trials {
        let set = select_byzantine(&g, f, PlacementStrategy::Random, &mut rng).unwrap();
        assert_eq!(set.members().iter().collect::<HashSet<_>>().len(), f);
        for &v in set.members() {
            counts[v] += 1;
        }
    }
    let p = f as f64 / 100.0;
    let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
    let outside = counts.iter().filter(|&&c| (c as f64 - trials as f64 * p).abs() > 3.0 * sigma).count();
    // Each node leaves the 3-sigma band with probability ~0.3%.
    assert!(outside <= 2, "{outside} nodes outside 3 sigma: {counts:?}");
}
