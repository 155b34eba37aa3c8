//! Louvain against exhaustive modularity maximization on small graphs.

mod common;

use cdcgcn::community::{louvain, louvain_graph, modularity, CommunityAssignment, WeightedGraph};
use cdcgcn::synthetic::{planted, PlantedConfig};
use cdcgcn::dataset::{split_dataset, SplitRatios};
use common::*;
use proptest::prelude::*;

#[test]
fn partitions_are_enumerated_completely() {
    // Bell numbers
    let bell = [1, 1, 2, 5, 15, 52, 203, 877, 4140];
    for (n, &b) in bell.iter().enumerate() {
        assert_eq!(set_partitions(n).len(), b);
    }
}

#[test]
fn never_exceeds_the_brute_force_optimum() {
    for f in louvain_fixtures(120) {
        let graph = WeightedGraph::from_edges(f.nodes(), f.edges.iter().copied());
        let best = brute_force_modularity(f.nodes(), &f.edges);
        for seed in 0..4 {
            let (labels, _) = louvain_graph(&graph, seed, 1.0);
            let q = dense_modularity(f.nodes(), &f.edges, &labels);
            assert!((graph.modularity(&labels, 1.0) - q).abs() < 1e-12);
            assert!(q <= best + 1e-12, "{} seed {seed}: {q} vs {best}", f.name);
        }
    }
}

#[test]
fn reaches_the_optimum_on_clustered_shapes() {
    // greedy moves can stall below the optimum on long paths and cycles
    let named: Vec<_> = louvain_fixtures(0)
        .into_iter()
        .filter(|f| !matches!(f.name.as_str(), "path 8" | "cycle 8"))
        .collect();
    for f in named {
        let graph = WeightedGraph::from_edges(f.nodes(), f.edges.iter().copied());
        let best = brute_force_modularity(f.nodes(), &f.edges);
        for seed in 0..8 {
            let (labels, _) = louvain_graph(&graph, seed, 1.0);
            let q = dense_modularity(f.nodes(), &f.edges, &labels);
            assert!((q - best).abs() < 1e-10, "{} seed {seed}: {q} vs {best}", f.name);
        }
    }
}

#[test]
fn disjoint_squares_split_into_two() {
    let edges = [(0, 4), (0, 5), (1, 4), (1, 5), (2, 6), (2, 7), (3, 6), (3, 7)];
    let graph = WeightedGraph::from_edges(8, edges);
    let (labels, _) = louvain_graph(&graph, 0, 1.0);
    assert_eq!(labels.iter().max(), Some(&1));
    assert_eq!(labels[0], labels[4]);
    assert_ne!(labels[0], labels[2]);
    assert!((dense_modularity(8, &edges, &labels) - 0.5).abs() < 1e-12);
}

#[test]
fn modularity_matches_dense_definition() {
    for f in louvain_fixtures(30) {
        let graph = WeightedGraph::from_edges(f.nodes(), f.edges.iter().copied());
        for p in set_partitions(f.nodes()).iter().step_by(7) {
            assert!((graph.modularity(p, 1.0) - dense_modularity(f.nodes(), &f.edges, p)).abs() < 1e-12);
        }
    }
}

fn planted_split(seed: u64) -> cdcgcn::dataset::InteractionDataset {
    let raw = planted(&PlantedConfig {
        num_users: 120,
        num_items: 150,
        seed,
        ..Default::default()
    });
    split_dataset(raw, SplitRatios::default(), seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn level_modularity_never_decreases(seed in 0u64..1000) {
        let ds = planted_split(seed % 5);
        let a = louvain(&ds, seed, 1.0);
        for w in a.level_modularity.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-12);
        }
        prop_assert!((a.modularity - modularity(&ds, &a)).abs() < 1e-12);
    }

    #[test]
    fn random_labels_do_not_beat_louvain(seed in 0u64..1000, k in 1usize..8) {
        let ds = planted_split(seed % 3);
        let a = louvain(&ds, seed, 1.0);
        let r = random_labels(&ds, k, seed);
        let r = CommunityAssignment::from_labels(ds.num_users, r.labels.clone(), &ds);
        prop_assert!(modularity(&ds, &r) <= a.modularity + 1e-12);
    }
}
