mod common;

use std::sync::Arc;

use common::*;
use ndarray::Array2;
use proptest::prelude::*;
use rgcl::data::RatingScale;
use rgcl::graph::ReviewGraph;
use rgcl::model::{FinalEmbedding, MessageVariant, Propagation};
use rgcl::train::TrainConfig;

fn cfg(message: MessageVariant, layers: usize, concat: bool, separate: bool) -> TrainConfig {
    TrainConfig {
        dim: 3,
        layers,
        message,
        final_embedding: if concat { FinalEmbedding::ConcatLayers } else { FinalEmbedding::LastLayer },
        separate_aggregation: separate,
        ..TrainConfig::default()
    }
}

fn max_diff(a: &Array2<f64>, b: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for (r, row) in a.outer_iter().zip(b) {
        assert_eq!(r.len(), row.len());
        for (x, y) in r.iter().zip(row) {
            worst = worst.max((x - y).abs());
        }
    }
    worst
}

fn relabel(graph: &ReviewGraph, users: &[usize], items: &[usize]) -> ReviewGraph {
    ReviewGraph::from_edges(
        graph.num_users(),
        graph.num_items(),
        graph.scale(),
        graph.edges().iter().map(|e| (e.edge_id, users[e.user], items[e.item], graph.scale().min + e.rating as i32)),
        graph.features().clone(),
    )
    .unwrap()
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sparse_matches_dense(seed in 0u64..100_000, m in 1usize..6, n in 1usize..6, message in 0usize..3,
                            layers in 1usize..4, concat: bool, separate: bool) {
        let c = cfg([MessageVariant::Full, MessageVariant::WoReview, MessageVariant::WoWeight][message], layers, concat, separate);
        let e = (seed as usize % (m * n)) + 1;
        let graph = random_graph(seed, m, n, e, 3);
        let params = random_params(&c, &graph, seed + 1, 0.7);
        let prop = Propagation::forward(&graph, &params).unwrap();
        let (du, di) = dense_propagate(&graph, &params);
        prop_assert!(max_diff(&prop.users, &du) < 1e-10);
        prop_assert!(max_diff(&prop.items, &di) < 1e-10);
    }

    #[test]
    fn relabeling_nodes_permutes_outputs(seed in 0u64..100_000, layers in 1usize..3) {
        let c = cfg(MessageVariant::Full, layers, false, true);
        let graph = random_graph(seed, 5, 4, 10, 3);
        let params = random_params(&c, &graph, seed + 1, 0.7);
        let (pu, pi) = (shuffled(5, seed), shuffled(4, seed + 7));
        let moved = relabel(&graph, &pu, &pi);
        let mut moved_params = params.clone();
        for u in 0..5 {
            moved_params.user_embedding.row_mut(pu[u]).assign(&params.user_embedding.row(u));
        }
        for i in 0..4 {
            moved_params.item_embedding.row_mut(pi[i]).assign(&params.item_embedding.row(i));
        }
        let a = Propagation::forward(&graph, &params).unwrap();
        let b = Propagation::forward(&moved, &moved_params).unwrap();
        for u in 0..5 {
            for x in 0..3 {
                prop_assert!((a.users[[u, x]] - b.users[[pu[u], x]]).abs() < 1e-12);
            }
        }
        for i in 0..4 {
            for x in 0..3 {
                prop_assert!((a.items[[i, x]] - b.items[[pi[i], x]]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn one_layer_is_local() {
    // two disconnected components: users {0,1} x items {0,1} and user 2 x item 2
    let feats = Arc::new(Array2::from_shape_fn((5, 3), |(i, j)| ((i * 3 + j) as f64 * 0.37).sin()));
    let edges = vec![(0, 0, 0, 5), (1, 0, 1, 3), (2, 1, 0, 4), (3, 1, 1, 1), (4, 2, 2, 2)];
    let g = ReviewGraph::from_edges(3, 3, RatingScale::default(), edges.clone(), feats.clone()).unwrap();
    let c = cfg(MessageVariant::Full, 1, false, false);
    let params = random_params(&c, &g, 3, 0.8);
    let before = Propagation::forward(&g, &params).unwrap();

    let mut changed = (*feats).clone();
    changed.row_mut(4).fill(9.0);
    let g2 = ReviewGraph::from_edges(3, 3, RatingScale::default(), edges, Arc::new(changed)).unwrap();
    let after = Propagation::forward(&g2, &params).unwrap();
    for v in 0..2 {
        assert_eq!(before.users.row(v), after.users.row(v));
        assert_eq!(before.items.row(v), after.items.row(v));
    }
    assert_ne!(before.users.row(2), after.users.row(2));
}

#[test]
fn without_review_equals_full_with_zero_review_transform() {
    let graph = random_graph(11, 4, 4, 9, 3);
    let full = cfg(MessageVariant::Full, 2, false, false);
    let mut p = random_params(&full, &graph, 12, 0.7);
    let mut q = p.clone();
    q.shape.variant.message = MessageVariant::WoReview;
    for layer in &mut p.layers {
        for r in &mut layer.ratings {
            r.review_transform.fill(0.0);
        }
    }
    let a = Propagation::forward(&graph, &p).unwrap();
    let b = Propagation::forward(&graph, &q).unwrap();
    assert!((&a.users - &b.users).iter().all(|v| v.abs() < 1e-15));
    assert!((&a.items - &b.items).iter().all(|v| v.abs() < 1e-15));
}

#[test]
fn isolated_nodes_are_zero() {
    let feats = Arc::new(Array2::from_elem((1, 3), 0.5));
    let g = ReviewGraph::from_edges(3, 2, RatingScale::default(), vec![(0, 0, 0, 4)], feats).unwrap();
    let c = cfg(MessageVariant::Full, 2, true, false);
    let params = random_params(&c, &g, 1, 0.7);
    let prop = Propagation::forward(&g, &params).unwrap();
    assert_eq!(prop.users.dim(), (3, 6));
    assert!(prop.users.row(1).iter().chain(prop.users.row(2)).all(|v| *v == 0.0));
    assert!(prop.items.row(1).iter().all(|v| *v == 0.0));
    assert!(prop.users.row(0).iter().any(|v| *v != 0.0));
}

#[test]
fn edgeless_graph_propagates_to_zeros() {
    let feats = Arc::new(Array2::zeros((0, 3)));
    let g = ReviewGraph::from_edges(2, 2, RatingScale::default(), Vec::new(), feats).unwrap();
    let c = cfg(MessageVariant::Full, 1, false, false);
    let params = random_params(&c, &g, 1, 0.7);
    let prop = Propagation::forward(&g, &params).unwrap();
    assert!(prop.users.iter().chain(prop.items.iter()).all(|v| *v == 0.0));
}

#[test]
fn mismatched_shape_is_rejected() {
    let graph = random_graph(5, 4, 4, 6, 3);
    let other = random_graph(5, 5, 4, 6, 3);
    let c = cfg(MessageVariant::Full, 1, false, false);
    let params = random_params(&c, &other, 1, 0.7);
    assert!(Propagation::forward(&graph, &params).is_err());
}
