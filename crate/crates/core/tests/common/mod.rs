#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rgcl::data::RatingScale;
use rgcl::graph::{node_drop, AugmentedGraphPair, ReviewGraph};
use rgcl::losses::sample_negatives;
use rgcl::model::{FinalEmbedding, MessageVariant, ModelParams};
use rgcl::train::{loss_value, NdTargets, StepBatch, TrainConfig, ViewPairs};

/// Random graph with `num_edges` distinct pairs, ratings 1..=5 and gaussian-ish features.
pub fn random_graph(seed: u64, m: usize, n: usize, num_edges: usize, d: usize) -> ReviewGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = BTreeSet::new();
    while pairs.len() < num_edges.min(m * n) {
        pairs.insert((rng.random_range(0..m), rng.random_range(0..n)));
    }
    let mut pairs: Vec<_> = pairs.into_iter().collect();
    // edge ids in a scrambled order so that id order differs from pair order
    for k in (1..pairs.len()).rev() {
        pairs.swap(k, rng.random_range(0..=k));
    }
    let edges: Vec<_> = pairs
        .iter()
        .enumerate()
        .map(|(k, &(u, i))| (k, u, i, rng.random_range(1..=5)))
        .collect();
    let features = Array2::from_shape_simple_fn((edges.len(), d), || rng.random_range(-1.0..1.0));
    ReviewGraph::from_edges(m, n, RatingScale::default(), edges, Arc::new(features)).expect("valid graph")
}

/// Every tensor uniform in `[-scale, scale)`.
pub fn random_params(config: &TrainConfig, graph: &ReviewGraph, seed: u64, scale: f64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelParams::zeros(config.model_shape(graph.num_users(), graph.num_items(), graph.num_ratings()));
    for (_, mut t) in p.named_tensors_mut() {
        t.mapv_inplace(|_| rng.random_range(-scale..scale));
    }
    p
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn matvec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

/// Direct transcription of the propagation rule over a dense
/// `rating x user x item` adjacency, with plain loops.
pub fn dense_propagate(graph: &ReviewGraph, params: &ModelParams) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (m, n, k) = (graph.num_users(), graph.num_items(), graph.num_ratings());
    let d = params.shape.dim;
    let variant = params.shape.variant;
    let mut adj: Vec<Vec<Vec<Option<usize>>>> = vec![vec![vec![None; n]; m]; k];
    let mut deg_u = vec![0usize; m];
    let mut deg_i = vec![0usize; n];
    for e in graph.edges() {
        adj[e.rating][e.user][e.item] = Some(e.edge_id);
        deg_u[e.user] += 1;
        deg_i[e.item] += 1;
    }
    let feats = graph.features();
    let feature = |id: usize| feats.row(id).to_vec();

    let message = |l: usize, r: usize, review: &[f64], src: &[f64], c: f64| -> Vec<f64> {
        let w = &params.layers[l].ratings[r];
        let g1 = sig(dot(&w.gate_review.to_vec(), review));
        let g2 = match variant.message {
            MessageVariant::WoWeight => 1.0,
            _ => sig(dot(&w.gate_neighbor.to_vec(), review)),
        };
        let t1 = matvec(&rows(&w.review_transform), review);
        let t2 = matvec(&rows(&w.neighbor_transform), src);
        (0..d)
            .map(|x| {
                let review_term = match variant.message {
                    MessageVariant::WoReview => 0.0,
                    _ => g1 * t1[x],
                };
                c * (review_term + g2 * t2[x])
            })
            .collect()
    };

    let mut users = rows(&params.user_embedding);
    let mut items = rows(&params.item_embedding);
    let mut outs_u = Vec::new();
    let mut outs_i = Vec::new();
    for l in 0..variant.layers {
        let a_user = rows(&params.layers[l].aggregate);
        let a_item = rows(params.layers[l].item_aggregate());
        let mut sum_u = vec![vec![0.0; d]; m];
        let mut sum_i = vec![vec![0.0; d]; n];
        for r in 0..k {
            for u in 0..m {
                for i in 0..n {
                    if let Some(id) = adj[r][u][i] {
                        let c = 1.0 / ((deg_u[u] * deg_i[i]) as f64).sqrt();
                        let e = feature(id);
                        let to_user = message(l, r, &e, &items[i], c);
                        let to_item = message(l, r, &e, &users[u], c);
                        for x in 0..d {
                            sum_u[u][x] += to_user[x];
                            sum_i[i][x] += to_item[x];
                        }
                    }
                }
            }
        }
        users = sum_u.iter().map(|s| matvec(&a_user, s)).collect();
        items = sum_i.iter().map(|s| matvec(&a_item, s)).collect();
        outs_u.push(users.clone());
        outs_i.push(items.clone());
    }
    match variant.final_embedding {
        FinalEmbedding::LastLayer => (users, items),
        FinalEmbedding::ConcatLayers => {
            let cat = |outs: &[Vec<Vec<f64>>], count: usize| -> Vec<Vec<f64>> {
                (0..count).map(|v| outs.iter().flat_map(|o| o[v].clone()).collect()).collect()
            };
            (cat(&outs_u, m), cat(&outs_i, n))
        }
    }
}

/// A full-graph batch with edge and node negatives.
pub fn full_batch<'a>(graph: &ReviewGraph, views: ViewPairs<'a>, seed: u64) -> StepBatch<'a> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges: Vec<usize> = (0..graph.num_edges()).collect();
    let ed_negatives = sample_negatives(&edges, graph.num_edges(), &mut rng).unwrap();
    let users: Vec<usize> = graph.edges().iter().map(|e| e.user).collect::<BTreeSet<_>>().into_iter().collect();
    let items: Vec<usize> = graph.edges().iter().map(|e| e.item).collect::<BTreeSet<_>>().into_iter().collect();
    let user_negatives = sample_negatives(&users, graph.num_users(), &mut rng).unwrap();
    let item_negatives = sample_negatives(&items, graph.num_items(), &mut rng).unwrap();
    StepBatch {
        edges,
        ed_negatives,
        nd: Some((
            views,
            NdTargets {
                users,
                user_negatives,
                items,
                item_negatives,
            },
        )),
    }
}

pub fn views(graph: &ReviewGraph, seed: u64) -> AugmentedGraphPair {
    node_drop(graph, 0.7, 0.7, seed).unwrap()
}

/// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)` over every
/// scalar, with central differences of the given step; also names the tensor.
pub fn finite_difference_check(
    graph: &ReviewGraph,
    batch: &StepBatch<'_>,
    params: &ModelParams,
    config: &TrainConfig,
    analytic: &ModelParams,
    step: f64,
    floor: f64,
) -> (f64, String) {
    let mut worst = (0.0, String::new());
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    let grads: Vec<Vec<f64>> = analytic.named_tensors().iter().map(|(_, t)| t.iter().copied().collect()).collect();
    for (t, name) in names.iter().enumerate() {
        let len = params.named_tensors()[t].1.len();
        for s in 0..len {
            let eval = |delta: f64| {
                let mut p = params.clone();
                {
                    let mut tensors = p.named_tensors_mut();
                    let v = tensors[t].1.iter_mut().nth(s).unwrap();
                    *v += delta;
                }
                loss_value(graph, batch, &p, config).unwrap().total
            };
            let numeric = (eval(step) - eval(-step)) / (2.0 * step);
            let a = grads[t][s];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            if rel > worst.0 {
                worst = (rel, format!("{name}[{s}] analytic {a:.6e} numeric {numeric:.6e}"));
            }
        }
    }
    worst
}
