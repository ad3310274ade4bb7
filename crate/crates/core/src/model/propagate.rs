use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, Axis};

use super::{sigmoid, FinalEmbedding, MessageVariant, ModelParams, Variant};
use crate::error::{Error, Result};
use crate::graph::ReviewGraph;

/// Direction of a single message.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    ItemToUser,
    UserToItem,
}

/// Message along one edge with rating bucket `rating` at layer `layer` (zero-based).
///
/// `source` is the sending node's embedding from the previous layer. Rating
/// weights are shared between both directions, so `direction` only documents
/// the caller's intent.
#[allow(clippy::too_many_arguments)]
pub fn pass_message(
    params: &ModelParams,
    _direction: Direction,
    layer: usize,
    rating: usize,
    review: ArrayView1<f64>,
    source: ArrayView1<f64>,
    normalizer: f64,
    message: MessageVariant,
) -> Result<Array1<f64>> {
    let w = params
        .layers
        .get(layer)
        .ok_or_else(|| Error::Invalid(format!("layer {layer} does not exist")))?
        .ratings
        .get(rating)
        .ok_or(Error::UnknownRating(rating as i32))?;
    let d = params.shape.dim;
    if review.len() != d || source.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: if review.len() != d { review.len() } else { source.len() },
        });
    }
    let neighbor_gate = if message.gates_neighbor() {
        sigmoid(w.gate_neighbor.dot(&review))
    } else {
        1.0
    };
    let mut out = w.neighbor_transform.dot(&source) * neighbor_gate;
    if message.uses_review_term() {
        out.scaled_add(sigmoid(w.gate_review.dot(&review)), &w.review_transform.dot(&review));
    }
    out *= normalizer;
    Ok(out)
}

/// `A * sum(messages)`; an empty message set aggregates to zero.
pub fn aggregate(aggregate: ArrayView2<f64>, messages: &[Array1<f64>]) -> Array1<f64> {
    let mut sum = Array1::zeros(aggregate.ncols());
    for m in messages {
        sum += m;
    }
    aggregate.dot(&sum)
}

/// Per-layer forward quantities kept for the backward pass.
#[derive(Clone, Debug)]
struct LayerCache {
    input_users: Array2<f64>,
    input_items: Array2<f64>,
    review_gate: Vec<f64>,
    neighbor_gate: Vec<f64>,
    /// `num_nodes x (num_ratings * d)`: per rating, sum of `c * gate * e`.
    user_review_sum: Array2<f64>,
    item_review_sum: Array2<f64>,
    /// Same layout, sum of `c * gate * neighbor embedding`.
    user_neighbor_sum: Array2<f64>,
    item_neighbor_sum: Array2<f64>,
    /// Message sums before the aggregation matrix.
    user_pre: Array2<f64>,
    item_pre: Array2<f64>,
}

/// Result of running all layers over one graph.
#[derive(Clone, Debug)]
pub struct Propagation {
    variant: Variant,
    caches: Vec<LayerCache>,
    /// Final user embeddings (`M x W`).
    pub users: Array2<f64>,
    /// Final item embeddings (`N x W`).
    pub items: Array2<f64>,
}

fn block(d: usize, r: usize) -> ndarray::Slice {
    ndarray::Slice::from(r * d..(r + 1) * d)
}

fn add_scaled_row(mut dst: ArrayViewMut1<f64>, scale: f64, src: ArrayView1<f64>) {
    dst.scaled_add(scale, &src);
}

impl Propagation {
    /// Run `L` rounds of message passing and aggregation on `graph`.
    pub fn forward(graph: &ReviewGraph, params: &ModelParams) -> Result<Self> {
        let shape = params.shape;
        let d = shape.dim;
        let k = graph.num_ratings();
        if graph.num_users() != shape.num_users || graph.num_items() != shape.num_items || k != shape.num_ratings {
            return Err(Error::Invalid(format!(
                "graph ({} users, {} items, {} ratings) does not match parameters ({}, {}, {})",
                graph.num_users(),
                graph.num_items(),
                k,
                shape.num_users,
                shape.num_items,
                shape.num_ratings
            )));
        }
        if graph.features().ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: graph.features().ncols(),
            });
        }
        let variant = shape.variant;
        let message = variant.message;
        let mut users = params.user_embedding.clone();
        let mut items = params.item_embedding.clone();
        let mut caches = Vec::with_capacity(variant.layers);
        let mut outputs_u = Vec::new();
        let mut outputs_v = Vec::new();

        for layer in &params.layers {
            let (m, n) = (shape.num_users, shape.num_items);
            let mut user_review_sum = Array2::zeros((m, k * d));
            let mut item_review_sum = Array2::zeros((n, k * d));
            let mut user_neighbor_sum = Array2::zeros((m, k * d));
            let mut item_neighbor_sum = Array2::zeros((n, k * d));
            let mut review_gate = vec![0.0; graph.num_edges()];
            let mut neighbor_gate = vec![1.0; graph.num_edges()];

            for (pos, e) in graph.edges().iter().enumerate() {
                let w = &layer.ratings[e.rating];
                let review = graph.feature(pos);
                let c = graph.normalizer(pos);
                let b = block(d, e.rating);
                if message.uses_review_term() {
                    let g = sigmoid(w.gate_review.dot(&review));
                    review_gate[pos] = g;
                    add_scaled_row(user_review_sum.row_mut(e.user).slice_axis_mut(Axis(0), b), c * g, review);
                    add_scaled_row(item_review_sum.row_mut(e.item).slice_axis_mut(Axis(0), b), c * g, review);
                }
                if message.gates_neighbor() {
                    neighbor_gate[pos] = sigmoid(w.gate_neighbor.dot(&review));
                }
                let cg = c * neighbor_gate[pos];
                add_scaled_row(user_neighbor_sum.row_mut(e.user).slice_axis_mut(Axis(0), b), cg, items.row(e.item));
                add_scaled_row(item_neighbor_sum.row_mut(e.item).slice_axis_mut(Axis(0), b), cg, users.row(e.user));
            }

            let mut user_pre = Array2::zeros((m, d));
            let mut item_pre = Array2::zeros((n, d));
            for (r, w) in layer.ratings.iter().enumerate() {
                let b = block(d, r);
                if message.uses_review_term() {
                    user_pre += &user_review_sum.slice_axis(Axis(1), b).dot(&w.review_transform.t());
                    item_pre += &item_review_sum.slice_axis(Axis(1), b).dot(&w.review_transform.t());
                }
                user_pre += &user_neighbor_sum.slice_axis(Axis(1), b).dot(&w.neighbor_transform.t());
                item_pre += &item_neighbor_sum.slice_axis(Axis(1), b).dot(&w.neighbor_transform.t());
            }
            let new_users = user_pre.dot(&layer.aggregate.t());
            let new_items = item_pre.dot(&layer.item_aggregate().t());

            caches.push(LayerCache {
                input_users: std::mem::replace(&mut users, new_users),
                input_items: std::mem::replace(&mut items, new_items),
                review_gate,
                neighbor_gate,
                user_review_sum,
                item_review_sum,
                user_neighbor_sum,
                item_neighbor_sum,
                user_pre,
                item_pre,
            });
            if variant.final_embedding == FinalEmbedding::ConcatLayers {
                outputs_u.push(users.clone());
                outputs_v.push(items.clone());
            }
        }

        let (users, items) = match variant.final_embedding {
            FinalEmbedding::LastLayer => (users, items),
            FinalEmbedding::ConcatLayers => {
                let uv: Vec<_> = outputs_u.iter().map(|a| a.view()).collect();
                let iv: Vec<_> = outputs_v.iter().map(|a| a.view()).collect();
                (
                    ndarray::concatenate(Axis(1), &uv).expect("equal rows"),
                    ndarray::concatenate(Axis(1), &iv).expect("equal rows"),
                )
            }
        };
        Ok(Self {
            variant,
            caches,
            users,
            items,
        })
    }

    /// Accumulate into `grads` the gradient of a scalar loss given its gradient
    /// with respect to the final embeddings.
    pub fn backward(
        &self,
        graph: &ReviewGraph,
        params: &ModelParams,
        d_users: &Array2<f64>,
        d_items: &Array2<f64>,
        grads: &mut ModelParams,
    ) {
        let d = params.shape.dim;
        let message = self.variant.message;
        let layers = self.caches.len();
        // gradient w.r.t. the output of the layer currently being processed
        let (mut g_users, mut g_items) = match self.variant.final_embedding {
            FinalEmbedding::LastLayer => (d_users.clone(), d_items.clone()),
            FinalEmbedding::ConcatLayers => (
                d_users.slice(s![.., (layers - 1) * d..]).to_owned(),
                d_items.slice(s![.., (layers - 1) * d..]).to_owned(),
            ),
        };

        for l in (0..layers).rev() {
            let cache = &self.caches[l];
            let layer = &params.layers[l];
            let glayer = &mut grads.layers[l];

            glayer.aggregate += &g_users.t().dot(&cache.user_pre);
            let item_agg_grad = g_items.t().dot(&cache.item_pre);
            match &mut glayer.aggregate_item {
                Some(a) => *a += &item_agg_grad,
                None => glayer.aggregate += &item_agg_grad,
            }
            let d_user_pre = g_users.dot(&layer.aggregate);
            let d_item_pre = g_items.dot(layer.item_aggregate());

            let k = layer.ratings.len();
            let mut d_user_review = Array2::zeros((d_user_pre.nrows(), k * d));
            let mut d_item_review = Array2::zeros((d_item_pre.nrows(), k * d));
            let mut d_user_neighbor = Array2::zeros((d_user_pre.nrows(), k * d));
            let mut d_item_neighbor = Array2::zeros((d_item_pre.nrows(), k * d));
            for (r, w) in layer.ratings.iter().enumerate() {
                let b = block(d, r);
                let gw = &mut glayer.ratings[r];
                if message.uses_review_term() {
                    gw.review_transform += &d_user_pre.t().dot(&cache.user_review_sum.slice_axis(Axis(1), b));
                    gw.review_transform += &d_item_pre.t().dot(&cache.item_review_sum.slice_axis(Axis(1), b));
                    d_user_review.slice_axis_mut(Axis(1), b).assign(&d_user_pre.dot(&w.review_transform));
                    d_item_review.slice_axis_mut(Axis(1), b).assign(&d_item_pre.dot(&w.review_transform));
                }
                gw.neighbor_transform += &d_user_pre.t().dot(&cache.user_neighbor_sum.slice_axis(Axis(1), b));
                gw.neighbor_transform += &d_item_pre.t().dot(&cache.item_neighbor_sum.slice_axis(Axis(1), b));
                d_user_neighbor.slice_axis_mut(Axis(1), b).assign(&d_user_pre.dot(&w.neighbor_transform));
                d_item_neighbor.slice_axis_mut(Axis(1), b).assign(&d_item_pre.dot(&w.neighbor_transform));
            }

            let mut d_in_users = Array2::zeros(cache.input_users.raw_dim());
            let mut d_in_items = Array2::zeros(cache.input_items.raw_dim());
            for (pos, e) in graph.edges().iter().enumerate() {
                let review = graph.feature(pos);
                let c = graph.normalizer(pos);
                let b = block(d, e.rating);
                let gw = &mut glayer.ratings[e.rating];
                if message.uses_review_term() {
                    let gu = d_user_review.row(e.user);
                    let gv = d_item_review.row(e.item);
                    let d_gate = c * (gu.slice_axis(Axis(0), b).dot(&review) + gv.slice_axis(Axis(0), b).dot(&review));
                    let a = cache.review_gate[pos];
                    gw.gate_review.scaled_add(d_gate * a * (1.0 - a), &review);
                }
                let nu = d_user_neighbor.row(e.user);
                let nu = nu.slice_axis(Axis(0), b);
                let nv = d_item_neighbor.row(e.item);
                let nv = nv.slice_axis(Axis(0), b);
                let a = cache.neighbor_gate[pos];
                if message.gates_neighbor() {
                    let d_gate = c * (nu.dot(&cache.input_items.row(e.item)) + nv.dot(&cache.input_users.row(e.user)));
                    gw.gate_neighbor.scaled_add(d_gate * a * (1.0 - a), &review);
                }
                d_in_items.row_mut(e.item).scaled_add(c * a, &nu);
                d_in_users.row_mut(e.user).scaled_add(c * a, &nv);
            }

            if l == 0 {
                grads.user_embedding += &d_in_users;
                grads.item_embedding += &d_in_items;
            } else {
                g_users = d_in_users;
                g_items = d_in_items;
                if self.variant.final_embedding == FinalEmbedding::ConcatLayers {
                    g_users += &d_users.slice(s![.., (l - 1) * d..l * d]);
                    g_items += &d_items.slice(s![.., (l - 1) * d..l * d]);
                }
            }
        }
    }
}
