use ndarray::{Array1, Array2, Axis};

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::graph::{AugmentedGraphPair, ReviewGraph};
use crate::losses::{ed_loss, mse_loss, node_discrimination, total_loss};
use crate::model::{Interaction, ModelParams, Propagation};

/// Augmented views feeding Node Discrimination.
#[derive(Clone, Copy, Debug)]
pub enum ViewPairs<'a> {
    Shared(&'a AugmentedGraphPair),
    PerSide {
        users: &'a AugmentedGraphPair,
        items: &'a AugmentedGraphPair,
    },
}

impl<'a> ViewPairs<'a> {
    fn user_pair(&self) -> &'a AugmentedGraphPair {
        match *self {
            Self::Shared(p) => p,
            Self::PerSide { users, .. } => users,
        }
    }

    fn item_pair(&self) -> &'a AugmentedGraphPair {
        match *self {
            Self::Shared(p) => p,
            Self::PerSide { items, .. } => items,
        }
    }
}

/// Node Discrimination anchors with their negatives.
#[derive(Clone, Debug, Default)]
pub struct NdTargets {
    pub users: Vec<usize>,
    pub user_negatives: Vec<usize>,
    pub items: Vec<usize>,
    pub item_negatives: Vec<usize>,
}

/// One minibatch. Edge indices are positions in `graph.edges()`.
#[derive(Clone, Debug)]
pub struct StepBatch<'a> {
    pub edges: Vec<usize>,
    /// Edge Discrimination negatives, one per batch edge.
    pub ed_negatives: Vec<usize>,
    pub nd: Option<(ViewPairs<'a>, NdTargets)>,
}

impl StepBatch<'_> {
    /// A batch with only the rating loss.
    pub fn rating_only(edges: Vec<usize>) -> Self {
        Self {
            edges,
            ed_negatives: Vec::new(),
            nd: None,
        }
    }
}

/// Loss components of one step. `ed` and `nd` are 0 when their paths did not run.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub mse: f64,
    pub ed: f64,
    pub nd: f64,
    pub total: f64,
}

fn rows_by_edge(graph: &ReviewGraph, positions: &[usize]) -> Array2<f64> {
    let ids: Vec<usize> = positions.iter().map(|&k| graph.edges()[k].edge_id).collect();
    graph.features().select(Axis(0), &ids)
}

fn run(
    graph: &ReviewGraph,
    batch: &StepBatch<'_>,
    params: &ModelParams,
    config: &TrainConfig,
    mut grads: Option<&mut ModelParams>,
) -> Result<LossBreakdown> {
    let contrastive = config.contrastive;
    let form = config.loss_form;
    let base = graph.scale().min as f64;
    let prop = Propagation::forward(graph, params)?;
    let edges = graph.edges();
    let users: Vec<usize> = batch.edges.iter().map(|&k| edges[k].user).collect();
    let items: Vec<usize> = batch.edges.iter().map(|&k| edges[k].item).collect();
    let ratings: Array1<f64> = batch.edges.iter().map(|&k| base + edges[k].rating as f64).collect();
    let inter = Interaction::forward(params, prop.users.view(), prop.items.view(), &users, &items)?;
    let mse = mse_loss(inter.predictions.view(), ratings.view())?;

    let mut out = LossBreakdown {
        mse,
        ..LossBreakdown::default()
    };

    let mut d_features = None;
    if contrastive {
        if batch.ed_negatives.len() != batch.edges.len() {
            return Err(Error::Invalid("one edge negative per batch edge is required".into()));
        }
        let g = ed_loss(
            inter.features.view(),
            rows_by_edge(graph, &batch.edges).view(),
            rows_by_edge(graph, &batch.ed_negatives).view(),
            params.ed.view(),
            form,
        );
        out.ed = g.value;
        if let (Some(grads), true) = (grads.as_deref_mut(), config.alpha > 0.0) {
            grads.ed.scaled_add(config.alpha, &g.d_weight);
            d_features = Some(g.d_anchor * config.alpha);
        }
    }

    if let Some(grads) = grads.as_deref_mut() {
        let b = batch.edges.len() as f64;
        let d_pred = (&inter.predictions - &ratings) * (2.0 / b);
        let g = inter.backward(
            params,
            d_pred.view(),
            d_features.as_ref().map(|a| a.view()),
            graph.num_users(),
            graph.num_items(),
            grads,
        );
        prop.backward(graph, params, &g.users, &g.items, grads);
    }

    if let (true, Some((views, targets))) = (contrastive, &batch.nd) {
        let up = views.user_pair();
        let ip = views.item_pair();
        let shared = std::ptr::eq(up, ip);
        let u1 = Propagation::forward(&up.first, params)?;
        let u2 = Propagation::forward(&up.second, params)?;
        let (i1, i2) = if shared {
            (None, None)
        } else {
            (Some(Propagation::forward(&ip.first, params)?), Some(Propagation::forward(&ip.second, params)?))
        };
        let (ia, ib) = (i1.as_ref().unwrap_or(&u1), i2.as_ref().unwrap_or(&u2));
        // anchors come from the first view unless swapped
        let orient = |a: &'_ Array2<f64>, b: &'_ Array2<f64>| -> (Array2<f64>, Array2<f64>) {
            if config.nd_swap_views {
                (b.clone(), a.clone())
            } else {
                (a.clone(), b.clone())
            }
        };
        let (uf, us) = orient(&u1.users, &u2.users);
        let (vf, vs) = orient(&ia.items, &ib.items);
        let nu = node_discrimination(uf.view(), us.view(), &targets.users, &targets.user_negatives, params.nd_user.view(), form);
        let ni = node_discrimination(vf.view(), vs.view(), &targets.items, &targets.item_negatives, params.nd_item.view(), form);
        out.nd = nu.value + ni.value;

        if let (Some(grads), true) = (grads.as_deref_mut(), config.beta > 0.0) {
            let beta = config.beta;
            grads.nd_user.scaled_add(beta, &nu.d_weight);
            grads.nd_item.scaled_add(beta, &ni.d_weight);
            let (du1, du2) = if config.nd_swap_views { (nu.d_second, nu.d_first) } else { (nu.d_first, nu.d_second) };
            let (di1, di2) = if config.nd_swap_views { (ni.d_second, ni.d_first) } else { (ni.d_first, ni.d_second) };
            let (du1, du2, di1, di2) = (du1 * beta, du2 * beta, di1 * beta, di2 * beta);
            if shared {
                u1.backward(&up.first, params, &du1, &di1, grads);
                u2.backward(&up.second, params, &du2, &di2, grads);
            } else {
                let zu = Array2::zeros(du1.raw_dim());
                let zi = Array2::zeros(di1.raw_dim());
                u1.backward(&up.first, params, &du1, &zi, grads);
                u2.backward(&up.second, params, &du2, &zi, grads);
                ia.backward(&ip.first, params, &zu, &di1, grads);
                ib.backward(&ip.second, params, &zu, &di2, grads);
            }
        }
    }

    out.total = total_loss(out.mse, out.ed, out.nd, config.alpha, config.beta);
    if !out.total.is_finite() {
        return Err(Error::Invalid(format!("loss is not finite ({})", out.total)));
    }
    Ok(out)
}

/// Forward pass only.
pub fn loss_value(graph: &ReviewGraph, batch: &StepBatch<'_>, params: &ModelParams, config: &TrainConfig) -> Result<LossBreakdown> {
    run(graph, batch, params, config, None)
}

/// Loss and its exact gradient with respect to every tensor. Tensors the batch
/// does not reach get zeros.
pub fn compute_gradients(
    graph: &ReviewGraph,
    batch: &StepBatch<'_>,
    params: &ModelParams,
    config: &TrainConfig,
) -> Result<(LossBreakdown, ModelParams)> {
    let mut grads = params.zeros_like();
    let loss = run(graph, batch, params, config, Some(&mut grads))?;
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::NonFiniteGradient(name));
    }
    Ok((loss, grads))
}
