use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::config::{NdViews, TrainConfig};
use super::optim::{adam_step, init_params, AdamConfig, OptimizerState};
use super::step::{compute_gradients, NdTargets, StepBatch, ViewPairs};
use super::{derive_seed, Stream};
use crate::dataset::{Dataset, Part};
use crate::error::{Error, Result};
use crate::eval::evaluate_params;
use crate::graph::{node_drop, AugmentedGraphPair, ReviewGraph};
use crate::losses::sample_negatives;
use crate::model::ModelParams;

/// One row of the loss trace. Training columns are batch-size weighted means.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub train_ed: f64,
    pub train_nd: f64,
    pub valid_mse: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters at the best validation epoch.
    pub params: ModelParams,
    pub trace: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid_mse: f64,
    /// Validation MSE of the freshly initialized model.
    pub initial_valid_mse: f64,
}

impl TrainOutcome {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("epoch,train_mse,train_ed,train_nd,valid_mse\n");
        for r in &self.trace {
            let _ = writeln!(out, "{},{},{},{},{}", r.epoch, r.train_mse, r.train_ed, r.train_nd, r.valid_mse);
        }
        out
    }

    pub fn checkpoint(&self, config: &TrainConfig, dataset: &Dataset) -> Checkpoint {
        Checkpoint {
            config: config.clone(),
            scale: dataset.graph.scale(),
            params: self.params.clone(),
            best_epoch: self.best_epoch,
        }
    }
}

enum Views {
    Shared(AugmentedGraphPair),
    PerSide(AugmentedGraphPair, AugmentedGraphPair),
}

impl Views {
    fn draw(graph: &ReviewGraph, config: &TrainConfig, seed: u64) -> Result<Self> {
        Ok(match config.nd_views {
            NdViews::Shared => Self::Shared(node_drop(graph, config.keep_prob_users, config.keep_prob_items, seed)?),
            NdViews::PerSide => Self::PerSide(
                node_drop(graph, 1.0, config.keep_prob_items, seed)?,
                node_drop(graph, config.keep_prob_users, 1.0, seed ^ 0x5bd1_e995)?,
            ),
        })
    }

    fn pairs(&self) -> ViewPairs<'_> {
        match self {
            Self::Shared(p) => ViewPairs::Shared(p),
            Self::PerSide(u, i) => ViewPairs::PerSide { users: u, items: i },
        }
    }
}

fn distinct(values: impl Iterator<Item = usize>) -> Vec<usize> {
    values.collect::<BTreeSet<_>>().into_iter().collect()
}

pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    train_observed(dataset, config, |_| {})
}

/// Train with a callback invoked after every epoch.
pub fn train_observed(
    dataset: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    let graph = &dataset.graph;
    if graph.num_edges() == 0 {
        return Err(Error::Invalid("training graph has no edges".into()));
    }
    let shape = config.model_shape(graph.num_users(), graph.num_items(), graph.num_ratings());
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, Stream::Init, 0));
    let mut params = init_params(shape, &mut init_rng);
    let mut state = OptimizerState::new(&params);
    let adam = AdamConfig::from(config);
    let clamp = config.clamp_eval;

    let initial_valid_mse = evaluate_params(&params, dataset, Part::Valid, clamp)?.mse;
    let mut best = (params.clone(), 0usize, initial_valid_mse);
    let mut trace = Vec::new();
    let mut stale = 0;
    let mut order: Vec<usize> = (0..graph.num_edges()).collect();

    for epoch in 1..=config.max_epochs {
        let e = epoch as u64;
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, Stream::Shuffle, e)));
        let mut neg_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, Stream::Negatives, e));
        let mut views = None;
        if config.contrastive && !config.resample_per_batch {
            views = Some(Views::draw(graph, config, derive_seed(config.seed, Stream::Augment, e << 32))?);
        }
        let (mut sum_mse, mut sum_ed, mut sum_nd) = (0.0, 0.0, 0.0);

        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let edges = chunk.to_vec();
            let batch_views;
            let batch = if config.contrastive {
                if config.resample_per_batch {
                    let seed = derive_seed(config.seed, Stream::Augment, (e << 32) | (b as u64 + 1));
                    views = Some(Views::draw(graph, config, seed)?);
                }
                batch_views = views.as_ref().expect("drawn above");
                let ed_negatives = sample_negatives(&edges, graph.num_edges(), &mut neg_rng)?;
                let users = distinct(edges.iter().map(|&k| graph.edges()[k].user));
                let items = distinct(edges.iter().map(|&k| graph.edges()[k].item));
                let user_negatives = sample_negatives(&users, graph.num_users(), &mut neg_rng)?;
                let item_negatives = sample_negatives(&items, graph.num_items(), &mut neg_rng)?;
                StepBatch {
                    edges,
                    ed_negatives,
                    nd: Some((
                        batch_views.pairs(),
                        NdTargets {
                            users,
                            user_negatives,
                            items,
                            item_negatives,
                        },
                    )),
                }
            } else {
                StepBatch::rating_only(edges)
            };
            let (loss, grads) = compute_gradients(graph, &batch, &params, config)?;
            adam_step(&mut params, &grads, &mut state, &adam);
            let n = chunk.len() as f64;
            sum_mse += loss.mse * n;
            sum_ed += loss.ed * n;
            sum_nd += loss.nd * n;
        }

        let total = graph.num_edges() as f64;
        let valid_mse = evaluate_params(&params, dataset, Part::Valid, clamp)?.mse;
        let record = EpochRecord {
            epoch,
            train_mse: sum_mse / total,
            train_ed: sum_ed / total,
            train_nd: sum_nd / total,
            valid_mse,
        };
        log::debug!("epoch {epoch}: train_mse {:.5} valid_mse {valid_mse:.5}", record.train_mse);
        trace.push(record);
        on_epoch(&record);

        if !valid_mse.is_finite() || valid_mse > 10.0 * initial_valid_mse {
            return Err(Error::Diverged {
                epoch,
                valid_mse,
                initial_mse: initial_valid_mse,
            });
        }
        if valid_mse < best.2 {
            best = (params.clone(), epoch, valid_mse);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        params: best.0,
        trace,
        best_epoch: best.1,
        best_valid_mse: best.2,
        initial_valid_mse,
    })
}
