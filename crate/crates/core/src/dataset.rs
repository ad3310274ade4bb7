use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;

use crate::data::{Corpus, DatasetSplit};
use crate::embed::ReviewEmbeddingTable;
use crate::error::{Error, Result};
use crate::graph::ReviewGraph;

/// File names inside a prepared data directory.
pub const INTERACTIONS_FILE: &str = "interactions.tsv";
pub const SPLIT_FILE: &str = "split.txt";
pub const EMBEDDINGS_FILE: &str = "reviews.rgeb";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Train,
    Valid,
    Test,
}

impl Part {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Valid => "valid",
            Self::Test => "test",
        }
    }
}

impl std::str::FromStr for Part {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "valid" => Ok(Self::Valid),
            "test" => Ok(Self::Test),
            other => Err(Error::Config(format!("unknown split part {other:?}"))),
        }
    }
}

/// A rating to predict.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Target {
    pub edge_id: usize,
    pub user: usize,
    pub item: usize,
    pub rating: f64,
}

/// Corpus, split, frozen review features, and the training graph built from them.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub corpus: Corpus,
    pub split: DatasetSplit,
    pub graph: ReviewGraph,
}

impl Dataset {
    pub fn new(corpus: Corpus, split: DatasetSplit, features: Array2<f64>) -> Result<Self> {
        if split.num_edges() != corpus.num_edges() {
            return Err(Error::InvalidSplit(format!(
                "split covers {} edges, corpus has {}",
                split.num_edges(),
                corpus.num_edges()
            )));
        }
        let graph = ReviewGraph::build(&corpus, &split, Arc::new(features))?;
        Ok(Self { corpus, split, graph })
    }

    pub fn from_table(corpus: Corpus, split: DatasetSplit, table: &ReviewEmbeddingTable) -> Result<Self> {
        Self::new(corpus, split, table.to_f64())
    }

    /// Load `interactions.tsv`, `split.txt` and `reviews.rgeb` from `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let corpus = Corpus::read(&dir.join(INTERACTIONS_FILE))?;
        let split = DatasetSplit::read(&dir.join(SPLIT_FILE))?;
        let table = ReviewEmbeddingTable::read(&dir.join(EMBEDDINGS_FILE))?;
        Self::from_table(corpus, split, &table)
    }

    pub fn edge_ids(&self, part: Part) -> &[usize] {
        match part {
            Part::Train => &self.split.train,
            Part::Valid => &self.split.valid,
            Part::Test => &self.split.test,
        }
    }

    pub fn targets(&self, part: Part) -> Vec<Target> {
        self.edge_ids(part)
            .iter()
            .map(|&k| {
                let r = &self.corpus.records[k];
                Target {
                    edge_id: k,
                    user: r.user_idx,
                    item: r.item_idx,
                    rating: r.rating as f64,
                }
            })
            .collect()
    }

    /// Training-interaction count of every user.
    pub fn user_train_counts(&self) -> Vec<usize> {
        (0..self.graph.num_users()).map(|u| self.graph.user_degree(u)).collect()
    }

    /// Mean training rating.
    pub fn global_mean(&self) -> f64 {
        let base = self.graph.scale().min as f64;
        let e = self.graph.edges();
        e.iter().map(|x| base + x.rating as f64).sum::<f64>() / e.len() as f64
    }
}
