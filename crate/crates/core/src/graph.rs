//! Rating-typed bipartite review graph over training edges, and node-drop
//! augmentation.

use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Corpus, DatasetSplit, RatingScale};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edge {
    pub edge_id: usize,
    pub user: usize,
    pub item: usize,
    /// Zero-based rating bucket.
    pub rating: usize,
}

/// Compressed incidence lists: `offsets[n]..offsets[n + 1]` indexes `entries`.
#[derive(Clone, Debug, PartialEq)]
struct Incidence {
    offsets: Vec<usize>,
    entries: Vec<usize>,
}

impl Incidence {
    fn build(num_nodes: usize, edges: &[Edge], node_of: impl Fn(&Edge) -> usize) -> Self {
        let mut offsets = vec![0; num_nodes + 1];
        for e in edges {
            offsets[node_of(e) + 1] += 1;
        }
        for n in 0..num_nodes {
            offsets[n + 1] += offsets[n];
        }
        let mut cursor = offsets.clone();
        let mut entries = vec![0; edges.len()];
        // edges are sorted by edge_id, so each list comes out ascending
        for (k, e) in edges.iter().enumerate() {
            let n = node_of(e);
            entries[cursor[n]] = k;
            cursor[n] += 1;
        }
        Self { offsets, entries }
    }

    fn of(&self, node: usize) -> &[usize] {
        &self.entries[self.offsets[node]..self.offsets[node + 1]]
    }
}

/// Bipartite user-item graph whose edges carry a rating type and a frozen review feature.
#[derive(Clone, Debug)]
pub struct ReviewGraph {
    num_users: usize,
    num_items: usize,
    scale: RatingScale,
    edges: Vec<Edge>,
    by_rating: Vec<Vec<usize>>,
    user_adj: Incidence,
    item_adj: Incidence,
    features: Arc<Array2<f64>>,
}

impl PartialEq for ReviewGraph {
    fn eq(&self, other: &Self) -> bool {
        self.num_users == other.num_users
            && self.num_items == other.num_items
            && self.scale == other.scale
            && self.edges == other.edges
            && Arc::ptr_eq(&self.features, &other.features)
    }
}

impl ReviewGraph {
    /// Graph from an explicit edge list `(edge_id, user, item, rating value)`.
    ///
    /// `features` is indexed by `edge_id`.
    pub fn from_edges(
        num_users: usize,
        num_items: usize,
        scale: RatingScale,
        edges: impl IntoIterator<Item = (usize, usize, usize, i32)>,
        features: Arc<Array2<f64>>,
    ) -> Result<Self> {
        let mut list = Vec::new();
        for (edge_id, user, item, rating) in edges {
            if user >= num_users || item >= num_items {
                return Err(Error::NodeOutOfRange {
                    edge_id,
                    message: format!("user {user} / item {item} with M={num_users}, N={num_items}"),
                });
            }
            if edge_id >= features.nrows() {
                return Err(Error::NodeOutOfRange {
                    edge_id,
                    message: format!("no review feature row (table has {})", features.nrows()),
                });
            }
            let rating = scale.index(rating).ok_or(Error::UnknownRating(rating))?;
            list.push(Edge {
                edge_id,
                user,
                item,
                rating,
            });
        }
        list.sort_by_key(|e| e.edge_id);
        if list.windows(2).any(|w| w[0].edge_id == w[1].edge_id) {
            return Err(Error::Invalid("duplicate edge id in graph".into()));
        }
        Ok(Self::assemble(num_users, num_items, scale, list, features))
    }

    fn assemble(
        num_users: usize,
        num_items: usize,
        scale: RatingScale,
        edges: Vec<Edge>,
        features: Arc<Array2<f64>>,
    ) -> Self {
        let mut by_rating = vec![Vec::new(); scale.len()];
        for (k, e) in edges.iter().enumerate() {
            by_rating[e.rating].push(k);
        }
        let user_adj = Incidence::build(num_users, &edges, |e| e.user);
        let item_adj = Incidence::build(num_items, &edges, |e| e.item);
        Self {
            num_users,
            num_items,
            scale,
            edges,
            by_rating,
            user_adj,
            item_adj,
            features,
        }
    }

    /// Training graph: only `split.train` edges enter propagation.
    pub fn build(corpus: &Corpus, split: &DatasetSplit, features: Arc<Array2<f64>>) -> Result<Self> {
        if features.nrows() != corpus.num_edges() {
            return Err(Error::RowCountMismatch {
                expected: corpus.num_edges(),
                got: features.nrows(),
            });
        }
        let edges = split.train.iter().map(|&k| {
            let r = &corpus.records[k];
            (r.edge_id, r.user_idx, r.item_idx, r.rating)
        });
        Self::from_edges(corpus.num_users, corpus.num_items, corpus.scale, edges, features)
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn scale(&self) -> RatingScale {
        self.scale
    }

    pub fn num_ratings(&self) -> usize {
        self.scale.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Positions (into [`Self::edges`]) of the edges with rating bucket `r`.
    pub fn rating_bucket(&self, r: usize) -> &[usize] {
        &self.by_rating[r]
    }

    /// Edge positions incident to `user`, ascending by edge id.
    pub fn user_edges(&self, user: usize) -> &[usize] {
        self.user_adj.of(user)
    }

    pub fn item_edges(&self, item: usize) -> &[usize] {
        self.item_adj.of(item)
    }

    /// `|N_i|` over all ratings.
    pub fn user_degree(&self, user: usize) -> usize {
        self.user_adj.of(user).len()
    }

    pub fn item_degree(&self, item: usize) -> usize {
        self.item_adj.of(item).len()
    }

    /// `|N_{i,r}|`.
    pub fn user_rating_degree(&self, user: usize, r: usize) -> usize {
        self.user_edges(user).iter().filter(|&&k| self.edges[k].rating == r).count()
    }

    pub fn item_rating_degree(&self, item: usize, r: usize) -> usize {
        self.item_edges(item).iter().filter(|&&k| self.edges[k].rating == r).count()
    }

    /// `1 / sqrt(|N_i| |N_j|)` for the edge at position `k`.
    pub fn normalizer(&self, k: usize) -> f64 {
        let e = &self.edges[k];
        1.0 / ((self.user_degree(e.user) * self.item_degree(e.item)) as f64).sqrt()
    }

    pub fn features(&self) -> &Arc<Array2<f64>> {
        &self.features
    }

    /// Review feature of the edge at position `k`.
    pub fn feature(&self, k: usize) -> ndarray::ArrayView1<'_, f64> {
        self.features.row(self.edges[k].edge_id)
    }

    /// Subgraph keeping the edges whose two endpoints are both kept; degrees are
    /// recomputed from the retained edges.
    pub fn induced(&self, user_keep: &[bool], item_keep: &[bool]) -> Self {
        let edges = self
            .edges
            .iter()
            .filter(|e| user_keep[e.user] && item_keep[e.item])
            .copied()
            .collect();
        Self::assemble(self.num_users, self.num_items, self.scale, edges, self.features.clone())
    }
}

/// Two independently node-dropped views of one graph.
#[derive(Clone, Debug)]
pub struct AugmentedGraphPair {
    pub first: ReviewGraph,
    pub second: ReviewGraph,
    pub user_masks: [Vec<bool>; 2],
    pub item_masks: [Vec<bool>; 2],
    pub seed: u64,
}

fn check_keep(p: f64, side: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("keep_prob_{side} = {p} outside [0, 1]")));
    }
    Ok(())
}

/// Keep every node independently with its side's probability, separately in
/// each of the two views.
pub fn node_drop(graph: &ReviewGraph, keep_users: f64, keep_items: f64, seed: u64) -> Result<AugmentedGraphPair> {
    check_keep(keep_users, "users")?;
    check_keep(keep_items, "items")?;
    if keep_users == 0.0 && keep_items == 0.0 {
        return Err(Error::Config("keep probability is zero on both sides (empty graph)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize, p: f64| -> Vec<bool> { (0..n).map(|_| rng.random::<f64>() < p).collect() };
    let u1 = draw(graph.num_users, keep_users);
    let i1 = draw(graph.num_items, keep_items);
    let u2 = draw(graph.num_users, keep_users);
    let i2 = draw(graph.num_items, keep_items);
    Ok(AugmentedGraphPair {
        first: graph.induced(&u1, &i1),
        second: graph.induced(&u2, &i2),
        user_masks: [u1, u2],
        item_masks: [i1, i2],
        seed,
    })
}
