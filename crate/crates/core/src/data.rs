//! Corpus ingestion, the canonical interaction file, and train/valid/test splits.
//!
//! Raw corpora arrive as JSON-lines (one review per line). Ingestion resolves
//! duplicate (user, item) pairs, applies iterative k-core filtering on the full
//! dataset, assigns dense indices in first-appearance order and produces a
//! [`Corpus`] whose records are addressed by a contiguous `edge_id`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use crate::error::{Error, IoContext, Result};

/// Contiguous integer rating set `{min, ..., max}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RatingScale {
    pub min: i32,
    pub max: i32,
}

impl RatingScale {
    pub fn new(min: i32, max: i32) -> Result<Self> {
        if min > max {
            return Err(Error::Config(format!("empty rating set [{min}, {max}]")));
        }
        Ok(Self { min, max })
    }

    /// Number of distinct rating values (edge types).
    pub fn len(&self) -> usize {
        (self.max - self.min + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, rating: i32) -> bool {
        (self.min..=self.max).contains(&rating)
    }

    /// Zero-based bucket of a rating value.
    pub fn index(&self, rating: i32) -> Option<usize> {
        self.contains(rating).then(|| (rating - self.min) as usize)
    }

    pub fn values(&self) -> impl Iterator<Item = i32> {
        self.min..=self.max
    }
}

impl Default for RatingScale {
    fn default() -> Self {
        Self { min: 1, max: 5 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InteractionRecord {
    pub edge_id: usize,
    pub user_idx: usize,
    pub item_idx: usize,
    pub rating: i32,
    pub review_text: String,
}

/// The canonical, densely indexed interaction set.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub num_users: usize,
    pub num_items: usize,
    pub scale: RatingScale,
    pub records: Vec<InteractionRecord>,
}

/// Raw string ids in dense index order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IdMaps {
    pub users: Vec<String>,
    pub items: Vec<String>,
}

/// JSON keys holding the user, item, rating, and review text.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldMap {
    pub user: String,
    pub item: String,
    pub rating: String,
    pub review: String,
}

impl Default for FieldMap {
    fn default() -> Self {
        Self {
            user: "reviewerID".into(),
            item: "asin".into(),
            rating: "overall".into(),
            review: "reviewText".into(),
        }
    }
}

struct RawRecord {
    user: String,
    item: String,
    rating: i32,
    review: String,
}

fn id_string(value: &Value) -> Option<String> {
    match value {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn rating_value(value: &Value) -> Option<f64> {
    match value {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn parse_line(line: &str, lineno: usize, fields: &FieldMap, scale: RatingScale) -> Result<RawRecord> {
    let parse_err = |message: String| Error::Parse {
        line: lineno,
        message,
    };
    let value: Value =
        serde_json::from_str(line).map_err(|e| parse_err(format!("malformed JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| parse_err("record is not a JSON object".into()))?;
    let get_id = |key: &str| {
        obj.get(key)
            .and_then(id_string)
            .ok_or_else(|| parse_err(format!("missing or non-scalar field {key:?}")))
    };
    let user = get_id(&fields.user)?;
    let item = get_id(&fields.item)?;
    let raw_rating = obj
        .get(&fields.rating)
        .and_then(rating_value)
        .ok_or_else(|| parse_err(format!("missing or non-numeric field {:?}", fields.rating)))?;
    let rounded = raw_rating.round();
    if !rounded.is_finite() || !scale.contains(rounded as i32) || rounded.abs() > i32::MAX as f64 {
        return Err(Error::RatingOutOfRange {
            line: lineno,
            rating: raw_rating,
            min: scale.min,
            max: scale.max,
        });
    }
    let review = match obj.get(&fields.review) {
        Some(Value::String(s)) => s.clone(),
        _ => String::new(),
    };
    Ok(RawRecord {
        user,
        item,
        rating: rounded as i32,
        review,
    })
}

/// Iterative k-core filter over (user, item) pairs.
///
/// Returns a keep-mask such that every user and item with a kept pair has at
/// least `min_core` kept pairs, and the kept set is the largest such subset.
pub fn k_core_mask<U, I>(pairs: &[(U, I)], min_core: usize) -> Vec<bool>
where
    U: std::hash::Hash + Eq + Clone,
    I: std::hash::Hash + Eq + Clone,
{
    let mut keep = vec![true; pairs.len()];
    if min_core <= 1 {
        return keep;
    }
    loop {
        let mut user_count: HashMap<&U, usize> = HashMap::new();
        let mut item_count: HashMap<&I, usize> = HashMap::new();
        for ((u, i), _) in pairs.iter().zip(&keep).filter(|(_, k)| **k) {
            *user_count.entry(u).or_default() += 1;
            *item_count.entry(i).or_default() += 1;
        }
        let mut changed = false;
        for ((u, i), k) in pairs.iter().zip(keep.iter_mut()) {
            if *k && (user_count[u] < min_core || item_count[i] < min_core) {
                *k = false;
                changed = true;
            }
        }
        if !changed {
            return keep;
        }
    }
}

/// Ingest a JSON-lines corpus from a reader.
pub fn ingest_reader<R: BufRead>(
    reader: R,
    fields: &FieldMap,
    min_core: usize,
    scale: RatingScale,
) -> Result<(Corpus, IdMaps)> {
    let mut raw = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        raw.push(parse_line(&line, n + 1, fields, scale)?);
    }

    // Last occurrence of a (user, item) pair wins and keeps its position.
    let mut last: HashMap<(&str, &str), usize> = HashMap::new();
    for (pos, r) in raw.iter().enumerate() {
        last.insert((r.user.as_str(), r.item.as_str()), pos);
    }
    let deduped: Vec<&RawRecord> = raw
        .iter()
        .enumerate()
        .filter(|(pos, r)| last[&(r.user.as_str(), r.item.as_str())] == *pos)
        .map(|(_, r)| r)
        .collect();

    let pairs: Vec<(&str, &str)> = deduped
        .iter()
        .map(|r| (r.user.as_str(), r.item.as_str()))
        .collect();
    let keep = k_core_mask(&pairs, min_core);

    let mut ids = IdMaps::default();
    let mut user_idx: HashMap<&str, usize> = HashMap::new();
    let mut item_idx: HashMap<&str, usize> = HashMap::new();
    let mut records = Vec::new();
    for (r, _) in deduped.iter().zip(&keep).filter(|(_, k)| **k) {
        let u = *user_idx.entry(r.user.as_str()).or_insert_with(|| {
            ids.users.push(r.user.clone());
            ids.users.len() - 1
        });
        let i = *item_idx.entry(r.item.as_str()).or_insert_with(|| {
            ids.items.push(r.item.clone());
            ids.items.len() - 1
        });
        records.push(InteractionRecord {
            edge_id: records.len(),
            user_idx: u,
            item_idx: i,
            rating: r.rating,
            review_text: r.review.clone(),
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyAfterFiltering { min_core });
    }
    let corpus = Corpus {
        num_users: ids.users.len(),
        num_items: ids.items.len(),
        scale,
        records,
    };
    Ok((corpus, ids))
}

/// Ingest a JSON-lines file.
pub fn ingest(
    path: &Path,
    fields: &FieldMap,
    min_core: usize,
    scale: RatingScale,
) -> Result<(Corpus, IdMaps)> {
    let file = fs::File::open(path).at(path)?;
    ingest_reader(BufReader::new(file), fields, min_core, scale)
}

fn escape_review(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape_review(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

impl Corpus {
    pub fn num_edges(&self) -> usize {
        self.records.len()
    }

    /// Serialize to the canonical text format.
    pub fn to_canonical_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} {} {} {} {}",
            self.num_users,
            self.num_items,
            self.records.len(),
            self.scale.min,
            self.scale.max
        );
        for r in &self.records {
            let _ = writeln!(
                out,
                "{} {} {} {}\t{}",
                r.edge_id,
                r.user_idx,
                r.item_idx,
                r.rating,
                escape_review(&r.review_text)
            );
        }
        out
    }

    /// Parse the canonical text format, checking every record invariant.
    pub fn from_canonical_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::Parse {
            line: 1,
            message: "missing header".into(),
        })?;
        let head: Vec<i64> = header
            .split_whitespace()
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: 1,
                message: format!("bad header: {e}"),
            })?;
        if head.len() != 5 || head[..3].iter().any(|v| *v < 0) {
            return Err(Error::Parse {
                line: 1,
                message: "header must be `M N E rating_min rating_max`".into(),
            });
        }
        let (num_users, num_items, num_edges) = (head[0] as usize, head[1] as usize, head[2] as usize);
        let scale = RatingScale::new(head[3] as i32, head[4] as i32)?;

        let mut records = Vec::with_capacity(num_edges);
        let mut seen = std::collections::HashSet::new();
        for (n, line) in lines {
            let lineno = n + 1;
            let bad = |message: String| Error::Parse {
                line: lineno,
                message,
            };
            let (nums, review) = line
                .split_once('\t')
                .ok_or_else(|| bad("missing tab before review text".into()))?;
            let f: Vec<i64> = nums
                .split_whitespace()
                .map(|t| t.parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| bad(format!("bad integer: {e}")))?;
            if f.len() != 4 {
                return Err(bad("expected `edge_id user_idx item_idx rating`".into()));
            }
            let edge_id = f[0] as usize;
            if f[0] < 0 || edge_id != records.len() {
                return Err(bad(format!("edge_id {} is not contiguous", f[0])));
            }
            if f[1] < 0 || f[1] as usize >= num_users || f[2] < 0 || f[2] as usize >= num_items {
                return Err(Error::NodeOutOfRange {
                    edge_id,
                    message: format!("user {} / item {} with M={num_users}, N={num_items}", f[1], f[2]),
                });
            }
            let rating = f[3] as i32;
            if !scale.contains(rating) {
                return Err(Error::RatingOutOfRange {
                    line: lineno,
                    rating: f[3] as f64,
                    min: scale.min,
                    max: scale.max,
                });
            }
            if !seen.insert((f[1], f[2])) {
                return Err(bad(format!("duplicate pair ({}, {})", f[1], f[2])));
            }
            records.push(InteractionRecord {
                edge_id,
                user_idx: f[1] as usize,
                item_idx: f[2] as usize,
                rating,
                review_text: unescape_review(review),
            });
        }
        if records.len() != num_edges {
            return Err(Error::Parse {
                line: 1,
                message: format!("header declares {num_edges} edges, found {}", records.len()),
            });
        }
        Ok(Self {
            num_users,
            num_items,
            scale,
            records,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_canonical_string()).at(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_canonical_str(&fs::read_to_string(path).at(path)?)
    }
}

impl IdMaps {
    /// Writes `users.tsv` and `items.tsv` (`index<TAB>raw_id`) into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for (name, ids) in [("users.tsv", &self.users), ("items.tsv", &self.items)] {
            let mut out = String::new();
            for (idx, id) in ids.iter().enumerate() {
                let _ = writeln!(out, "{idx}\t{}", escape_review(id));
            }
            let path = dir.join(name);
            fs::write(&path, out).at(&path)?;
        }
        Ok(())
    }
}

/// Disjoint train/validation/test partition of edge ids.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
    pub fractions: [f64; 3],
}

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.8, 0.1, 0.1];

/// Shuffle edge ids with a seeded PRNG and cut them into three sets.
///
/// `|train| = round(f0 * E)`, `|valid| = round(f1 * E)`, test takes the rest.
pub fn split(num_edges: usize, seed: u64, fractions: [f64; 3]) -> Result<DatasetSplit> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::InvalidSplit(format!("fractions {fractions:?} outside [0, 1]")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidSplit(format!("fractions sum to {total}, not 1")));
    }
    if num_edges < 10 {
        return Err(Error::InvalidSplit(format!("need at least 10 edges, got {num_edges}")));
    }
    let mut ids: Vec<usize> = (0..num_edges).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let n_train = ((fractions[0] * num_edges as f64).round() as usize).min(num_edges);
    let n_valid = ((fractions[1] * num_edges as f64).round() as usize).min(num_edges - n_train);
    let mut train = ids[..n_train].to_vec();
    let mut valid = ids[n_train..n_train + n_valid].to_vec();
    let mut test = ids[n_train + n_valid..].to_vec();
    train.sort_unstable();
    valid.sort_unstable();
    test.sort_unstable();
    Ok(DatasetSplit {
        train,
        valid,
        test,
        seed,
        fractions,
    })
}

fn join_ids(ids: &[usize]) -> String {
    ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ")
}

impl DatasetSplit {
    pub fn num_edges(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }

    pub fn to_split_string(&self) -> String {
        format!(
            "seed: {}\ntrain: {}\nvalid: {}\ntest: {}\n",
            self.seed,
            join_ids(&self.train),
            join_ids(&self.valid),
            join_ids(&self.test)
        )
    }

    /// Parse a split file; the three sets must partition `0..E`.
    pub fn from_split_str(text: &str) -> Result<Self> {
        let mut seed = None;
        let mut sets: [Option<Vec<usize>>; 3] = [None, None, None];
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| Error::Parse {
                line: n + 1,
                message,
            };
            let (key, rest) = line
                .split_once(':')
                .ok_or_else(|| bad("expected `key: values`".into()))?;
            let slot = match key.trim() {
                "seed" => {
                    seed = Some(rest.trim().parse().map_err(|e| bad(format!("bad seed: {e}")))?);
                    continue;
                }
                "train" => 0,
                "valid" => 1,
                "test" => 2,
                other => return Err(bad(format!("unknown key {other:?}"))),
            };
            let ids = rest
                .split_whitespace()
                .map(|t| t.parse())
                .collect::<std::result::Result<Vec<usize>, _>>()
                .map_err(|e| bad(format!("bad edge id: {e}")))?;
            sets[slot] = Some(ids);
        }
        let [train, valid, test] = sets;
        let missing = |k: &str| Error::InvalidSplit(format!("missing `{k}:` line"));
        let train = train.ok_or_else(|| missing("train"))?;
        let valid = valid.ok_or_else(|| missing("valid"))?;
        let test = test.ok_or_else(|| missing("test"))?;
        let seed = seed.ok_or_else(|| missing("seed"))?;

        let total = train.len() + valid.len() + test.len();
        let mut seen = vec![false; total];
        for &id in train.iter().chain(&valid).chain(&test) {
            if id >= total || std::mem::replace(&mut seen[id], true) {
                return Err(Error::InvalidSplit(format!(
                    "edge id {id} is duplicated or out of range for {total} edges"
                )));
            }
        }
        let frac = |n: usize| n as f64 / total.max(1) as f64;
        let fractions = [frac(train.len()), frac(valid.len()), frac(test.len())];
        Ok(Self {
            train,
            valid,
            test,
            seed,
            fractions,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_split_string()).at(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_split_str(&fs::read_to_string(path).at(path)?)
    }

    /// Per-edge membership mask for the training set.
    pub fn train_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.num_edges()];
        for &id in &self.train {
            mask[id] = true;
        }
        mask
    }
}
