//! Planted-factor rating data with informative review features.

use ndarray::{Array1, Array2, Axis};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::data::{k_core_mask, split, Corpus, InteractionRecord, RatingScale, DEFAULT_FRACTIONS};
use crate::dataset::Dataset;
use crate::embed::WhitenTransform;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub factor_dim: usize,
    pub ratings_per_user: usize,
    /// Scale applied to the factor dot product.
    pub affinity_scale: f64,
    /// Standard deviation of user and item offsets.
    pub offset_std: f64,
    /// Rating noise standard deviation.
    pub noise: f64,
    pub raw_dim: usize,
    /// Standard deviation of review noise per raw component.
    pub review_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_users: 200,
            num_items: 150,
            factor_dim: 8,
            ratings_per_user: 30,
            affinity_scale: 1.0,
            offset_std: 0.5,
            noise: 0.3,
            raw_dim: 96,
            review_noise: 0.3,
            seed: 0,
        }
    }
}

/// Ratings plus one raw review vector per edge.
#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub corpus: Corpus,
    pub raw_reviews: Array2<f64>,
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || std * rng.sample::<f64, _>(StandardNormal))
}

/// `rating = clip(round(3 + b_u + b_i + s * <p_u, q_i> + noise))`.
/// The raw review carries the centred latent score along a fixed direction and
/// the elementwise factor product through a fixed projection, plus noise.
pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    if cfg.ratings_per_user > cfg.num_items || cfg.raw_dim < cfg.factor_dim + 1 {
        return Err(Error::Config("synthetic shape is inconsistent".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = cfg.factor_dim;
    // per-component std k^(-1/4) gives a unit-variance dot product
    let comp = (k as f64).powf(-0.25);
    let p = gaussian(&mut rng, cfg.num_users, k, comp);
    let q = gaussian(&mut rng, cfg.num_items, k, comp);
    let bu = gaussian(&mut rng, cfg.num_users, 1, cfg.offset_std);
    let bi = gaussian(&mut rng, cfg.num_items, 1, cfg.offset_std);
    let mut direction: Array1<f64> = (0..cfg.raw_dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    direction /= direction.dot(&direction).sqrt();
    let projection = gaussian(&mut rng, k, cfg.raw_dim, 1.0 / (cfg.raw_dim as f64).sqrt());
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::Config(e.to_string()))?;
    let scale = RatingScale::default();

    let mut pairs = Vec::new();
    let mut scores = Vec::new();
    let mut products = Vec::new();
    for u in 0..cfg.num_users {
        let mut items = sample(&mut rng, cfg.num_items, cfg.ratings_per_user).into_vec();
        items.sort_unstable();
        for i in items {
            let prod = &p.row(u) * &q.row(i);
            let latent = bu[[u, 0]] + bi[[i, 0]] + cfg.affinity_scale * prod.sum() + noise.sample(&mut rng);
            pairs.push((u, i));
            scores.push(latent);
            products.push(prod);
        }
    }
    if k_core_mask(&pairs, 5).iter().any(|keep| !keep) {
        return Err(Error::Config("synthetic corpus is not 5-core; raise ratings_per_user".into()));
    }

    let mut raw = Array2::zeros((pairs.len(), cfg.raw_dim));
    let mut records = Vec::with_capacity(pairs.len());
    for (e, ((&(u, i), &latent), prod)) in pairs.iter().zip(&scores).zip(&products).enumerate() {
        let rating = (3.0 + latent).round().clamp(scale.min as f64, scale.max as f64) as i32;
        let mut row = raw.row_mut(e);
        row.scaled_add(latent, &direction);
        row += &prod.dot(&projection);
        for v in row.iter_mut() {
            *v += cfg.review_noise * rng.sample::<f64, _>(StandardNormal);
        }
        records.push(InteractionRecord {
            edge_id: e,
            user_idx: u,
            item_idx: i,
            rating,
            review_text: String::new(),
        });
    }
    Ok(SyntheticData {
        corpus: Corpus {
            num_users: cfg.num_users,
            num_items: cfg.num_items,
            scale,
            records,
        },
        raw_reviews: raw,
    })
}

/// Generate, split with the same seed, and whiten reviews to `dim` on the training rows.
pub fn synthetic_dataset(cfg: &SyntheticConfig, dim: usize) -> Result<(Dataset, WhitenTransform)> {
    let data = generate(cfg)?;
    let split = split(data.corpus.num_edges(), cfg.seed, DEFAULT_FRACTIONS)?;
    let train_rows = data.raw_reviews.select(Axis(0), &split.train);
    let mut transform = WhitenTransform::fit(train_rows.view(), dim)?;
    transform.fitted_on = split.train.clone();
    let features = transform.apply_rows(data.raw_reviews.view())?;
    Ok((Dataset::new(data.corpus, split, features)?, transform))
}
