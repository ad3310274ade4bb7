use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, IoContext, Result};
use crate::losses::LossForm;
use crate::model::{FinalEmbedding, MessageVariant, ModelShape, Variant};

/// How the Node Discrimination views are generated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NdViews {
    /// One pair, both node sides dropped, serves the user and item losses.
    #[default]
    Shared,
    /// The user loss uses a pair that drops only items, the item loss a pair
    /// that drops only users.
    PerSide,
}

impl NdViews {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Shared => "shared",
            Self::PerSide => "per_side",
        }
    }
}

impl std::str::FromStr for NdViews {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared" => Ok(Self::Shared),
            "per_side" => Ok(Self::PerSide),
            other => Err(Error::Config(format!("unknown nd_views {other:?}"))),
        }
    }
}

/// Every hyperparameter of a training run. Serialized as flat `key = value` text.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub layers: usize,
    /// Weight of Edge Discrimination.
    pub alpha: f64,
    /// Weight of Node Discrimination.
    pub beta: f64,
    pub keep_prob_users: f64,
    pub keep_prob_items: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub message: MessageVariant,
    pub final_embedding: FinalEmbedding,
    pub loss_form: LossForm,
    /// Clamp predictions to the rating range when evaluating.
    pub clamp_eval: bool,
    /// When false the contrastive paths (augmentation, negatives, ND/ED) never run.
    pub contrastive: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub weight_decay: f64,
    pub use_bias: bool,
    pub separate_aggregation: bool,
    pub nd_views: NdViews,
    /// Draw a fresh augmentation pair for every minibatch instead of every epoch.
    pub resample_per_batch: bool,
    /// Take Node Discrimination anchors from the second view instead of the first.
    pub nd_swap_views: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            layers: 1,
            alpha: 0.8,
            beta: 0.2,
            keep_prob_users: 0.4,
            keep_prob_items: 0.4,
            learning_rate: 1e-3,
            batch_size: 1024,
            max_epochs: 200,
            patience: 5,
            seed: 0,
            message: MessageVariant::Full,
            final_embedding: FinalEmbedding::LastLayer,
            loss_form: LossForm::Bce,
            clamp_eval: false,
            contrastive: true,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            weight_decay: 0.0,
            use_bias: false,
            separate_aggregation: false,
            nd_views: NdViews::Shared,
            resample_per_batch: false,
            nd_swap_views: false,
        }
    }
}

/// Candidate values for the contrastive weights.
pub const ALPHA_GRID: [f64; 6] = [0.2, 0.4, 0.6, 0.8, 1.0, 2.0];
pub const BETA_GRID: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("bad value {value:?} for {key}: {e}")))
}

impl TrainConfig {
    pub fn variant(&self) -> Variant {
        Variant {
            message: self.message,
            layers: self.layers,
            final_embedding: self.final_embedding,
        }
    }

    pub fn model_shape(&self, num_users: usize, num_items: usize, num_ratings: usize) -> ModelShape {
        ModelShape {
            num_users,
            num_items,
            num_ratings,
            dim: self.dim,
            variant: self.variant(),
            separate_aggregation: self.separate_aggregation,
            use_bias: self.use_bias,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.dim == 0 || self.layers == 0 {
            return fail("dim and layers must be positive".into());
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("weight_decay", self.weight_decay)] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} = {v} must be a non-negative number"));
            }
        }
        for (name, p) in [("keep_prob_users", self.keep_prob_users), ("keep_prob_items", self.keep_prob_items)] {
            if !(p > 0.0 && p <= 1.0) {
                return fail(format!("{name} = {p} must lie in (0, 1]"));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) || !(self.adam_epsilon > 0.0) {
            return fail("learning_rate and adam_epsilon must be positive".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return fail("adam betas must lie in [0, 1)".into());
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return fail("batch_size, max_epochs and patience must be positive".into());
        }
        Ok(())
    }

    /// Echo as ordered key/value pairs.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("dim", self.dim.to_string()),
            ("layers", self.layers.to_string()),
            ("alpha", self.alpha.to_string()),
            ("beta", self.beta.to_string()),
            ("keep_prob_users", self.keep_prob_users.to_string()),
            ("keep_prob_items", self.keep_prob_items.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("seed", self.seed.to_string()),
            ("message", self.message.as_str().to_string()),
            ("final_embedding", self.final_embedding.as_str().to_string()),
            ("loss_form", self.loss_form.as_str().to_string()),
            ("clamp_eval", self.clamp_eval.to_string()),
            ("contrastive", self.contrastive.to_string()),
            ("adam_beta1", self.adam_beta1.to_string()),
            ("adam_beta2", self.adam_beta2.to_string()),
            ("adam_epsilon", self.adam_epsilon.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("use_bias", self.use_bias.to_string()),
            ("separate_aggregation", self.separate_aggregation.to_string()),
            ("nd_views", self.nd_views.as_str().to_string()),
            ("resample_per_batch", self.resample_per_batch.to_string()),
            ("nd_swap_views", self.nd_swap_views.to_string()),
        ]
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        self.to_pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.to_pairs() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Set one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dim" => self.dim = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "keep_prob_users" => self.keep_prob_users = parse(key, value)?,
            "keep_prob_items" => self.keep_prob_items = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "message" => self.message = value.parse()?,
            "final_embedding" => self.final_embedding = value.parse()?,
            "loss_form" => self.loss_form = value.parse()?,
            "clamp_eval" => self.clamp_eval = parse(key, value)?,
            "contrastive" => self.contrastive = parse(key, value)?,
            "adam_beta1" => self.adam_beta1 = parse(key, value)?,
            "adam_beta2" => self.adam_beta2 = parse(key, value)?,
            "adam_epsilon" => self.adam_epsilon = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "use_bias" => self.use_bias = parse(key, value)?,
            "separate_aggregation" => self.separate_aggregation = parse(key, value)?,
            "nd_views" => self.nd_views = value.parse()?,
            "resample_per_batch" => self.resample_per_batch = parse(key, value)?,
            "nd_swap_views" => self.nd_swap_views = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Parse `key = value` lines over the defaults; `#` starts a comment.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                message: format!("expected `key = value`, got {raw:?}"),
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_config_str(&fs::read_to_string(path).at(path)?)
    }
}
