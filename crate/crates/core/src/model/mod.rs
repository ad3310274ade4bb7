//! Forward (and reverse-mode) computation of the review-gated graph recommender.
//!
//! One propagation layer sends, along every training edge `(i, j)` with rating
//! bucket `r`, the message
//!
//! ```text
//! x = c_ij * ( sigmoid(g1_r . e_ij) * T1_r e_ij  +  sigmoid(g2_r . e_ij) * T2_r src )
//! ```
//!
//! where `c_ij = 1 / sqrt(|N_i| |N_j|)` and `src` is the neighbor's embedding from
//! the previous layer. The same rating weights serve both directions. A node's
//! new embedding is `A * (sum of incoming messages)`.

mod interaction;
mod params;
mod propagate;

pub use interaction::{gelu, gelu_derivative, predict_rating, Interaction, InteractionGrad};
pub use params::{Biases, LayerParams, ModelParams, ModelShape, RatingWeights};
pub use propagate::{aggregate, pass_message, Direction, Propagation};

use crate::error::{Error, Result};

/// Which addends of the message survive.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MessageVariant {
    /// Gated review term plus gated neighbor term.
    #[default]
    Full,
    /// Reviews only gate the neighbor term; the review addend is dropped.
    WoReview,
    /// The neighbor gate is fixed to 1.
    WoWeight,
}

impl MessageVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::WoReview => "wo_review",
            Self::WoWeight => "wo_weight",
        }
    }

    pub fn uses_review_term(&self) -> bool {
        !matches!(self, Self::WoReview)
    }

    pub fn gates_neighbor(&self) -> bool {
        !matches!(self, Self::WoWeight)
    }
}

impl std::str::FromStr for MessageVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "wo_review" => Ok(Self::WoReview),
            "wo_weight" => Ok(Self::WoWeight),
            other => Err(Error::Config(format!("unknown message variant {other:?}"))),
        }
    }
}

/// How layer outputs become the final node embedding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FinalEmbedding {
    #[default]
    LastLayer,
    /// Concatenate layers `1..=L`, giving width `L * d`.
    ConcatLayers,
}

impl FinalEmbedding {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::LastLayer => "last_layer",
            Self::ConcatLayers => "concat_layers",
        }
    }
}

impl std::str::FromStr for FinalEmbedding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last_layer" => Ok(Self::LastLayer),
            "concat_layers" => Ok(Self::ConcatLayers),
            other => Err(Error::Config(format!("unknown final embedding {other:?}"))),
        }
    }
}

/// Architecture choice for the graph encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Variant {
    pub message: MessageVariant,
    pub layers: usize,
    pub final_embedding: FinalEmbedding,
}

impl Default for Variant {
    fn default() -> Self {
        Self {
            message: MessageVariant::Full,
            layers: 1,
            final_embedding: FinalEmbedding::LastLayer,
        }
    }
}

impl Variant {
    /// Width of the final node embedding for base dimension `dim`.
    pub fn output_width(&self, dim: usize) -> usize {
        match self.final_embedding {
            FinalEmbedding::LastLayer => dim,
            FinalEmbedding::ConcatLayers => dim * self.layers,
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
