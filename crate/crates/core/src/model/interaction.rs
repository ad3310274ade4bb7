use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::ModelParams;
use crate::error::{Error, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact GELU, `0.5 x (1 + erf(x / sqrt 2))`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

pub fn gelu_derivative(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2)) + x * FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Interaction features and predictions for a batch of (user, item) pairs.
#[derive(Clone, Debug)]
pub struct Interaction {
    pub users: Vec<usize>,
    pub items: Vec<usize>,
    input: Array2<f64>,
    z1: Array2<f64>,
    a1: Array2<f64>,
    z2: Array2<f64>,
    /// `B x d` interaction features.
    pub features: Array2<f64>,
    /// Unclamped predicted ratings.
    pub predictions: Array1<f64>,
}

/// Gradients flowing out of the interaction model into the node embeddings.
pub struct InteractionGrad {
    pub users: Array2<f64>,
    pub items: Array2<f64>,
}

impl Interaction {
    /// `h = GELU(W2 GELU(W1 [u; v] + b1) + b2)` and `r = w . h` (+ offsets when enabled).
    pub fn forward(
        params: &ModelParams,
        user_embeddings: ArrayView2<f64>,
        item_embeddings: ArrayView2<f64>,
        users: &[usize],
        items: &[usize],
    ) -> Result<Self> {
        let width = params.mlp_w1.ncols();
        if user_embeddings.ncols() + item_embeddings.ncols() != width {
            return Err(Error::DimensionMismatch {
                expected: width,
                got: user_embeddings.ncols() + item_embeddings.ncols(),
            });
        }
        assert_eq!(users.len(), items.len());
        let input = ndarray::concatenate(
            Axis(1),
            &[user_embeddings.select(Axis(0), users).view(), item_embeddings.select(Axis(0), items).view()],
        )
        .expect("equal batch sizes");
        let z1 = input.dot(&params.mlp_w1.t()) + &params.mlp_b1;
        let a1 = z1.mapv(gelu);
        let z2 = a1.dot(&params.mlp_w2.t()) + &params.mlp_b2;
        let features = z2.mapv(gelu);
        let mut predictions = features.dot(&params.predict);
        if let Some(b) = &params.bias {
            for (k, p) in predictions.iter_mut().enumerate() {
                *p += b.global[0] + b.user[users[k]] + b.item[items[k]];
            }
        }
        Ok(Self {
            users: users.to_vec(),
            items: items.to_vec(),
            input,
            z1,
            a1,
            z2,
            features,
            predictions,
        })
    }

    /// Backpropagate `d_predictions` (per pair) and `d_features` (per pair,
    /// optional) into `grads`, returning gradients for the full embedding tables
    /// of width `W`.
    pub fn backward(
        &self,
        params: &ModelParams,
        d_predictions: ArrayView1<f64>,
        d_features: Option<ArrayView2<f64>>,
        num_users: usize,
        num_items: usize,
        grads: &mut ModelParams,
    ) -> InteractionGrad {
        grads.predict += &self.features.t().dot(&d_predictions);
        if let (Some(gb), true) = (&mut grads.bias, params.bias.is_some()) {
            for (k, g) in d_predictions.iter().enumerate() {
                gb.global[0] += g;
                gb.user[self.users[k]] += g;
                gb.item[self.items[k]] += g;
            }
        }
        let mut d_h = d_predictions.insert_axis(Axis(1)).dot(&params.predict.view().insert_axis(Axis(0)));
        if let Some(extra) = d_features {
            d_h += &extra;
        }
        let mut d_z2 = d_h;
        d_z2.zip_mut_with(&self.z2, |g, z| *g *= gelu_derivative(*z));
        grads.mlp_w2 += &d_z2.t().dot(&self.a1);
        grads.mlp_b2 += &d_z2.sum_axis(Axis(0));
        let mut d_z1 = d_z2.dot(&params.mlp_w2);
        d_z1.zip_mut_with(&self.z1, |g, z| *g *= gelu_derivative(*z));
        grads.mlp_w1 += &d_z1.t().dot(&self.input);
        grads.mlp_b1 += &d_z1.sum_axis(Axis(0));
        let d_input = d_z1.dot(&params.mlp_w1);

        let w = d_input.ncols() / 2;
        let mut users = Array2::zeros((num_users, w));
        let mut items = Array2::zeros((num_items, w));
        for (k, row) in d_input.axis_iter(Axis(0)).enumerate() {
            let mut u = users.row_mut(self.users[k]);
            u += &row.slice(ndarray::s![..w]);
            let mut v = items.row_mut(self.items[k]);
            v += &row.slice(ndarray::s![w..]);
        }
        InteractionGrad { users, items }
    }
}

/// `w . h` for one interaction feature.
pub fn predict_rating(params: &ModelParams, features: ArrayView1<f64>) -> f64 {
    params.predict.dot(&features)
}
