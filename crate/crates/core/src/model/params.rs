use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};

use super::Variant;

/// Everything needed to allocate a [`ModelParams`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelShape {
    pub num_users: usize,
    pub num_items: usize,
    pub num_ratings: usize,
    pub dim: usize,
    pub variant: Variant,
    /// Separate aggregation matrices for the user and item side.
    pub separate_aggregation: bool,
    /// Global, user, and item offsets added to the prediction.
    pub use_bias: bool,
}

impl ModelShape {
    pub fn output_width(&self) -> usize {
        self.variant.output_width(self.dim)
    }
}

/// Gate vectors and transforms for one rating type at one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RatingWeights {
    pub gate_review: Array1<f64>,
    pub gate_neighbor: Array1<f64>,
    pub review_transform: Array2<f64>,
    pub neighbor_transform: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub ratings: Vec<RatingWeights>,
    pub aggregate: Array2<f64>,
    /// Item-side aggregation when it is not shared with the user side.
    pub aggregate_item: Option<Array2<f64>>,
}

impl LayerParams {
    pub fn item_aggregate(&self) -> &Array2<f64> {
        self.aggregate_item.as_ref().unwrap_or(&self.aggregate)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Biases {
    pub global: Array1<f64>,
    pub user: Array1<f64>,
    pub item: Array1<f64>,
}

/// All trainable tensors. Gradients and optimizer moments reuse this type.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub shape: ModelShape,
    pub user_embedding: Array2<f64>,
    pub item_embedding: Array2<f64>,
    pub layers: Vec<LayerParams>,
    /// `d x 2W` where `W` is the final embedding width.
    pub mlp_w1: Array2<f64>,
    pub mlp_b1: Array1<f64>,
    pub mlp_w2: Array2<f64>,
    pub mlp_b2: Array1<f64>,
    pub predict: Array1<f64>,
    /// Bilinear weights of the similarity functions.
    pub nd_user: Array2<f64>,
    pub nd_item: Array2<f64>,
    pub ed: Array2<f64>,
    pub bias: Option<Biases>,
}

impl ModelParams {
    pub fn zeros(shape: ModelShape) -> Self {
        let d = shape.dim;
        let w = shape.output_width();
        let layers = (0..shape.variant.layers)
            .map(|_| LayerParams {
                ratings: (0..shape.num_ratings)
                    .map(|_| RatingWeights {
                        gate_review: Array1::zeros(d),
                        gate_neighbor: Array1::zeros(d),
                        review_transform: Array2::zeros((d, d)),
                        neighbor_transform: Array2::zeros((d, d)),
                    })
                    .collect(),
                aggregate: Array2::zeros((d, d)),
                aggregate_item: shape.separate_aggregation.then(|| Array2::zeros((d, d))),
            })
            .collect();
        Self {
            shape,
            user_embedding: Array2::zeros((shape.num_users, d)),
            item_embedding: Array2::zeros((shape.num_items, d)),
            layers,
            mlp_w1: Array2::zeros((d, 2 * w)),
            mlp_b1: Array1::zeros(d),
            mlp_w2: Array2::zeros((d, d)),
            mlp_b2: Array1::zeros(d),
            predict: Array1::zeros(d),
            nd_user: Array2::zeros((w, w)),
            nd_item: Array2::zeros((w, w)),
            ed: Array2::zeros((d, d)),
            bias: shape.use_bias.then(|| Biases {
                global: Array1::zeros(1),
                user: Array1::zeros(shape.num_users),
                item: Array1::zeros(shape.num_items),
            }),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.shape)
    }

    /// Tensors in a fixed order under stable names.
    pub fn named_tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = vec![
            ("user_embedding".to_string(), self.user_embedding.view().into_dyn()),
            ("item_embedding".to_string(), self.item_embedding.view().into_dyn()),
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            for (r, w) in layer.ratings.iter().enumerate() {
                let p = format!("layer{}.r{r}", l + 1);
                out.push((format!("{p}.gate_review"), w.gate_review.view().into_dyn()));
                out.push((format!("{p}.gate_neighbor"), w.gate_neighbor.view().into_dyn()));
                out.push((format!("{p}.review_transform"), w.review_transform.view().into_dyn()));
                out.push((format!("{p}.neighbor_transform"), w.neighbor_transform.view().into_dyn()));
            }
            out.push((format!("layer{}.aggregate", l + 1), layer.aggregate.view().into_dyn()));
            if let Some(a) = &layer.aggregate_item {
                out.push((format!("layer{}.aggregate_item", l + 1), a.view().into_dyn()));
            }
        }
        out.push(("mlp.w1".into(), self.mlp_w1.view().into_dyn()));
        out.push(("mlp.b1".into(), self.mlp_b1.view().into_dyn()));
        out.push(("mlp.w2".into(), self.mlp_w2.view().into_dyn()));
        out.push(("mlp.b2".into(), self.mlp_b2.view().into_dyn()));
        out.push(("predict".into(), self.predict.view().into_dyn()));
        out.push(("nd_user".into(), self.nd_user.view().into_dyn()));
        out.push(("nd_item".into(), self.nd_item.view().into_dyn()));
        out.push(("ed".into(), self.ed.view().into_dyn()));
        if let Some(b) = &self.bias {
            out.push(("bias.global".into(), b.global.view().into_dyn()));
            out.push(("bias.user".into(), b.user.view().into_dyn()));
            out.push(("bias.item".into(), b.item.view().into_dyn()));
        }
        out
    }

    /// Mutable counterpart of [`Self::named_tensors`], same order.
    pub fn named_tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = vec![
            ("user_embedding".to_string(), self.user_embedding.view_mut().into_dyn()),
            ("item_embedding".to_string(), self.item_embedding.view_mut().into_dyn()),
        ];
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (r, w) in layer.ratings.iter_mut().enumerate() {
                let p = format!("layer{}.r{r}", l + 1);
                out.push((format!("{p}.gate_review"), w.gate_review.view_mut().into_dyn()));
                out.push((format!("{p}.gate_neighbor"), w.gate_neighbor.view_mut().into_dyn()));
                out.push((format!("{p}.review_transform"), w.review_transform.view_mut().into_dyn()));
                out.push((format!("{p}.neighbor_transform"), w.neighbor_transform.view_mut().into_dyn()));
            }
            out.push((format!("layer{}.aggregate", l + 1), layer.aggregate.view_mut().into_dyn()));
            if let Some(a) = &mut layer.aggregate_item {
                out.push((format!("layer{}.aggregate_item", l + 1), a.view_mut().into_dyn()));
            }
        }
        out.push(("mlp.w1".into(), self.mlp_w1.view_mut().into_dyn()));
        out.push(("mlp.b1".into(), self.mlp_b1.view_mut().into_dyn()));
        out.push(("mlp.w2".into(), self.mlp_w2.view_mut().into_dyn()));
        out.push(("mlp.b2".into(), self.mlp_b2.view_mut().into_dyn()));
        out.push(("predict".into(), self.predict.view_mut().into_dyn()));
        out.push(("nd_user".into(), self.nd_user.view_mut().into_dyn()));
        out.push(("nd_item".into(), self.nd_item.view_mut().into_dyn()));
        out.push(("ed".into(), self.ed.view_mut().into_dyn()));
        if let Some(b) = &mut self.bias {
            out.push(("bias.global".into(), b.global.view_mut().into_dyn()));
            out.push(("bias.user".into(), b.user.view_mut().into_dyn()));
            out.push(("bias.item".into(), b.item.view_mut().into_dyn()));
        }
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        self.named_tensors()
            .into_iter()
            .find(|(_, t)| t.iter().any(|v| !v.is_finite()))
            .map(|(name, _)| name)
    }

    /// Flat copy of every scalar, in [`Self::named_tensors`] order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.named_tensors().iter().flat_map(|(_, t)| t.iter().copied().collect::<Vec<_>>()).collect()
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for ((_, mut a), (_, b)) in self.named_tensors_mut().into_iter().zip(other.named_tensors()) {
            a.zip_mut_with(&b, |x, y| *x += scale * y);
        }
    }
}
