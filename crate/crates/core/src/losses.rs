//! Supervised and contrastive objectives.
//!
//! Both contrastive tasks score a pair with the bilinear similarity
//! `F(a, b) = sigmoid(a^T W b)`: Node Discrimination contrasts a node's
//! embeddings under two node-dropped views, Edge Discrimination contrasts an
//! interaction feature with its own review feature.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::sigmoid;

/// Arguments of `log` are clamped to `[LOG_CLAMP, 1 - LOG_CLAMP]`.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LossForm {
    /// `-log F(pos) - log(1 - F(neg))`.
    #[default]
    Bce,
    /// `-log F(pos) + log F(neg)`, unbounded below.
    Literal,
}

impl LossForm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Bce => "bce",
            Self::Literal => "literal",
        }
    }
}

impl std::str::FromStr for LossForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bce" => Ok(Self::Bce),
            "literal" => Ok(Self::Literal),
            other => Err(Error::Config(format!("unknown loss form {other:?}"))),
        }
    }
}

pub fn similarity(a: ArrayView1<f64>, b: ArrayView1<f64>, w: ArrayView2<f64>) -> f64 {
    sigmoid(a.dot(&w.dot(&b)))
}

/// `log(clamp(p))` and its derivative with respect to `p` (zero when clamped).
fn clamped_log(p: f64) -> (f64, f64) {
    if p < LOG_CLAMP {
        (LOG_CLAMP.ln(), 0.0)
    } else if p > 1.0 - LOG_CLAMP {
        ((1.0 - LOG_CLAMP).ln(), 0.0)
    } else {
        (p.ln(), 1.0 / p)
    }
}

/// Loss of one (anchor, positive, negative) triple given the two bilinear
/// scores, with derivatives with respect to those scores.
fn triple_loss(z_pos: f64, z_neg: f64, form: LossForm) -> (f64, f64, f64) {
    let f_pos = sigmoid(z_pos);
    let f_neg = sigmoid(z_neg);
    let (lp, dlp) = clamped_log(f_pos);
    let pos_value = -lp;
    let d_pos = -dlp * f_pos * (1.0 - f_pos);
    match form {
        LossForm::Bce => {
            let (ln_, dln) = clamped_log(1.0 - f_neg);
            (pos_value - ln_, d_pos, dln * f_neg * (1.0 - f_neg))
        }
        LossForm::Literal => {
            let (ln_, dln) = clamped_log(f_neg);
            (pos_value + ln_, d_pos, dln * f_neg * (1.0 - f_neg))
        }
    }
}

/// Mean contrastive loss over rows, with gradients.
#[derive(Clone, Debug)]
pub struct ContrastiveGrad {
    pub value: f64,
    pub d_anchor: Array2<f64>,
    pub d_positive: Array2<f64>,
    pub d_negative: Array2<f64>,
    pub d_weight: Array2<f64>,
}

/// Mean of the triple loss over aligned rows of `anchors`, `positives`, `negatives`.
pub fn contrastive(
    anchors: ArrayView2<f64>,
    positives: ArrayView2<f64>,
    negatives: ArrayView2<f64>,
    weight: ArrayView2<f64>,
    form: LossForm,
) -> ContrastiveGrad {
    let b = anchors.nrows();
    let mut out = ContrastiveGrad {
        value: 0.0,
        d_anchor: Array2::zeros(anchors.raw_dim()),
        d_positive: Array2::zeros(positives.raw_dim()),
        d_negative: Array2::zeros(negatives.raw_dim()),
        d_weight: Array2::zeros(weight.raw_dim()),
    };
    if b == 0 {
        return out;
    }
    let scale = 1.0 / b as f64;
    // W b and W^T a for every row
    let w_pos = positives.dot(&weight.t());
    let w_neg = negatives.dot(&weight.t());
    let wt_anchor = anchors.dot(&weight);
    for k in 0..b {
        let a = anchors.row(k);
        let z_pos = a.dot(&w_pos.row(k));
        let z_neg = a.dot(&w_neg.row(k));
        let (value, g_pos, g_neg) = triple_loss(z_pos, z_neg, form);
        out.value += value * scale;
        let (g_pos, g_neg) = (g_pos * scale, g_neg * scale);
        let mut da = out.d_anchor.row_mut(k);
        da.scaled_add(g_pos, &w_pos.row(k));
        da.scaled_add(g_neg, &w_neg.row(k));
        out.d_positive.row_mut(k).scaled_add(g_pos, &wt_anchor.row(k));
        out.d_negative.row_mut(k).scaled_add(g_neg, &wt_anchor.row(k));
    }
    // dW = sum_k g_pos a p^T + g_neg a n^T, done as two matrix products
    let mut coef_pos = Array2::zeros(anchors.raw_dim());
    let mut coef_neg = Array2::zeros(anchors.raw_dim());
    for k in 0..b {
        let a = anchors.row(k);
        let (_, g_pos, g_neg) = triple_loss(a.dot(&w_pos.row(k)), a.dot(&w_neg.row(k)), form);
        coef_pos.row_mut(k).scaled_add(g_pos * scale, &a);
        coef_neg.row_mut(k).scaled_add(g_neg * scale, &a);
    }
    out.d_weight = coef_pos.t().dot(&positives) + coef_neg.t().dot(&negatives);
    out
}

/// One side (users or items) of Node Discrimination, with gradients scattered
/// back to full per-view embedding tables.
#[derive(Clone, Debug)]
pub struct NodeDiscrimination {
    pub value: f64,
    pub d_first: Array2<f64>,
    pub d_second: Array2<f64>,
    pub d_weight: Array2<f64>,
}

/// Anchors come from `first`; positives are the same nodes in `second`,
/// negatives are other nodes in `second`.
pub fn node_discrimination(
    first: ArrayView2<f64>,
    second: ArrayView2<f64>,
    anchors: &[usize],
    negatives: &[usize],
    weight: ArrayView2<f64>,
    form: LossForm,
) -> NodeDiscrimination {
    let g = contrastive(
        first.select(Axis(0), anchors).view(),
        second.select(Axis(0), anchors).view(),
        second.select(Axis(0), negatives).view(),
        weight,
        form,
    );
    let mut d_first = Array2::zeros(first.raw_dim());
    let mut d_second = Array2::zeros(second.raw_dim());
    for (k, (&i, &n)) in anchors.iter().zip(negatives).enumerate() {
        let mut r = d_first.row_mut(i);
        r += &g.d_anchor.row(k);
        let mut r = d_second.row_mut(i);
        r += &g.d_positive.row(k);
        let mut r = d_second.row_mut(n);
        r += &g.d_negative.row(k);
    }
    NodeDiscrimination {
        value: g.value,
        d_first,
        d_second,
        d_weight: g.d_weight,
    }
}

/// Node Discrimination over users plus items.
#[allow(clippy::too_many_arguments)]
pub fn nd_loss(
    users_first: ArrayView2<f64>,
    users_second: ArrayView2<f64>,
    items_first: ArrayView2<f64>,
    items_second: ArrayView2<f64>,
    users: (&[usize], &[usize]),
    items: (&[usize], &[usize]),
    user_weight: ArrayView2<f64>,
    item_weight: ArrayView2<f64>,
    form: LossForm,
) -> f64 {
    node_discrimination(users_first, users_second, users.0, users.1, user_weight, form).value
        + node_discrimination(items_first, items_second, items.0, items.1, item_weight, form).value
}

/// Edge Discrimination: interaction features against their own review features
/// (positives) and randomly drawn ones (negatives).
pub fn ed_loss(
    features: ArrayView2<f64>,
    positives: ArrayView2<f64>,
    negatives: ArrayView2<f64>,
    weight: ArrayView2<f64>,
    form: LossForm,
) -> ContrastiveGrad {
    contrastive(features, positives, negatives, weight, form)
}

pub fn mse_loss(predictions: ArrayView1<f64>, ratings: ArrayView1<f64>) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    if predictions.len() != ratings.len() {
        return Err(Error::DimensionMismatch {
            expected: predictions.len(),
            got: ratings.len(),
        });
    }
    let sum: f64 = predictions.iter().zip(ratings).map(|(p, r)| (p - r) * (p - r)).sum();
    Ok(sum / predictions.len() as f64)
}

/// `L1 + alpha L2 + beta L3`.
pub fn total_loss(mse: f64, ed: f64, nd: f64, alpha: f64, beta: f64) -> f64 {
    mse + alpha * ed + beta * nd
}

/// For each anchor, one uniform draw from `0..population` different from it.
pub fn sample_negatives<R: Rng>(anchors: &[usize], population: usize, rng: &mut R) -> Result<Vec<usize>> {
    if population < 2 {
        return Err(Error::Invalid(format!(
            "cannot draw a negative different from the anchor out of {population} candidates"
        )));
    }
    Ok(anchors
        .iter()
        .map(|&a| {
            // uniform over the population minus the anchor
            let k = rng.random_range(0..population - 1);
            if k >= a {
                k + 1
            } else {
                k
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::LN_2;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn similarity_cases() {
        let a = array![1.0, -2.0];
        let zero = Array2::zeros((2, 2));
        assert_eq!(similarity(a.view(), a.view(), zero.view()), 0.5);
        let one = array![[1.0]];
        let x = array![1.0];
        assert!((similarity(x.view(), x.view(), one.view()) - 0.731_058_578_630_004_9).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = rand_mat(&mut rng, 3, 3);
        let (p, q): (Array1<f64>, Array1<f64>) = (rand_mat(&mut rng, 1, 3).row(0).to_owned(), rand_mat(&mut rng, 1, 3).row(0).to_owned());
        let mut z = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                z += p[i] * w[[i, j]] * q[j];
            }
        }
        assert!((similarity(p.view(), q.view(), w.view()) - 1.0 / (1.0 + (-z).exp())).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_nd_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u1 = rand_mat(&mut rng, 4, 3);
        let u2 = rand_mat(&mut rng, 4, 3);
        let v1 = rand_mat(&mut rng, 3, 3);
        let v2 = rand_mat(&mut rng, 3, 3);
        let zero = Array2::zeros((3, 3));
        let users = ([0, 1, 2, 3].as_slice(), [1, 0, 3, 2].as_slice());
        let items = ([0, 2].as_slice(), [1, 1].as_slice());
        let bce = nd_loss(u1.view(), u2.view(), v1.view(), v2.view(), users, items, zero.view(), zero.view(), LossForm::Bce);
        assert!((bce - 4.0 * LN_2).abs() < 1e-12);
        let lit = nd_loss(u1.view(), u2.view(), v1.view(), v2.view(), users, items, zero.view(), zero.view(), LossForm::Literal);
        assert!(lit.abs() < 1e-12);
    }

    #[test]
    fn nd_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u1 = rand_mat(&mut rng, 4, 3);
        let u2 = rand_mat(&mut rng, 4, 3);
        let w = rand_mat(&mut rng, 3, 3);
        let anchors = [0, 1, 2, 3];
        let negs = [2, 3, 0, 1];
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let bil = |a: ArrayView1<f64>, b: ArrayView1<f64>| {
            let mut z = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    z += a[i] * w[[i, j]] * b[j];
                }
            }
            z
        };
        let mut want_bce = 0.0;
        let mut want_lit = 0.0;
        for k in 0..4 {
            let fp = sig(bil(u1.row(anchors[k]), u2.row(anchors[k])));
            let fn_ = sig(bil(u1.row(anchors[k]), u2.row(negs[k])));
            want_bce += (-fp.ln() - (1.0 - fn_).ln()) / 4.0;
            want_lit += (-fp.ln() + fn_.ln()) / 4.0;
        }
        let got = node_discrimination(u1.view(), u2.view(), &anchors, &negs, w.view(), LossForm::Bce);
        assert!((got.value - want_bce).abs() < 1e-12);
        let got = node_discrimination(u1.view(), u2.view(), &anchors, &negs, w.view(), LossForm::Literal);
        assert!((got.value - want_lit).abs() < 1e-12);
    }

    #[test]
    fn ed_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = rand_mat(&mut rng, 8, 3);
        let e = rand_mat(&mut rng, 8, 3);
        let n = rand_mat(&mut rng, 8, 3);
        let zero = Array2::zeros((3, 3));
        assert!((ed_loss(h.view(), e.view(), n.view(), zero.view(), LossForm::Bce).value - 2.0 * LN_2).abs() < 1e-12);

        // Positive equals negative: -log F - log(1 - F) >= 2 ln 2 with equality at F = 1/2.
        let w = rand_mat(&mut rng, 3, 3);
        let same = ed_loss(h.view(), e.view(), e.view(), w.view(), LossForm::Bce).value;
        assert!(same >= 2.0 * LN_2 - 1e-15);

        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let mut want = 0.0;
        for k in 0..8 {
            let zp = h.row(k).dot(&w.dot(&e.row(k)));
            let zn = h.row(k).dot(&w.dot(&n.row(k)));
            want += (-sig(zp).ln() - (1.0 - sig(zn)).ln()) / 8.0;
        }
        assert!((ed_loss(h.view(), e.view(), n.view(), w.view(), LossForm::Bce).value - want).abs() < 1e-12);
    }

    #[test]
    fn bce_decreases_as_negative_score_drops() {
        let mut last = f64::INFINITY;
        for step in 0..20 {
            let z_neg = 3.0 - step as f64 * 0.5;
            let (v, _, _) = triple_loss(1.0, z_neg, LossForm::Bce);
            assert!(v < last);
            assert!(v >= 0.0);
            last = v;
        }
    }

    #[test]
    fn clamped_log_has_zero_slope() {
        let (v, dp, dn) = triple_loss(-60.0, 60.0, LossForm::Bce);
        assert!((v + 2.0 * LOG_CLAMP.ln()).abs() < 1e-9);
        assert_eq!((dp, dn), (0.0, 0.0));
    }

    #[test]
    fn contrastive_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = rand_mat(&mut rng, 3, 2);
        let p = rand_mat(&mut rng, 3, 2);
        let n = rand_mat(&mut rng, 3, 2);
        let w = rand_mat(&mut rng, 2, 2);
        for form in [LossForm::Bce, LossForm::Literal] {
            let g = contrastive(a.view(), p.view(), n.view(), w.view(), form);
            let h = 1e-6;
            for idx in [(0, 0), (1, 1), (2, 0)] {
                let mut ap = a.clone();
                ap[idx] += h;
                let mut am = a.clone();
                am[idx] -= h;
                let fd = (contrastive(ap.view(), p.view(), n.view(), w.view(), form).value
                    - contrastive(am.view(), p.view(), n.view(), w.view(), form).value)
                    / (2.0 * h);
                assert!((fd - g.d_anchor[idx]).abs() < 1e-8);
            }
            for idx in [(0, 0), (0, 1), (1, 0)] {
                let mut wp = w.clone();
                wp[idx] += h;
                let mut wm = w.clone();
                wm[idx] -= h;
                let fd = (contrastive(a.view(), p.view(), n.view(), wp.view(), form).value
                    - contrastive(a.view(), p.view(), n.view(), wm.view(), form).value)
                    / (2.0 * h);
                assert!((fd - g.d_weight[idx]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn mse_cases() {
        let r = array![1.0, 4.0, 5.0];
        assert_eq!(mse_loss(r.view(), r.view()).unwrap(), 0.0);
        assert_eq!(mse_loss((&r + 1.0).view(), r.view()).unwrap(), 1.0);
        let p = array![0.5, 2.0, 7.0];
        let want = (0.25 + 4.0 + 4.0) / 3.0;
        assert!((mse_loss(p.view(), r.view()).unwrap() - want).abs() < 1e-12);
        let empty = Array1::<f64>::zeros(0);
        assert!(matches!(mse_loss(empty.view(), empty.view()), Err(Error::EmptyEvaluation)));
    }

    #[test]
    fn total_loss_cases() {
        assert_eq!(total_loss(0.7, 3.0, 9.0, 0.0, 0.0), 0.7);
        assert!((total_loss(1.0, 2.0, 3.0, 0.5, 0.1) - 2.3).abs() < 1e-15);
    }

    #[test]
    fn negatives_differ_from_anchors() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let anchors: Vec<usize> = (0..200).map(|k| k % 5).collect();
        let negs = sample_negatives(&anchors, 5, &mut rng).unwrap();
        assert!(anchors.iter().zip(&negs).all(|(a, n)| a != n && *n < 5));
        let hit: std::collections::HashSet<_> = negs.iter().collect();
        assert_eq!(hit.len(), 5);
        assert!(sample_negatives(&[0], 1, &mut rng).is_err());
    }
}
