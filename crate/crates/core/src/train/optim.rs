use rand::Rng;

use super::config::TrainConfig;
use crate::model::{ModelParams, ModelShape};

fn is_offset(name: &str) -> bool {
    name.starts_with("bias.") || name.starts_with("mlp.b")
}

/// Xavier-uniform weights, zero offsets. A vector of length `n` is treated as
/// an `n x 1` matrix.
pub fn init_params<R: Rng>(shape: ModelShape, rng: &mut R) -> ModelParams {
    let mut params = ModelParams::zeros(shape);
    for (name, mut t) in params.named_tensors_mut() {
        if is_offset(&name) {
            continue;
        }
        let fan = match t.shape() {
            [rows, cols] => rows + cols,
            [n] => n + 1,
            _ => unreachable!("tensors are 1-D or 2-D"),
        };
        let bound = (6.0 / fan as f64).sqrt();
        for v in t.iter_mut() {
            *v = rng.random_range(-bound..bound);
        }
    }
    params
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Coupled L2 penalty added to the gradient.
    pub weight_decay: f64,
}

impl From<&TrainConfig> for AdamConfig {
    fn from(c: &TrainConfig) -> Self {
        Self {
            learning_rate: c.learning_rate,
            beta1: c.adam_beta1,
            beta2: c.adam_beta2,
            epsilon: c.adam_epsilon,
            weight_decay: c.weight_decay,
        }
    }
}

/// First and second moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

pub fn adam_step(params: &mut ModelParams, grads: &ModelParams, state: &mut OptimizerState, cfg: &AdamConfig) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let tensors = params
        .named_tensors_mut()
        .into_iter()
        .zip(grads.named_tensors())
        .zip(state.m.named_tensors_mut().into_iter().zip(state.v.named_tensors_mut()));
    for (((_, mut p), (_, g)), ((_, mut m), (_, mut v))) in tensors {
        for (((p, &g), m), v) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
            let g = g + cfg.weight_decay * *p;
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}
