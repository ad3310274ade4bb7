//! Initialization, exact gradients of the joint objective, Adam, and the epoch loop.

mod checkpoint;
mod config;
mod optim;
mod step;
mod trainer;

pub use checkpoint::Checkpoint;
pub use config::{NdViews, TrainConfig, ALPHA_GRID, BETA_GRID};
pub use optim::{adam_step, init_params, AdamConfig, OptimizerState};
pub use step::{compute_gradients, loss_value, LossBreakdown, NdTargets, StepBatch, ViewPairs};
pub use trainer::{train, train_observed, EpochRecord, TrainOutcome};

/// Independent random streams drawn from one run seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Augment = 3,
    Negatives = 4,
}

/// splitmix64 over (seed, stream, index).
pub fn derive_seed(seed: u64, stream: Stream, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add((stream as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(index.wrapping_mul(0xd1b5_4a32_d192_ed03));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
