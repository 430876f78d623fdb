//! Dense neural-network core: batched forward/backward passes with exact
//! analytic gradients, optimizers, and checkpoint files.

mod checkpoint;
mod math;
mod network;
mod optimizer;

pub use checkpoint::{load_network, save_network, Checkpoint};
pub use math::{
    all_finite, argmax, argmin, l2_distance, l2_norm, linf_distance, max_value, mse, sign,
    softmax, softmax_backward,
};
pub use network::{
    Activation, BackwardPass, DenseNetwork, ForwardPass, Gradients, Layer, LayerGradients, Matrix,
};
pub use optimizer::{Optimizer, OptimizerKind};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seeded generator used everywhere randomness is needed.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}
