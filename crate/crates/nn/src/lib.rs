//! Minimal double-precision neural network stack: GRU and bidirectional GRU
//! layers, additive attention, dense layers, losses and Adam, all with
//! hand-written reverse-mode gradients checked against finite differences.
//!
//! Layers are stateless during the forward pass: `forward` returns the
//! output together with a cache, and `backward` consumes that cache while
//! accumulating into the `grad` slot of each [`Param`]. Models built on top
//! keep the caches of their last training forward pass.

pub mod activation;
pub mod attention;
pub mod bigru;
pub mod dense;
mod error;
pub mod gradcheck;
pub mod gru;
pub mod loss;
pub mod module;
pub mod optim;
pub mod params_io;
pub mod tensor;

pub use activation::{sigmoid, softmax, Activation};
pub use attention::{attention, Attention, AttentionCache, AttentionOutput};
pub use bigru::{bigru_forward, BiGru, BiGruCache};
pub use dense::{dense_forward, Dense, DenseCache};
pub use error::{NnError, Result};
pub use gradcheck::{finite_diff_grad, max_relative_error};
pub use gru::{gru_cell_step, gru_layer_forward, Direction, GruCache, GruCellParams, GruLayer, GruStepState, MergeConvention};
pub use loss::{cross_entropy_loss, mse_grad, mse_loss, multitask_loss, softmax_cross_entropy, CrossEntropy, LossWeights};
pub use module::{with_prefix, with_prefix_mut, xavier_uniform, Module};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use params_io::{load_into, read_params, write_params, ParamManifest};
pub use tensor::{Matrix, Param, SeqBatch, Tensor};

/// Seeded generator used for every random initialization.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}
