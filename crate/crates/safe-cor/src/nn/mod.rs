//! From-scratch function approximators: MLP with analytic backprop, diagonal
//! Gaussian policy, adaptive-moment optimizer, and text checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod mlp;
pub mod policy;

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use mlp::{param_count, Mlp, MlpCache};
pub use policy::{GaussianPolicy, Sampled, LOG_STD_MAX, LOG_STD_MIN};
