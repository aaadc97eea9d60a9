//! Dense linear algebra, deterministic randomness and the Adam update.

mod adam;
mod matrix;
mod rng;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use matrix::Matrix;
pub use rng::Rng;
