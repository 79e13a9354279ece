//! Desk-scale deep-learning toolkit for MRI segmentation and synthesis
//! experiments: a tape-based autodiff engine, the layers and models of a
//! U-net and three GAN families, adversarial losses with gradient
//! penalties, PCA-based generation metrics and a config-driven harness.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod harness;
pub mod eval;
pub mod layers;
pub mod losses;
pub mod models;
pub mod optim;
pub mod tensor;

pub use autodiff::{Tape, Var};
pub use error::{Error, Result};
pub use tensor::{Real, Tensor};

/// Seeded generator used everywhere randomness enters.
pub type Rng = rand_chacha::ChaCha8Rng;
