//! Vision-to-frozen-text alignment with latent orthogonality regularization,
//! as a small CPU laboratory: toy two-tower models trained on synthetic paired
//! data, plus diagnostics for dimensional collapse of the learned latent space.

pub mod diagnostics;
pub mod error;
pub mod losses;
pub mod models;
pub mod numerics;
pub mod optim;
pub mod runner;
pub mod synthdata;

pub use error::{Error, Result};
pub use numerics::Matrix;
