//! First-break picking with a Bayesian U-Net.

pub mod error;
pub mod eval;
pub mod gather;
pub mod pick;
pub mod precondition;
pub mod unet;
pub mod rng;

pub use error::{FbError, Result};
