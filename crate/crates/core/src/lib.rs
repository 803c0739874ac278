pub mod autograd;
pub mod auxmaps;
pub mod cli;
pub mod dcnet;
pub mod erf;
pub mod error;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod ops;
pub mod reparam;
pub mod tensor;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use tensor::{ConvSpec, PatchMatrix, Tensor};
