//! Network building blocks.

pub mod aspp;
pub mod exec;
pub mod layers;

pub use aspp::{AsppBlock, BlockKind, ResAspp2Config, DEFAULT_DILATIONS};
pub use exec::{Exec, InferExec, TapeExec};
pub use layers::{BasicBlock, BatchNorm, Conv, ConvBn, ParamBuilder, SideHead};
