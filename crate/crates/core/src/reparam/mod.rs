//! Structural reparameterization for inference.

pub mod bench;
pub mod encoder;
pub mod merged;

pub use bench::{bench, BenchRow, BenchTable};
pub use encoder::{merge_dual_encoder, verify_merge, EquivalenceReport};
pub use merged::{execute_merged, merge_parallel_convs, MergedConvPlan};
