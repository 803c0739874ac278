//! Reverse-mode differentiation and the SGD optimizer.

pub mod gradcheck;
pub mod optim;
pub mod param;
pub mod tape;

pub use gradcheck::{compare_gradients, grad_check, GradCheckOptions, GradCheckReport};
pub use optim::{sgd_step, OptimizerConfig};
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};
