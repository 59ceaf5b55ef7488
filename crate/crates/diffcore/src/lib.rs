//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Everything the learners need lives here: a [`Graph`] tape with the
//! handful of operations used by the networks, [`Mlp`] building blocks,
//! [`Optimizer`]s, finite-difference [`grad_check`], and the binary
//! [`Checkpoint`] container.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod mlp;
pub mod optim;
pub mod tensor;

pub use checkpoint::{Checkpoint, Precision};
pub use error::{DiffError, Result};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use mlp::{mlp_forward, mlp_forward_split, Activation, Mlp, MlpSpec, OutputActivation};
pub use optim::{Optimizer, OptimizerKind};
pub use tensor::Tensor;
