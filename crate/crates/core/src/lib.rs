//! Attribute/interaction tensor-product caption decoder.
//!
//! The crate is layered bottom-up: [`tensor`] and [`graph`] provide dense
//! arithmetic with reverse-mode gradients, [`tpr`] the binding algebra,
//! [`scene`] a synthetic data source, [`decoder`] the captioning model,
//! [`training`] the optimizer loop and checkpoints, and [`metrics`] the
//! caption scores.

pub mod decoder;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod scene;
pub mod tensor;
pub mod tpr;
pub mod training;

pub use gradcheck::{grad_check, GradCheck, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use tensor::{Tensor, TensorError};
