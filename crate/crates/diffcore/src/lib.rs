//! Dense `f64` tensors, a define-by-run reverse-mode graph, and Adam.
//!
//! Trainable weights live in a [`ParamStore`]. Each training step builds a
//! fresh [`Graph`], pulls parameters into it with [`Graph::param`], and calls
//! [`Graph::backward`] on a scalar loss, which accumulates gradients back into
//! the store for an [`Adam`] step.

mod adam;
mod error;
mod gradcheck;
mod graph;
mod kernels;
mod tensor;

pub use adam::{Adam, ParamGroup};
pub use error::{DiffError, Result};
pub use gradcheck::{gradient_check, gradient_check_params};
pub use graph::{Graph, Var};
pub use tensor::{hard_update, soft_update, ParamId, ParamStore, Tensor};
