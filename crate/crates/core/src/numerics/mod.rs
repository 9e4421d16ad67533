//! Dense `f64` tensors, a reverse-mode differentiation graph, finite-difference
//! checking, and Adam.

mod adam;
pub mod gradcheck;
mod graph;
pub mod ops;
mod store;
mod tensor;

pub use adam::Adam;
pub use gradcheck::{check_graph, finite_diff_check, finite_diff_check_terms, relative_error, Stencil};
pub use graph::{Gradients, Graph, NodeId};
pub use ops::{binary_cross_entropy, cosine_similarity, masked_softmax, Mask};
pub use store::{BoundParams, NamedTensor, ParamEntry, ParamGrads, ParamStore, TensorFile};
pub use tensor::Tensor;
