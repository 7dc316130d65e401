//! Minimal reverse-mode automatic differentiation.
//!
//! Only the primitives the encoder needs are provided. Values are dense
//! row-major tensors generic over `f32` (training) and `f64` (verification).

pub mod attention;
pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod params;
pub mod tensor;

pub use attention::AttentionLayout;
pub use gradcheck::{finite_difference_check, primitive_suite, relative_error, DEFAULT_EPS};
pub use graph::{Gradients, Graph, Var};
pub use ops::{attention_heads, concat_cols, concat_rows, Mode};
pub use params::{ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
