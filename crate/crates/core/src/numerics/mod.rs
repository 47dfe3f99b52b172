//! Dense arrays, the op set, reverse-mode differentiation and Adam.

pub mod backend;
pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod params;
pub mod real;
pub mod tensor;

pub use backend::{Backend, Eager, LossRoot, Op};
pub use graph::{Gradients, Graph, Var};
pub use ops::SeqLayout;
pub use params::{AdamConfig, GradBuffer, ParamId, ParamStore, StepOutcome};
pub use real::{DType, Real};
pub use tensor::Tensor;
