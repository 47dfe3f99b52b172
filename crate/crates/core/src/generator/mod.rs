//! The generative model: actions, stack semantics, the parallel training
//! pass and incremental decoding.

pub mod actions;
pub mod model;
pub mod state;

pub use actions::{linearize_postorder, Action, ActionSequence};
pub use model::{loss_ar, token_mask, type_mask, Generator, GeneratorConfig, TrainOutput};
pub use state::{GenState, StackItem};
