//! Hard-EM training: the four losses, the two-pass backward and the loop.

pub mod check;
pub mod losses;
pub mod step;

pub use check::{objective_suite, Objective, ObjectiveCheck, GRAD_TOLERANCE};
pub use losses::{e_step, induce, loss_ae, loss_height, loss_parser, sentence_losses, LossOptions, SentenceLosses};
pub use step::{evaluate_batch, sentence_gradients, train, train_step, BatchStream, LossReport, TrainConfig};
