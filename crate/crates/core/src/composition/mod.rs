//! The composition model: chart encoders, split scorers and tree induction.

pub mod chart;
pub mod fns;
pub mod parser;
pub mod schedule;
pub mod timing;
pub mod tree;

pub use chart::{induce_tree, inside_full, inside_pruned, outside, ChartOptions, InsideChart, OutsideChart};
pub use fns::{CompositionConfig, CompositionModel};
pub use parser::TopDownParser;
pub use schedule::{Cell, MergeSchedule, Span};
pub use timing::{fit_exponent, time_charts, timing_model, ChartTiming};
pub use tree::{crosses, BinaryTree};
