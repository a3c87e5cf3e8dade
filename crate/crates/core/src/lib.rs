//! Discovery of macro-level cause and effect variables from paired
//! micro-level measurements.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dataset;
pub mod designer;
pub mod density;
pub mod discrete;
pub mod error;
pub mod exec;
pub mod learner;
pub mod linalg;
pub mod neuro;
pub mod partition;
pub mod pipeline;
pub mod rng;
pub mod subsidiary;

pub use dataset::{CausalDataset, Mode, TruthTable};
pub use discrete::{DiscreteMlSystem, GroundTruth};
pub use error::{Error, Result};
pub use partition::Partition;
