//! Class-incremental learning with placebo-based knowledge distillation.
//!
//! Unlabeled samples from a free data stream are scored against class
//! prototypes and used as distillation inputs for old classes. The scoring
//! hyperparameters are chosen per phase by an Exp3 policy trained on a
//! class-balanced local validation split, all under a strict memory budget.

pub mod error;
pub mod nn;

pub use error::{Error, Result};
pub mod data;
pub mod engine;
pub mod memory;
pub mod placebo;
pub mod policy;
pub mod seed;
