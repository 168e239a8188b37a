//! In-context sparse linear regression laboratory.
//!
//! Tasks and prompts ([`task`]), correlation reweighting ([`preprocess`]),
//! the estimators it is compared against ([`estimators`]) and a linear-attention
//! transformer whose hand-set weights run reweighting followed by gradient
//! descent inside its forward pass ([`attention`]).

pub mod attention;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod preprocess;
pub mod rng;
pub mod task;

pub use error::{Error, Result};
