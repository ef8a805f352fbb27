//! Off-policy temporal-difference learning with over-parameterized linear
//! features and target networks.

pub mod bounds;
pub mod data;
pub mod diagnostics;
pub mod envs;
pub mod error;
pub mod learners;
pub mod mdp;
pub mod numerics;

pub use error::{Error, Result};
