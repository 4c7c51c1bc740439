//! Singular Lagrangian systems in local coordinates: constraint diagnostics,
//! the regularized Lagrangian `L + F` on the coisotropic thickening, and
//! numerical verification of the result.

pub mod catalog;
pub mod chart;
pub mod config;
pub mod constraints;
pub mod dynamics;
pub mod error;
pub mod expr;
pub mod forms;
pub mod geometry;
pub mod linalg;
pub mod par;
pub mod regularizer;
pub mod sampling;

pub use chart::ChartSpec;
pub use error::{Error, Result};
pub use expr::{parse, Expression};
