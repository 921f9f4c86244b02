//! Convex monotone operators on finite filtered probability spaces.

pub mod dynamic;
pub mod error;
pub mod extension;
pub mod operator;
pub mod optim;
pub mod prob;
pub mod report;
pub mod scenario;
pub mod subspace;

pub use error::{Error, Result};
pub use report::{CheckEntry, CheckKind, ValidationReport};
