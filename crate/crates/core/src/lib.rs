//! Solvers, oracle accounting and lower-bound certificates for personalized
//! federated learning with a mean-dissimilarity penalty.

pub mod data;
pub mod error;
pub mod harness;
pub mod losses;
pub mod lowerbound;
pub mod model;
pub mod solvers;
pub mod subsolvers;
pub mod synthetic;

pub use error::{Error, Result};
pub use model::{LocalLoss, OracleLedger, Problem, SmoothnessInfo, StackedPoint};
