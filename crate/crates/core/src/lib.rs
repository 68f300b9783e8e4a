//! Multi-block difference-of-convex (BDC) decompositions and the block
//! coordinate DC algorithms that consume them.

pub mod block;
pub mod error;
pub mod fmt;
pub mod model;
pub mod monomial;
pub mod problems;
pub mod relu;
pub mod rng;
pub mod sets;
pub mod solvers;

pub use block::{BlockPartition, BlockVector};
pub use error::{BdcError, Result};
pub use model::{BdcProblem, Domain, SampleHandle, StochasticBdc};
