//! Volume-constrained optimal spectral partitions on Cartesian grids.
//!
//! The crate minimizes the sum of first Dirichlet eigenvalues of `k` disjoint
//! phases whose supports share a total measure budget `a`, working with a
//! penalized functional over nonnegative phase fields. Converged phase vectors
//! are turned into partitions and audited against closed-form predictions.

pub mod config;
pub mod deform;
pub mod eigen;
pub mod energy;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod io;
pub mod optimizer;
pub mod oracles;
pub mod partition;

pub use error::{Error, Result};
