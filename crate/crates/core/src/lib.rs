//! Shifted boundary method for the Poisson problem on a Cartesian background
//! mesh, solved with GMRES preconditioned by h- or p-multigrid V-cycles using
//! full-residual shy patch smoothers.

pub mod assembly;
pub mod error;
pub mod exec;
pub mod fem;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod mesh;
pub mod multigrid;
pub mod smoother;

pub use error::{Result, SbmError};
pub use exec::Execution;
