//! Co-association matrix self-enhancement for ensemble clustering.
//!
//! The pipeline runs in five stages:
//!
//! 1. [`base_pool`] generates a pool of K-means base clusterings and samples
//!    ensembles from it.
//! 2. [`coassoc`] and [`microcluster`] turn an ensemble into a similarity
//!    matrix (plain co-association, locally weighted, or probability
//!    trajectory) and extract the high-confidence entries.
//! 3. [`enhance`] solves the Laplacian-regularized completion program by ADMM.
//! 4. [`consensus`] cuts the enhanced matrix with agglomerative clustering.
//! 5. [`metrics`] scores the result against ground truth.
//!
//! [`experiment`] wires these together into a reproducible, seeded protocol.

pub mod base_pool;
pub mod coassoc;
pub mod consensus;
pub mod data_io;
pub mod enhance;
mod error;
pub mod experiment;
pub mod metrics;
pub mod microcluster;
pub mod rng;

pub use base_pool::{Ensemble, Partition};
pub use coassoc::{CoassocMatrix, HighConfidence, Laplacian, MatrixKind};
pub use data_io::Dataset;
pub use enhance::{EnhancedResult, SolverConfig};
pub use error::{Error, Result};
