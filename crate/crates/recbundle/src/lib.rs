//! Geometric diagnostics and training for recommender feedback loops.
//!
//! The toolkit treats a recommender as a fiber bundle: a discrete user graph
//! as the base manifold, per-user preference vector spaces as fibers, and a
//! learned connection (transport matrix plus attention coefficients) for
//! moving states between neighboring users. On top of a reference sequential
//! recommender with exact per-step Jacobians it computes connection
//! curvature, holonomy spectra, spectral radius, and the Geometric Bias
//! Index, trains with curvature and volume-preservation regularizers, and
//! runs a closed interaction-recommendation-feedback simulation that exhibits
//! cocoon formation as geometric volume contraction.

pub mod error;
pub mod ingest;
pub mod transport;
pub mod geometry;
pub mod fiber;
pub mod training;
pub mod simulate;
pub mod report;

mod eigen;
mod linalg;

pub use error::{Error, Result};
