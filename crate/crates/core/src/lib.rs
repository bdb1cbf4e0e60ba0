//! Whittaker smoothing for irregular, masked, multivariate time series.
//!
//! The smoother minimizes a masked least-squares misfit plus a weighted
//! squared norm of a discrete derivative, solved through a symmetric banded
//! Cholesky factorization. The factorization is kept around so the gradient
//! of any scalar loss with respect to the inputs and the per-time smoothing
//! weights comes out of a single extra banded solve, which makes the layer
//! cheap to differentiate and the smoothing weights fittable by gradient
//! descent.

pub mod autodiff;
pub mod bandmat;
pub mod dense;
pub mod diffop;
pub mod error;
pub mod harness;
pub mod regfit;
pub mod smoother;

#[cfg(test)]
pub(crate) mod testutil;

pub use bandmat::{BandMatrix, BandState};
pub use diffop::DifferenceOperator;
pub use error::{Error, Result};

pub use smoother::{SmootherContext, TimeSeriesBatch};
