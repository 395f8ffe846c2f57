//! Statistics for datasets of one-dimensional probability distributions under
//! the 2-Wasserstein metric.
//!
//! Quantile functions are encoded as quadratic B-splines on `[0, 1]` whose
//! coefficients must be nondecreasing. The coefficient space carries the
//! metric of the Gram matrix `E`, under which spline distances are exactly
//! Wasserstein distances. On top of that encoding the crate provides:
//!
//! * metric projection onto the monotone cone and onto affine slices of it
//!   ([`monotone_projection`]),
//! * projected PCA with reliability diagnostics ([`projected_pca`]),
//! * global and nested geodesic PCA as intrinsic baselines ([`geodesic_pca`]),
//! * projected distribution-on-distribution regression
//!   ([`projected_regression`]),
//! * seedable simulation scenarios ([`datagen`]) and file formats ([`io`]).
//!
//! Numerical code is generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases below name the double precision instantiations used by the CLI.

pub mod datagen;
pub mod distributions;
pub mod error;
pub mod geodesic_pca;
pub mod io;
pub mod monotone_projection;
pub mod projected_pca;
pub mod projected_regression;
pub mod qp;
pub mod scalar;
pub mod spline_basis;

pub use distributions::{EmpiricalDistribution, QuantileFunction, QuantileSpline};
pub use error::{Error, Result};
pub use geodesic_pca::{GeodesicOptions, GeodesicPcaResult};
pub use projected_pca::PcaModel;
pub use projected_regression::{Folds, RegressionModel};
pub use scalar::Real;
pub use spline_basis::{DifferenceMatrix, GramPair, SplineBasis};

pub type SplineBasis64 = SplineBasis<f64>;
pub type SplineBasis32 = SplineBasis<f32>;
pub type QuantileSpline64 = QuantileSpline<f64>;
pub type QuantileSpline32 = QuantileSpline<f32>;
pub type EmpiricalDistribution64 = EmpiricalDistribution<f64>;
pub type PcaModel64 = PcaModel<f64>;
pub type PcaModel32 = PcaModel<f32>;
pub type GeodesicPcaResult64 = GeodesicPcaResult<f64>;
pub type RegressionModel64 = RegressionModel<f64>;
