//! Kernel-PCA-assisted Bayesian optimization.
//!
//! The crate contains everything needed to run three optimizers on box-constrained
//! black-box problems:
//!
//! * `kpca-bo`: BO carried out in a nonlinear subspace learned by kernel PCA on
//!   rank-weighted evaluations, with a conical pre-image map back to the domain.
//! * `pca-bo`: the same loop with a linear PCA subspace.
//! * `bo`: plain GPR + expected improvement in the full domain.
//!
//! Building blocks (Latin hypercube designs, a projected L-BFGS optimizer, kernels,
//! Matérn 5/2 Gaussian process regression, expected improvement) live in their own
//! modules and are usable on their own. A small suite of shifted/rotated multimodal
//! test functions is provided in [`testbed`].

pub mod acquisition;
pub mod backmap;
pub mod bounds;
pub mod doe;
pub mod drivers;
pub mod error;
pub mod gpr;
pub mod kernels;
pub mod kpca;
pub mod localopt;
pub mod pca;
pub mod record;
pub mod testbed;

pub use bounds::Bounds;
pub use error::{Error, Result};
pub use record::{Algorithm, IterationRow, RunConfig, RunRecord};
