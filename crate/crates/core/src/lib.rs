//! Matrix-free higher-order finite element solver for quasi-static
//! phase-field fracture on the slit unit square.
//!
//! The crate is organized bottom-up:
//!
//! * [`mesh`] builds nested uniform quadrilateral meshes with duplicated
//!   nodes along the slit and numbers the `Q_p` degrees of freedom.
//! * [`basis`] tabulates 1D shape data and provides the sum-factorized
//!   cell kernels; [`lanes`] supplies the lane-batched scalar type they are
//!   generic over.
//! * [`material`] implements the degradation function, the spectral
//!   (tensile/compressive) energy split and the analytic derivatives of the
//!   symmetric eigensystem.
//! * [`operator`] evaluates the nonlinear residual and applies its Jacobian
//!   without assembling it; [`sparse`] assembles the same Jacobian into CSR
//!   form for verification and benchmarking.
//! * [`multigrid`] and [`krylov`] provide the monolithic geometric
//!   multigrid preconditioner and restarted GMRES.
//! * [`active_set`] runs the primal-dual active-set iteration that enforces
//!   crack irreversibility, and [`driver`] wraps everything into the
//!   quasi-static loading loop with CSV/VTK output and benchmarks.

pub mod active_set;
pub mod basis;
pub mod clock;
pub mod driver;
mod error;
pub mod krylov;
pub mod lanes;
pub mod material;
pub mod mesh;
pub mod multigrid;
pub mod operator;
pub mod sparse;

pub use error::Error;
