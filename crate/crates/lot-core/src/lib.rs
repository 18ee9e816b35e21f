//! Linearized optimal transport over Riemannian base spaces.
//!
//! This crate computes transport distances between discrete measures and
//! linearizes them around a reference measure so that families of measures
//! can be compared, averaged, and decomposed with ordinary linear algebra.
//! Three metrics are supported:
//!
//! * **W2** — the quadratic Wasserstein distance between measures of equal
//!   total mass,
//! * **HK** — the Hellinger-Kantorovich distance with length scale `kappa`,
//!   which charges mass creation/destruction instead of requiring equal
//!   totals, and
//! * **SHK** — the spherical Hellinger-Kantorovich distance, the restriction
//!   of HK geometry to probability measures.
//!
//! The base space can be a Euclidean space of any dimension, a round sphere
//! of arbitrary radius embedded in 3-space, or the hyperbolic plane in the
//! hyperboloid model. Pipeline stages map onto modules:
//!
//! 1. [`manifold`] — points, tangent vectors, and the exponential /
//!    logarithmic maps of the base space;
//! 2. [`measure`] — discrete measures, dataset generators, rasterization;
//! 3. [`solver`] — log-domain Sinkhorn iterations for balanced (W2) and
//!    soft-marginal (HK) transport, plus optimality diagnostics;
//! 4. [`tangent`] — logarithmic and exponential maps of the *metric* itself:
//!    velocity fields, mass-change rates, singular parts, and the
//!    HK ↔ SHK conversion;
//! 5. [`analysis`] — embedding of sample families, weighted PCA, geodesic
//!    shooting, and the study harnesses;
//! 6. [`oracle`] — small exact solvers used to validate the iterative ones;
//! 7. [`io`] — CSV/JSON/PGM serialization of every artifact above.
//!
//! # Example
//!
//! Solve a soft-marginal problem between two single atoms and check that
//! the tangent embedding preserves the squared distance:
//!
//! ```
//! use lot_core::manifold::Manifold;
//! use lot_core::measure::DiscreteMeasure;
//! use lot_core::solver::{build_cost_hk, sinkhorn_hk, SolverConfig};
//! use lot_core::tangent::{log_hk, norm_hk};
//!
//! let line = Manifold::Euclidean { dim: 1 };
//! let mu0 = DiscreteMeasure::from_coords(line, &[vec![0.0]], vec![1.0])?;
//! let mu1 = DiscreteMeasure::from_coords(line, &[vec![0.6]], vec![1.0])?;
//!
//! let kappa = 1.0;
//! let cost = build_cost_hk(&mu0, &mu1, kappa)?;
//! let config = SolverConfig {
//!     epsilon_target: Some(1e-6),
//!     marginal_tol: 1e-10,
//!     ..SolverConfig::for_kappa(kappa)
//! };
//! let solution = sinkhorn_hk(&cost, &mu0, &mu1, &config)?;
//!
//! // Two unit atoms at distance d are 2 kappa^2 (1 - cos(d / kappa)) apart
//! // in squared distance, and the tangent embedding preserves that number.
//! let exact = 2.0 * (1.0 - 0.6_f64.cos());
//! let tangent = log_hk(&mu0, &mu1, &solution.plan, kappa)?;
//! assert!((solution.plan.value() - exact).abs() < 1e-6);
//! assert!((norm_hk(&tangent) - exact).abs() < 1e-6);
//! # Ok::<(), lot_core::Error>(())
//! ```

// Numeric kernels index several arrays in lockstep, and parameter checks
// use `!(x > 0.0)` so that NaN fails validation like any other bad value.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod io;
pub mod manifold;
pub mod measure;
pub mod oracle;
pub mod solver;
pub mod tangent;

use thiserror::Error;

/// Errors shared by every module of this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates a documented precondition
    /// (dimension mismatch, negative mass, missing parameter, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The logarithmic map was requested at or beyond the cut locus,
    /// where it is not defined (e.g. antipodal points on a sphere).
    #[error("cut locus reached: {0}")]
    CutLocus(String),

    /// A transport plan fails the requirements of the operation consuming
    /// it (wrong marginals, mass on forbidden pairs, ...).
    #[error("invalid transport plan: {0}")]
    InvalidPlan(String),

    /// An iterative solver exhausted its iteration budget before meeting
    /// its tolerance. The best residual reached is reported.
    #[error("no convergence after {iterations} iterations: residual {residual:.3e} above tolerance {tolerance:.3e}")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        tolerance: f64,
    },

    /// The request is structurally outside what this crate implements
    /// (e.g. exact solves on instances too large to enumerate).
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// An I/O failure while reading or writing artifacts.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A file was read but its contents could not be interpreted.
    #[error("parse error: {0}")]
    Parse(String),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
