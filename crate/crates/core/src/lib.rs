//! Numerical laboratory for stable critical points of the van der
//! Waals-Cahn-Hilliard (Allen-Cahn) energy
//!
//! ```text
//! E_eps(u) = ∫ eps |∇u|²/2 + W(u)/eps dx
//! ```
//!
//! on rectangular boxes, together with the geometric-measure diagnostics of
//! their diffuse interfaces: varifold mass and first variation, discrepancy,
//! the second-fundamental-form density `B_u`, monotonicity ratios, level-set
//! slices with their curvature and turning angles, and fiber classifiers.
//!
//! The modules are layered bottom-up:
//!
//! | module | contents |
//! |--------|----------|
//! | [`potential`] | double-well potential, surface tension, standing wave |
//! | [`field`] | uniform grids, discrete calculus, resampling, binary format |
//! | [`solver`] | residual, energy, semi-implicit flow, Newton refinement |
//! | [`stability`] | second variation, smallest eigenvalue, certification |
//! | [`varifold`] | diffuse varifold measures and inequalities |
//! | [`slicing`] | level-set slices, curvature, fiber classifiers, Hausdorff |
//! | [`harness`] | ansatz fields, experiment sweeps, reports |

pub mod error;
pub mod field;
pub mod harness;
pub mod potential;
pub mod slicing;
pub mod solver;
pub mod stability;
pub mod varifold;

pub(crate) mod krylov;
pub mod testfn;

pub use error::{Error, Result};
pub use field::{Grid, Region, ScalarField, VectorField};
pub use potential::{DoubleWell, StandingWave};
pub use solver::{Boundary, PhaseState, SolveConfig};
