//! Finite-element solver for nonlinear parabolic evolutions driven by
//! N-functions with (p, δ)-structure.
//!
//! The crate provides
//!
//! * [`orlicz`]: closed-form (p, δ) densities, their shifts, the induced
//!   vector fields and randomized certification of the operator inequalities,
//! * [`lower_order`]: the registry of lower-order coefficients `d(s)`,
//! * [`mesh`] / [`assembly`] / [`linalg`]: P1 elements on red-refined
//!   triangulations of the unit square and the sparse machinery behind them,
//! * [`schemes`]: the implicit (Kacanov / damped Newton) and semi-implicit
//!   (one linear solve per step) backward Euler schemes,
//! * [`diagnostics`]: energy ledgers, discrepancy terms and refinement studies.

pub mod assembly;
pub mod diagnostics;
pub mod error;
pub mod export;
pub mod fields;
pub mod linalg;
pub mod lower_order;
pub mod mesh;
pub mod orlicz;
pub mod schemes;

pub use error::{Error, Result};
pub use fields::ScalarField;
pub use linalg::{LinearSolver, SymSparse};
pub use lower_order::{LowerOrderCoeff, SchemeKind};
pub use mesh::{FemFunction, TriMesh};
pub use orlicz::{NFunctionPD, RegularizationKind, RegularizedDensity, Vec2};
pub use schemes::{NonlinearSolver, SchemeConfig, Trajectory};
