//! Semi-discrete minimizing-movements solver for a one-dimensional
//! free-boundary oxide-growth model.
//!
//! The model tracks a density of oxygen vacancies on a growing layer
//! `[0, X(t)]`: heat flow in the bulk, a two-threshold exchange condition at
//! the fixed end `x = 0`, and a nonlinear growth law for the interface `X`.
//! Each time step minimizes
//!
//! ```text
//!   J(X, rho) = W2^2(rho, rho_prev) / (2 tau) + lambda (X - X_prev)^2 / (2 tau)
//!             + int f(rho) + theta |dM| - alpha X + p_tau(dM)
//! ```
//!
//! over interface positions and densities, where the squared distance uses
//! exact 1D optimal transport with a mass-balancing atom at the origin.
//!
//! The crate also ships an independent finite-difference solver of the same
//! model for cross-validation, per-step residual checkers for the laws the
//! minimizers satisfy, trajectory-level dissipation and a-priori ledgers, and
//! a CLI that runs configurations, refinement studies and emits bit-stable
//! CSV/JSON reports.

pub mod config;
pub mod density;
pub mod diagnostics;
pub mod energy;
pub mod error;
pub mod oracle;
pub mod params;
pub mod sim;
pub mod stepper;
pub mod transport;

pub use density::{GridDensity, State};
pub use error::{CorrodeError, Result};
pub use params::{derive_thresholds, ModelParams, PenaltyParams};
