//! Numerical laboratory for L² Dirac eigenspinors on metrics of the form
//! `f(x)^2 (dx^2 + h_M)` near a boundary component `M`.
//!
//! The eigenspinor equation is reduced to one 2×2 radial system per
//! eigenvalue of the tangential operator `A`, and every quantity the
//! non-existence argument relies on is monitored along the way: the
//! conserved norm of kernel modes, the Wronskian, and the Lyapunov
//! functions `F = e^{-4λx} a² + b²` and `F̃ = a² + e^{4λx} b²`.
//!
//! Module map:
//! - [`cross_section`]: Dirac spectra of circles, flat tori and user lists, and the operator `A`.
//! - [`warp_geometry`]: conformal factors, divergence of `∫ f`, reparametrization and gauge change.
//! - [`radial_ode`]: the per-mode systems with an adaptive Dormand–Prince integrator.
//! - [`mode_scan`]: L²-mass tests, boundary limits and the (λ, l) verdict scan.
//! - [`discrete_dirac`]: staggered finite-difference truncations of the mode operator.
//! - [`gcvf_lab`]: gradient conformal vector field checks and the warped normal form.
//! - [`cli_runner`]: run configurations, bundled scenarios and report writing.

pub mod cli_runner;
pub mod cross_section;
pub mod discrete_dirac;
pub mod error;
pub mod gcvf_lab;
pub mod mode_scan;
pub mod ode;
pub mod quadrature;
pub mod radial_ode;
pub mod scenarios;
pub mod tridiag;
pub mod warp_geometry;

pub use error::{Error, Result};

/// Crate version embedded in every report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
