//! Finite-difference laboratory for the generalized Ricci flow
//!
//! ```text
//! ∂t g = −2 Ric + ½ h,   h_ij = H_ikl H_j^kl
//! ∂t H = □H = −(dd* + d*d) H
//! ```
//!
//! on flat periodic tori, together with the refined (`−dd*H`), DeTurck-gauged
//! and extended (`F = dA`, `H = dB`) variants, residual checks for the curvature
//! evolution equations, and monitors for the a-priori estimates.

pub mod error;
pub mod estimates;
pub mod flow;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod par;
pub mod presets;
pub mod tensor;
pub mod tolerances;
pub mod verify;

pub use error::{Error, Result};
pub use grid::{Grid, StencilOrder};
pub use tensor::{MetricField, TensorField, Variance};
