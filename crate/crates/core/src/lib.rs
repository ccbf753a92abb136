//! Numerical laboratory for weakly coupled semilinear
//! Euler-Poisson-Darboux-Tricomi systems
//!
//! ```text
//! u_tt - t^{2m} Δu + (mu1/t) u_t + (nu1^2/t^2) u = |v|^p
//! v_tt - t^{2m} Δv + (mu2/t) v_t + (nu2^2/t^2) v = |u|^q
//! ```
//!
//! posed for `t >= 1`, on a periodic box large enough that compactly
//! supported data never wrap.

// `!(x > 0.0)` is how NaN gets rejected along with the rest.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certificate;
pub mod criticality;
pub mod data;
pub mod error;
pub mod fft;
pub mod linear;
pub mod ode;
pub mod quadrature;
pub mod sim;
pub mod spectral;
pub mod tolerances;

pub use error::{Error, Result};
