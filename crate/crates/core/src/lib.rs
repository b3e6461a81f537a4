//! Model-based optimal experiment design for static nonlinear models, scored
//! against the exact (likelihood-ratio) joint confidence region instead of its
//! Fisher-information ellipsoid.
//!
//! The crate is `no_std` with `alloc`. Everything here is pure computation:
//! file formats, the command line and Monte Carlo fan-out live in the `exoed`
//! companion crate.
//!
//! Module map:
//!
//! * [`model`]: explicit static models `y = F(p, u)` and their sensitivities,
//!   including the two built-in case-study models.
//! * [`stats`]: chi-squared / Fisher quantiles and seeded Gaussian noise.
//! * [`estimation`]: least-squares objectives, Fisher information, thresholds
//!   and exact confidence-region membership.
//! * [`nlp`]: a small dense SQP solver, multistart and grid certificates.
//! * [`geometry`]: anchor points, gridded volume, farthest pair, ellipsoid
//!   scalings and boundary tracing on exact confidence regions.
//! * [`design`]: classical, exact (nested and KKT) and ellipsoidal designs.
#![no_std]
#![warn(missing_debug_implementations)]
// NaN-rejecting checks are written as `!(x > 0.0)`.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod design;
pub mod error;
pub mod estimation;
pub mod geometry;
pub mod linalg;
pub mod model;
pub mod nlp;
pub mod stats;

pub use error::{Error, Result};

/// Items every module needs in a `no_std` build.
pub(crate) mod prelude {
    pub use alloc::boxed::Box;
    pub use alloc::format;
    pub use alloc::string::{String, ToString};
    pub use alloc::vec;
    pub use alloc::vec::Vec;
    pub use num_traits::Float;
}
