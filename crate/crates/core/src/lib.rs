//! Line-based mapping with vanishing-point measurements.
//!
//! * [`geometry`]: Plücker and orthonormal lines, frame transforms, triangulation.
//! * [`vp_detect`]: J-linkage clustering of segments by shared vanishing point.
//! * [`factors`]: line and vanishing-point residuals with analytic Jacobians.
//! * [`observability`]: Fisher information and numeric rank certification.
//! * [`estimator`]: sliding-window Levenberg–Marquardt over poses and lines.
//! * [`simulator`]: synthetic scenes, trajectories, observations and datasets.

pub mod error;
pub mod estimator;
pub mod factors;
pub mod geometry;
pub mod observability;
pub mod simulator;
pub mod vp_detect;

pub use error::{Error, Result};
