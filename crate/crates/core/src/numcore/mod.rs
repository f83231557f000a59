//! Dense vector math, a small reverse-mode tape and a finite-difference
//! gradient checker.
//!
//! Everything runs in `f64`. The tape only knows the handful of operations the
//! loss stack is built from; it is not a general autodiff engine.

mod gradcheck;
mod params;
mod tape;
mod vector;

pub use gradcheck::{gradcheck, GradEntry, GradReport, DEFAULT_STEP};
pub use params::{Param, ParamId, ParamStore};
pub use tape::{sigmoid, softplus, NodeId, Tape, NORM_EPS};
pub use vector::{euclidean, hinge, masked_l2, Vector};
