//! Adaptive neural unscented Kalman filtering for INS/DVL navigation.

// `!(x > 0.0)` guards are used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptive_q;
pub mod ekf;
pub mod error;
pub mod experiment;
pub mod fusion;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod par;
pub mod processnet;
pub mod simkit;
pub mod strapdown;
pub mod ukf;
