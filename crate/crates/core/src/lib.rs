//! Joint current and surface-shape optimization for flexible continuous
//! aperture arrays serving multiple single-antenna users.

// `!(x > 0.0)` style checks are meant to reject NaN too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod config;
pub mod current_optimizer;
pub mod em_channel;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod quadrature;
pub mod shape_optimizer;

pub use error::{FcapaError, Result};
