//! Probabilistic seismic response surrogate for bridge portfolios.
//!
//! The crate covers the whole chain: synthetic ground motions, a reduced
//! nonlinear bridge model that produces training data, a small reverse-mode
//! autodiff engine, the SPR-Net surrogate and its LSTM baseline, exact
//! Shapley attribution, evaluation metrics, and fragility/loss analysis.

// `!(x > 0.0)` style guards are used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

pub mod explain;
pub mod gm;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod oracle;
pub mod risk;
pub mod sprnet;
