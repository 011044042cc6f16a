//! Exact path kernel (EPK) machinery for small neural models.
//!
//! The pipeline this crate implements:
//!
//! 1. Train a model (a modular-addition transformer or a small MLP) with an
//!    instrumented optimizer that records every step of the parameter
//!    trajectory — parameters, momentum state, learning rate, and the batch
//!    membership mask ([`trajectory`]).
//! 2. Rebuild any prediction of the final model *exactly* as a sum of
//!    per-step, per-training-sample kernel terms plus a regularization term
//!    ([`epk`]). The only approximation is the quadrature order used for the
//!    path integral of the test-side feature map; everything else is
//!    bit-faithful to the recorded run.
//! 3. Read per-parameter / per-step / per-sample influence scores out of the
//!    same decomposition ([`influence`]) and use them for pruning, similarity
//!    analysis, model surgery, and training-dynamics studies
//!    ([`experiments`], [`lasso`]).
//!
//! Reverse-mode differentiation is provided by a small tape-style graph over
//! flat `f64` tensors ([`graph`]); nothing here depends on an external
//! autodiff or BLAS implementation, which keeps reconstructions reproducible
//! down to the last bit across machines and worker counts.

pub mod config;
pub mod csvio;
pub mod dataset;
pub mod epk;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod influence;
pub mod lasso;
pub mod model;
pub mod optim;
pub mod params;
pub mod rng;
pub mod svg;
pub mod tensor;
pub mod train;
pub mod trajectory;

pub use error::{Error, Result};
