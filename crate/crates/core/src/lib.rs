//! Training laboratory for dense networks that traces the bias-variance
//! decomposition of test loss over epochs and measures optimization variance
//! (OV), the spread of logits under one-step updates drawn from different
//! training batches.
//!
//! Module map:
//!
//! - [`nn`]: dense ReLU networks over a flat parameter vector, exact
//!   softmax-cross-entropy backprop and SGD/Adam with side-effect free
//!   update previews.
//! - [`decomp`]: MSE / CE / zero-one losses, expected outputs, the β
//!   coefficient and ensemble bias/variance estimates.
//! - [`ov`]: optimization variance, gradient variance and the Jacobian
//!   first-order approximation that links the two.
//! - [`harness`]: datasets, label noise, traced training runs, ensembles,
//!   early stopping, width sweeps and CSV traces.
//! - [`cli`]: the `ovlab` command line.

pub mod cli;
pub mod decomp;
pub mod error;
pub mod harness;
pub mod nn;
pub mod ov;
pub mod rng;

pub use error::{Error, Result};
