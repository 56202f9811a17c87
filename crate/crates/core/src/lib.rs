//! Sparse variational Gaussian process classification with logistic likelihood.

pub mod bound_jj;
pub mod bound_svi;
pub mod bound_taylor;
mod collapsed;
pub mod data;
pub mod error;
pub mod inducing;
pub mod kernels;
pub mod logistic;
pub mod model_io;
pub mod moments;
pub mod optim;
pub mod quadrature;
pub mod trace_io;
pub mod trainers;

pub use error::{Error, Result};
