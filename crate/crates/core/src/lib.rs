//! Bayesian modelling of multiple-breath washout (MBW) lung-function tests.

pub mod dist;
pub mod model;
pub mod sampler;
pub mod diagnostics;
pub mod inference;
pub mod synthgen;
pub mod hierarchy;
pub mod agreement;
pub mod truncation;
pub mod io;
pub mod cli;
