//! Stochastic proximal solvers for the LASSO and their k-step
//! communication-avoiding reformulations.
//!
//! The crate runs SFISTA and SPNM (stochastic FISTA and stochastic proximal
//! Newton) both in their classical form, which all-reduces one sampled Gram
//! pair per iteration, and in k-step form, which builds `k` sampled Gram
//! blocks locally and all-reduces them in a single collective. Everything
//! executes on a deterministic [`cluster::VirtualCluster`] that tallies
//! flops, messages, words and memory under the α-β-γ cost model
//! `time = γF + αL + βW`.
//!
//! The k-step solvers consume exactly the same samples as the classical
//! ones (the sampler is keyed by global iteration) and reduce every Gram
//! entry through the same tree, so their iterates agree with the classical
//! iterates to the last bit while sending `k` times fewer messages.

pub mod ca;
pub mod classical;
pub mod cluster;
pub mod dataset;
mod error;
pub mod linalg;
pub mod prox;
pub mod runner;

pub use error::{Error, Result};
