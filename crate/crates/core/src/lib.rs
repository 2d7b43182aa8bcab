//! Bayesian evidence synthesis: probability models over a DAG of basic and
//! functional parameters, fitted by adaptive Metropolis-within-Gibbs, with
//! a multi-source prevalence model and an ODE-driven incidence model.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::should_implement_trait)]

pub mod cli;
pub mod distributions;
pub mod dynamics;
pub mod graph;
pub mod prevalence;
pub mod sampler;
pub mod synthgen;
