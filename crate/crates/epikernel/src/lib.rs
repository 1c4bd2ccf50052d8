//! Bayesian spatio-temporal zero-inflated count models with a latent
//! Ornstein-Uhlenbeck log-rate, spatial transmission kernels, g-prior-family
//! variable selection, and branching-process disease-control analytics.
//!
//! The crate is organized around interchangeable strategies selected by name
//! at runtime: six transmission kernel families ([`kernels`]), five
//! coefficient-prior families ([`model::priors`]), two model-space priors,
//! and the offspring distributions of the branching layer ([`branching`]).

pub mod branching;
pub mod data;
pub mod kernels;
pub mod latent;
pub mod model;
pub(crate) mod num;
pub mod sampler;
pub mod sim;
pub mod tables;
