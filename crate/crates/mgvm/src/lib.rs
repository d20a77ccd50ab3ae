//! Distributions, samplers and approximate inference for circular data on the
//! (hyper-)torus.
//!
//! The central object is the multivariate Generalised von Mises (mGvM)
//! distribution, obtained by restricting a 2D-dimensional Gaussian to the unit
//! torus. Its one-dimensional conditionals are Generalised von Mises (GvM),
//! which makes two inference schemes tractable:
//!
//! * Gibbs sampling from the exact GvM conditionals ([`sampling`]);
//! * mean-field variational inference with GvM or von Mises factor fields,
//!   driven by series-evaluated trigonometric moments ([`variational`]).
//!
//! Two models whose posteriors are mGvM are built on top:
//!
//! * kernel-based transductive regression with circular outputs
//!   ([`regression`]);
//! * circular Principal Component Analysis with latent angles ([`cpca`]).
//!
//! Supporting modules: [`special`] (modified Bessel functions, GvM
//! normalisers/moments and the quadrature oracle), [`dist`] (parameter types,
//! conversions and conditionals), [`grid`] (dense torus grids used for
//! verification and KL comparisons), [`datasets`] (synthetic generators) and
//! [`io`] (the CSV/JSON formats shared with the `torusinf` CLI).
//!
//! Angles are radians in `[0, 2π)` throughout; reduction uses floored modulo.
//! All log-normaliser APIs return log values — exponentiation is the caller's
//! responsibility.

pub mod angle;
pub mod cpca;
pub mod datasets;
pub mod dist;
pub mod error;
pub mod grid;
pub mod io;
pub mod regression;
pub mod sampling;
pub mod special;
pub mod variational;

pub use dist::{GvmParams, MgvmCanonical, MgvmMinimal, MvmParams, VonMisesParams};
pub use error::{Error, Result};
pub use special::TrigMoments;
