//! Analysis toolkit for recursive tree processes on finite alphabets.
//!
//! A model is a finite state set `S`, a finite innovation set `E`, probability
//! measures `mu` on `S` and `nu` on `E`, and a total recursion table
//! `phi: S x S x E -> S` whose pushforward of `mu (x) mu (x) nu` is `mu` again.
//! Assigning i.i.d. innovations to the vertices of the infinite binary tree and
//! solving the recursion downward yields a tree-indexed process; the central
//! question is *endogeny*: is the process a function of the innovations alone?
//!
//! The crate builds the two-point coupling kernel on `S^2`, extracts the Perron
//! root of its off-diagonal restriction, and classifies endogeny by the
//! threshold `2*rho = 1`, with non-degeneracy diagnostics for the critical
//! case. On top of that sit the superoperator calculus (jump generators,
//! spectral measures of the leaf-refresh number operator, semigroup limits),
//! a brute-force enumeration oracle for small trees, and Monte Carlo dynamics
//! for scales the oracle cannot reach.
//!
//! The numerical core is generic over the scalar type (`f32` or `f64`) through
//! the [`Scalar`] trait; the aliases below fix `f64`, which is what the CLI
//! and the acceptance suite use.

#![forbid(unsafe_code)]

pub mod endogeny;
pub mod error;
pub mod kernels;
pub mod linalg;
pub mod model;
pub mod montecarlo;
pub mod oracle;
pub mod rng;
pub mod scalar;
pub mod spectral;
pub mod superop;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default-precision model.
pub type Model = model::RtpModel<f64>;
/// Default-precision two-point kernel.
pub type Kernel = kernels::PairKernel<f64>;
/// Default-precision pair measure.
pub type Measure = kernels::PairMeasure<f64>;
/// Default-precision Perron data of the off-diagonal kernel.
pub type Spectral = spectral::SpectralData<f64>;
/// Default-precision operator on functions over the state set.
pub type Operator = superop::OperatorOnS<f64>;
/// Default-precision endogeny verdict.
pub type Verdict = endogeny::EndogenyVerdict<f64>;
