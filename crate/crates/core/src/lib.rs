//! Optimal stopping and randomized stopping.
//!
//! The crate computes the value of optimal stopping problems and of their
//! randomized counterparts (stopping with an adapted distribution over
//! time, or with a bounded stopping intensity) and checks that the two
//! coincide:
//!
//! * [`tree`]: exact finite filtrations, stopping rules, Snell envelope.
//! * [`randomized`]: randomized plans, intensities, distribution paths,
//!   pathwise integrals, the time change and the exponential approximation.
//! * [`derandomize`]: extraction of a pure stopping rule that does at least
//!   as well as a randomized plan, and dyadic discretization of paths.
//! * [`diffusion`]: Monte Carlo for controlled diffusions with stopping or
//!   with a stopping intensity.
//! * [`experiment`]: config-driven experiments producing CSV tables.
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common `f64` instantiations.

// `!(x > y)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod derandomize;
pub mod diffusion;
pub mod error;
pub mod experiment;
pub mod path;
pub mod quadrature;
pub mod randomized;
pub mod scalar;
pub mod tree;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tree = tree::FilteredTree<f64>;
pub type Process = tree::AdaptedProcess<f64>;
pub type Plan = randomized::RandomizedPlan<f64>;
pub type Cdf = randomized::CdfPath<f64>;
pub type Intensity = randomized::IntensityPath<f64>;
pub type Lattice = tree::BinomialLattice<f64>;

pub type Tree32 = tree::FilteredTree<f32>;
pub type Process32 = tree::AdaptedProcess<f32>;
pub type Plan32 = randomized::RandomizedPlan<f32>;
