//! Finite mixtures of Gaussian-noised distributions supported on convex
//! polytopes.
//!
//! Each observation picks a component `k` with probability `pi_k`, draws
//! simplex weights `beta ~ Dir(alpha)`, and is observed as
//! `Theta_k beta + sigma_k * eps` with standard Gaussian noise. The crate
//! covers simulation, four estimators (atom-approximation EM, Gaussian
//! moment matching, a spectral moment method and pseudo-marginal MCMC),
//! permutation-matched evaluation, identifiability geometry and BIC model
//! selection.
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the crate root fix the scalar to `f64`.

pub mod dirichlet;
pub mod em;
pub mod error;
pub mod experiments;
pub mod gaussian;
pub mod geometry;
pub mod kmeans;
pub mod linalg;
pub mod mcmc;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod select;
pub mod simulate;
pub mod spectral;
mod scalar;

pub use error::{Error, Result};
pub use model::{Dataset, LatentAtoms, MixtureParams};
pub use scalar::Scalar;

pub type Params = MixtureParams<f64>;
pub type Params32 = MixtureParams<f32>;
pub type Data = Dataset<f64>;
pub type Data32 = Dataset<f32>;
pub type Atoms = LatentAtoms<f64>;
