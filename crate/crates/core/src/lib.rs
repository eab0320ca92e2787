//! Unbiased multilevel Monte Carlo estimation of log marginal likelihoods.
//!
//! For a latent-variable model with importance distribution `q(z|x)`, the
//! log evidence `log p(x)` is written as a telescoping sum of antithetic
//! level differences `E[Z_l]`. Drawing the level `l` at random from a
//! geometric law `w_l` and reweighting by `1/w_l` gives an estimator of
//! `log p(X)` with no truncation bias, and the same draws give unbiased
//! gradients in `theta` (evidence) and `phi` (ELBO).
//!
//! Modules:
//! - [`logspace`]: log-domain reductions.
//! - [`models`]: the [`LatentModel`] trait and two models with oracles.
//! - [`estimator`]: level estimates and the batch evidence estimator.
//! - [`gradients`]: the theta and phi gradient estimators.
//! - [`diagnostics`]: variance profiles, decay fits, moment checks.
//! - [`trainer`]: joint evidence/ELBO ascent.

pub mod diagnostics;
pub mod draws;
pub mod error;
pub mod estimator;
pub mod gradients;
pub mod io;
pub mod logspace;
pub mod models;
pub mod par;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
pub use estimator::{EstimatorConfig, EvidenceEstimate, LevelDistribution, LevelEstimate};
pub use gradients::GradientEstimate;
pub use models::{
    BernoulliGaussian, DataPoint, Dataset, GaussianConjugate, LatentModel, LogWeightSample, ParamRole, ParamVector,
};
pub use par::Execution;
pub use rng::{DrawKey, RngStream, Substream};
