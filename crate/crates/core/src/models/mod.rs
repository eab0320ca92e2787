//! Latent-variable models.
//!
//! A model supplies the three densities that make up the importance weight
//! `f(x, z) = p(x|z) p(z) / q(z|x)`, a sampler for `q`, and closed-form
//! gradients. All variance-type parameters are stored as logs so that every
//! parameter vector is unconstrained.

mod bernoulli;
mod dataset;
mod gaussian;
pub mod quadrature;

pub use bernoulli::BernoulliGaussian;
pub use dataset::{DataHeader, Dataset};
pub use gaussian::GaussianConjugate;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamRole {
    Theta,
    Phi,
}

/// Model parameters (`theta` for the generative side, `phi` for `q`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    role: ParamRole,
    entries: Vec<f64>,
}

impl ParamVector {
    pub fn new(role: ParamRole, entries: Vec<f64>) -> Result<Self> {
        if let Some(v) = entries.iter().find(|v| !v.is_finite()) {
            return Err(Error::contract(format!("non-finite {role:?} entry {v}")));
        }
        Ok(ParamVector { role, entries })
    }

    pub fn theta(entries: Vec<f64>) -> Result<Self> {
        Self::new(ParamRole::Theta, entries)
    }

    pub fn phi(entries: Vec<f64>) -> Result<Self> {
        Self::new(ParamRole::Phi, entries)
    }

    pub fn role(&self) -> ParamRole {
        self.role
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Mutable access for optimizers; callers re-check finiteness.
    pub fn entries_mut(&mut self) -> &mut [f64] {
        &mut self.entries
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|v| v.is_finite())
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.entries
    }
}

/// One observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    x: Vec<f64>,
}

impl DataPoint {
    pub fn new(x: Vec<f64>) -> Result<Self> {
        if let Some(v) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::contract(format!("non-finite observation entry {v}")));
        }
        Ok(DataPoint { x })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.x
    }
}

/// One latent draw with its log-weight and the gradients the estimators need.
#[derive(Debug, Clone, PartialEq)]
pub struct LogWeightSample {
    pub z: Vec<f64>,
    pub log_f: f64,
    /// `∇_θ log f(x, z)`.
    pub grad_theta_log_f: Vec<f64>,
    /// `∇_φ log q(z|x)`; note `∇_φ log f = -∇_φ log q`.
    pub grad_phi_log_q: Vec<f64>,
}

/// A latent-variable model with an importance distribution `q(z|x)`.
///
/// Implementations are immutable; all randomness comes through the `rng`
/// arguments so evaluation is safe from many threads at once.
pub trait LatentModel: Send + Sync {
    fn name(&self) -> &'static str;
    fn data_dim(&self) -> usize;
    fn latent_dim(&self) -> usize;
    fn theta_dim(&self) -> usize;
    fn phi_dim(&self) -> usize;

    /// Writes a draw from `q(·|x)` into `z`.
    fn sample_q(&self, x: &[f64], phi: &[f64], rng: &mut dyn RngCore, z: &mut [f64]);

    /// `log p(x|z) + log p(z)`.
    fn log_joint(&self, x: &[f64], z: &[f64], theta: &[f64]) -> f64;

    /// `log q(z|x)`.
    fn log_q(&self, x: &[f64], z: &[f64], phi: &[f64]) -> f64;

    /// Returns `log f(x, z)` and fills `∇_θ log f` and `∇_φ log q`.
    fn log_weight_into(
        &self,
        x: &[f64],
        z: &[f64],
        theta: &[f64],
        phi: &[f64],
        grad_theta_log_f: &mut [f64],
        grad_phi_log_q: &mut [f64],
    ) -> f64;

    fn log_weight(&self, x: &[f64], z: &[f64], theta: &[f64], phi: &[f64]) -> LogWeightSample {
        let mut gt = vec![0.0; self.theta_dim()];
        let mut gp = vec![0.0; self.phi_dim()];
        let log_f = self.log_weight_into(x, z, theta, phi, &mut gt, &mut gp);
        LogWeightSample {
            z: z.to_vec(),
            log_f,
            grad_theta_log_f: gt,
            grad_phi_log_q: gp,
        }
    }

    /// Draws one observation from the generative model at `theta`.
    fn sample_data(&self, theta: &[f64], rng: &mut dyn RngCore) -> Vec<f64>;

    /// Exact `log p_θ(x)` when available.
    fn oracle_log_evidence(&self, _x: &[f64], _theta: &[f64]) -> Option<f64> {
        None
    }

    /// Exact `∇_θ log p_θ(x)` when available.
    fn oracle_grad_log_evidence(&self, _x: &[f64], _theta: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Exact `∇_φ E_q[log f]` when available.
    fn oracle_elbo_grad_phi(&self, _x: &[f64], _theta: &[f64], _phi: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// `KL(q_φ(z|x) ‖ p_θ(z|x))` for models with an analytic posterior.
    fn oracle_posterior_kl(&self, _x: &[f64], _theta: &[f64], _phi: &[f64]) -> Result<f64> {
        Err(Error::Unsupported {
            model: self.name(),
            operation: "posterior KL oracle",
        })
    }

    /// Checks parameter lengths and roles against this model.
    fn check_params(&self, theta: &ParamVector, phi: &ParamVector) -> Result<()> {
        if theta.role() != ParamRole::Theta || phi.role() != ParamRole::Phi {
            return Err(Error::contract("theta/phi arguments passed in the wrong roles"));
        }
        if theta.len() != self.theta_dim() {
            return Err(Error::contract(format!(
                "{}: theta has length {}, expected {}",
                self.name(),
                theta.len(),
                self.theta_dim()
            )));
        }
        if phi.len() != self.phi_dim() {
            return Err(Error::contract(format!(
                "{}: phi has length {}, expected {}",
                self.name(),
                phi.len(),
                self.phi_dim()
            )));
        }
        Ok(())
    }
}

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `log σ(a)` without overflow.
pub(crate) fn log_sigmoid(a: f64) -> f64 {
    -softplus(-a)
}

pub(crate) fn softplus(y: f64) -> f64 {
    y.max(0.0) + (-y.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}
