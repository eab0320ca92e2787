//! A block of latent draws for one data point, shared by every estimator
//! evaluated on it.

use std::ops::Range;

use rand::RngCore;

use crate::error::{Error, Result};
use crate::logspace::{log_mean_exp, softmax_weighted_mean};
use crate::models::LatentModel;

/// `n` draws `z_i ~ q(·|x)` with `log f(x, z_i)`, `∇_θ log f` and `∇_φ log q`
/// stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDraws {
    log_f: Vec<f64>,
    grad_theta: Vec<f64>,
    grad_phi_log_q: Vec<f64>,
    theta_dim: usize,
    phi_dim: usize,
}

impl LatentDraws {
    /// Draws `n` latents in order from `rng`.
    ///
    /// A non-finite log-weight aborts with the offending `(x, z)` identified.
    pub fn generate(
        model: &dyn LatentModel,
        x: &[f64],
        data_index: usize,
        theta: &[f64],
        phi: &[f64],
        n: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        let (td, pd) = (model.theta_dim(), model.phi_dim());
        let mut log_f = Vec::with_capacity(n);
        let mut grad_theta = vec![0.0; n * td];
        let mut grad_phi_log_q = vec![0.0; n * pd];
        let mut z = vec![0.0; model.latent_dim()];
        for i in 0..n {
            model.sample_q(x, phi, rng, &mut z);
            let lf = model.log_weight_into(
                x,
                &z,
                theta,
                phi,
                &mut grad_theta[i * td..(i + 1) * td],
                &mut grad_phi_log_q[i * pd..(i + 1) * pd],
            );
            if !lf.is_finite() {
                return Err(Error::NonFiniteWeight {
                    data_index,
                    z: z.clone(),
                    log_f: lf,
                });
            }
            log_f.push(lf);
        }
        Ok(LatentDraws {
            log_f,
            grad_theta,
            grad_phi_log_q,
            theta_dim: td,
            phi_dim: pd,
        })
    }

    pub fn len(&self) -> usize {
        self.log_f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_f.is_empty()
    }

    pub fn log_f(&self) -> &[f64] {
        &self.log_f
    }

    pub fn theta_dim(&self) -> usize {
        self.theta_dim
    }

    pub fn phi_dim(&self) -> usize {
        self.phi_dim
    }

    /// Row `i` of `∇_θ log f`.
    pub fn grad_theta_row(&self, i: usize) -> &[f64] {
        &self.grad_theta[i * self.theta_dim..(i + 1) * self.theta_dim]
    }

    /// Row `i` of `∇_φ log q`.
    pub fn grad_phi_row(&self, i: usize) -> &[f64] {
        &self.grad_phi_log_q[i * self.phi_dim..(i + 1) * self.phi_dim]
    }

    /// `log` of the mean weight over `range`.
    pub fn log_mean(&self, range: Range<usize>) -> Result<f64> {
        log_mean_exp(&self.log_f[range])
    }

    /// `Σ ∇_θ f_i / Σ f_i` over `range`, via softmax weights.
    pub fn weighted_grad_theta(&self, range: Range<usize>) -> Result<Vec<f64>> {
        let td = self.theta_dim;
        softmax_weighted_mean(
            &self.log_f[range.clone()],
            &self.grad_theta[range.start * td..range.end * td],
            td,
        )
    }
}
