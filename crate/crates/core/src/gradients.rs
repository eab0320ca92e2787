//! Gradient estimators that share the latent draws of the evidence estimator.
//!
//! - `theta`: the MLMC difference `∇_θ Z_l`, where each ratio
//!   `mean ∇_θ f / mean f` is a softmax-weighted average of `∇_θ log f`.
//!   Batch form `(N/M) Σ_m ∇_θ Z_{l_m}(x_m) / w_{l_m}`.
//! - `phi`: the score-function ELBO integrand
//!   `∇_φ f/f + log f ∇_φ log q = (log f - 1) ∇_φ log q`, averaged plainly over
//!   the level-`l` draws. Every level average is unbiased for the ELBO
//!   gradient, so the batch form `(N/M) Σ_m` carries no `1/w` factor.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::draws::LatentDraws;
use crate::error::Result;
use crate::estimator::{batch_members, fold_evidence, Coupling, EstimatorConfig, LevelEstimate};
use crate::models::{Dataset, LatentModel, ParamVector};
use crate::rng::RngStream;

/// `∇_θ Z_l` from a block of `n0 * 2^l` draws.
pub fn grad_theta_level(draws: &LatentDraws, level: u32, coupling: Coupling) -> Result<Vec<f64>> {
    let n = draws.len();
    let fine = draws.weighted_grad_theta(0..n)?;
    if level == 0 {
        return Ok(fine);
    }
    let half = n / 2;
    let a = draws.weighted_grad_theta(0..half)?;
    Ok(match coupling {
        Coupling::Antithetic => {
            let b = draws.weighted_grad_theta(half..n)?;
            fine.iter()
                .zip(a.iter().zip(&b))
                .map(|(f, (a, b))| f - 0.5 * (a + b))
                .collect()
        }
        Coupling::Naive => fine.iter().zip(&a).map(|(f, a)| f - a).collect(),
    })
}

/// Plain average of `(log f_i - 1) ∇_φ log q(z_i|x)` over all draws.
pub fn grad_phi_elbo_level(draws: &LatentDraws) -> Vec<f64> {
    let mut out = vec![0.0; draws.phi_dim()];
    for (i, lf) in draws.log_f().iter().enumerate() {
        for (o, g) in out.iter_mut().zip(draws.grad_phi_row(i)) {
            *o += (lf - 1.0) * g;
        }
    }
    let n = draws.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// One batch of both gradient estimators, plus the evidence estimate from
/// the same draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientEstimate {
    /// Estimate of `∇_θ log p_θ(X)`.
    pub grad_theta: Vec<f64>,
    /// Estimate of `∇_φ L_{θ,φ}(X)`.
    pub grad_phi: Vec<f64>,
    /// Estimate of `log p_θ(X)` from the same batch.
    pub log_evidence: f64,
    pub total_cost: u64,
    pub per_level_counts: BTreeMap<u32, u64>,
}

pub(crate) fn fold_gradients(
    members: &[LevelEstimate],
    cfg: &EstimatorConfig,
    n_total: usize,
    theta_dim: usize,
    phi_dim: usize,
) -> Result<GradientEstimate> {
    let dist = cfg.level_distribution()?;
    let scale = n_total as f64 / members.len() as f64;
    let mut grad_theta = vec![0.0; theta_dim];
    let mut grad_phi = vec![0.0; phi_dim];
    for est in members {
        let inv_w = 1.0 / dist.mass(est.level);
        for (acc, g) in grad_theta.iter_mut().zip(&est.grad_theta) {
            *acc += g * inv_w;
        }
        for (acc, g) in grad_phi.iter_mut().zip(&est.phi_grad_term) {
            *acc += g;
        }
    }
    grad_theta.iter_mut().for_each(|g| *g *= scale);
    grad_phi.iter_mut().for_each(|g| *g *= scale);
    let ev = fold_evidence(members, &dist, n_total);
    Ok(GradientEstimate {
        grad_theta,
        grad_phi,
        log_evidence: ev.value,
        total_cost: ev.total_cost,
        per_level_counts: ev.per_level_counts,
    })
}

/// One batch of `(x_m, l_m, z draws)` feeding both gradient estimators.
///
/// Each call consumes one counter of `stream`.
pub fn estimate_gradients(
    model: &dyn LatentModel,
    data: &Dataset,
    theta: &ParamVector,
    phi: &ParamVector,
    cfg: &EstimatorConfig,
    stream: &mut RngStream,
) -> Result<GradientEstimate> {
    let members = batch_members(model, data, theta, phi, cfg, stream.next_key())?;
    fold_gradients(&members, cfg, data.len(), model.theta_dim(), model.phi_dim())
}

/// Batch-level per-member contributions, exposed for replication studies.
pub fn gradient_members(
    model: &dyn LatentModel,
    data: &Dataset,
    theta: &ParamVector,
    phi: &ParamVector,
    cfg: &EstimatorConfig,
    stream: &mut RngStream,
) -> Result<Vec<LevelEstimate>> {
    batch_members(model, data, theta, phi, cfg, stream.next_key())
}
