//! Level estimates, the level distribution, and the batch estimator of
//! `log p_θ(X)`.
//!
//! For one data point `x`, level `l` uses `n0 * 2^l` draws from `q(·|x)`:
//!
//! ```text
//! P_l   = log mean f(x, z_i)                     over all draws
//! P_a   = log mean over the first half, P_b the second half
//! Z_0   = P_0
//! Z_l   = P_l - (P_a + P_b) / 2                  (l > 0)
//! ```
//!
//! `Σ_l E[Z_l] = log p(x)`. The batch estimator samples `M` pairs
//! `(x_m, l_m)` and returns `(N/M) Σ_m Z_{l_m}(x_m) / w_{l_m}`.

use std::collections::BTreeMap;

use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::draws::LatentDraws;
use crate::error::{Error, Result};
use crate::gradients::{grad_phi_elbo_level, grad_theta_level};
use crate::logspace::StreamingMoments;
use crate::models::{DataPoint, Dataset, LatentModel, ParamVector};
use crate::par::{self, Execution};
use crate::rng::{DrawKey, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Draws at level 0.
    pub n0: usize,
    /// Pairs `(x, l)` per batch.
    pub batch_size: usize,
    /// `log2(r)` for the level law `w_l = (1 - r) r^l`.
    pub level_ratio_log2: f64,
    /// Largest admissible level; exceeding it is an error, not a truncation.
    pub level_cap: u32,
    pub seed: u64,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            n0: 8,
            batch_size: 16,
            level_ratio_log2: -1.5,
            level_cap: 40,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n0 == 0 {
            return Err(Error::contract("n0 must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::contract("batch_size must be at least 1"));
        }
        if self.level_cap == 0 {
            return Err(Error::contract("level_cap must be at least 1"));
        }
        self.level_distribution().map(|_| ())
    }

    pub fn level_distribution(&self) -> Result<LevelDistribution> {
        LevelDistribution::new(self.level_ratio_log2.exp2(), self.level_cap)
    }

    /// Latent draws used at `level`.
    pub fn draws_at(&self, level: u32) -> usize {
        self.n0 << level
    }
}

/// The geometric law `w_l = (1 - r) r^l` on `l = 0, 1, 2, ...`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelDistribution {
    ratio: f64,
    cap: u32,
}

impl LevelDistribution {
    /// `ratio` must lie in `(0, 1/2)` so that `Σ 2^l w_l` is finite.
    pub fn new(ratio: f64, cap: u32) -> Result<Self> {
        if !(ratio > 0.0 && ratio < 0.5) {
            return Err(Error::contract(format!("level ratio {ratio} outside (0, 1/2)")));
        }
        Ok(LevelDistribution { ratio, cap })
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn cap(&self) -> u32 {
        self.cap
    }

    pub fn mass(&self, level: u32) -> f64 {
        (1.0 - self.ratio) * self.ratio.powi(level as i32)
    }

    /// Inverse CDF: `floor(ln u / ln r)`, so `P(l >= k) = r^k`.
    pub fn sample(&self, u: f64) -> Result<u32> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::contract(format!("uniform variate {u} outside (0, 1)")));
        }
        let level = (u.ln() / self.ratio.ln()).floor() as u64;
        if level > u64::from(self.cap) {
            return Err(Error::LevelCap { level, cap: self.cap });
        }
        Ok(level as u32)
    }

    /// `Σ_l 2^l w_l = (1 - r) / (1 - 2r)`, the mean cost in units of `n0`.
    pub fn expected_cost_factor(&self) -> f64 {
        (1.0 - self.ratio) / (1.0 - 2.0 * self.ratio)
    }
}

/// How the coarse term of a level difference is formed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coupling {
    /// `P_l - (P_a + P_b)/2`.
    #[default]
    Antithetic,
    /// `P_l - P_a`; kept for comparison only, its variance decays one order slower.
    Naive,
}

/// A realized level difference and its companions from the same draws.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelEstimate {
    pub level: u32,
    /// `Z_l`.
    pub z_value: f64,
    /// `∇_θ Z_l`.
    pub grad_theta: Vec<f64>,
    /// Level-`l` average of the score-function ELBO integrand.
    pub phi_grad_term: Vec<f64>,
    /// Latent draws consumed (`n0 * 2^l`).
    pub cost: u64,
    pub data_index: usize,
    pub rng_stamp: DrawKey,
    /// `P_l`.
    pub log_mean_fine: f64,
    /// `(P_a, P_b)` for `l > 0`.
    pub log_mean_halves: Option<(f64, f64)>,
}

/// The terms of one level difference computed from a block of draws.
pub(crate) struct LevelTerms {
    pub z_value: f64,
    pub grad_theta: Vec<f64>,
    pub fine: f64,
    pub halves: Option<(f64, f64)>,
}

pub(crate) fn level_terms(draws: &LatentDraws, level: u32, coupling: Coupling) -> Result<LevelTerms> {
    let n = draws.len();
    let fine = draws.log_mean(0..n)?;
    if level == 0 {
        return Ok(LevelTerms {
            z_value: fine,
            grad_theta: grad_theta_level(draws, 0, coupling)?,
            fine,
            halves: None,
        });
    }
    let half = n / 2;
    let a = draws.log_mean(0..half)?;
    let b = draws.log_mean(half..n)?;
    let z_value = match coupling {
        Coupling::Antithetic => fine - 0.5 * (a + b),
        Coupling::Naive => fine - a,
    };
    Ok(LevelTerms {
        z_value,
        grad_theta: grad_theta_level(draws, level, coupling)?,
        fine,
        halves: Some((a, b)),
    })
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn level_estimate_from_rng(
    model: &dyn LatentModel,
    x: &[f64],
    data_index: usize,
    theta: &[f64],
    phi: &[f64],
    level: u32,
    n0: usize,
    rng: &mut dyn rand::RngCore,
    stamp: DrawKey,
    coupling: Coupling,
) -> Result<LevelEstimate> {
    let n = n0 << level;
    let draws = LatentDraws::generate(model, x, data_index, theta, phi, n, rng)?;
    let terms = level_terms(&draws, level, coupling)?;
    Ok(LevelEstimate {
        level,
        z_value: terms.z_value,
        grad_theta: terms.grad_theta,
        phi_grad_term: grad_phi_elbo_level(&draws),
        cost: n as u64,
        data_index,
        rng_stamp: stamp,
        log_mean_fine: terms.fine,
        log_mean_halves: terms.halves,
    })
}

/// One level difference at a fixed level, drawn from the stream `key`.
#[allow(clippy::too_many_arguments)]
pub fn level_estimate(
    model: &dyn LatentModel,
    x: &DataPoint,
    data_index: usize,
    theta: &ParamVector,
    phi: &ParamVector,
    level: u32,
    cfg: &EstimatorConfig,
    key: DrawKey,
) -> Result<LevelEstimate> {
    level_estimate_coupled(model, x, data_index, theta, phi, level, cfg, key, Coupling::Antithetic)
}

/// [`level_estimate`] with an explicit coupling of the coarse term.
#[allow(clippy::too_many_arguments)]
pub fn level_estimate_coupled(
    model: &dyn LatentModel,
    x: &DataPoint,
    data_index: usize,
    theta: &ParamVector,
    phi: &ParamVector,
    level: u32,
    cfg: &EstimatorConfig,
    key: DrawKey,
    coupling: Coupling,
) -> Result<LevelEstimate> {
    cfg.validate()?;
    model.check_params(theta, phi)?;
    if level > cfg.level_cap {
        return Err(Error::LevelCap {
            level: u64::from(level),
            cap: cfg.level_cap,
        });
    }
    if x.as_slice().len() != model.data_dim() {
        return Err(Error::contract("data point dimension does not match the model"));
    }
    let mut rng = key.rng();
    level_estimate_from_rng(
        model,
        x.as_slice(),
        data_index,
        theta.as_slice(),
        phi.as_slice(),
        level,
        cfg.n0,
        &mut rng,
        key,
        coupling,
    )
}

/// Draws the `M` members of one batch: member `m` takes its level, data
/// index, and latents from `key.with_member(m)`.
pub(crate) fn batch_members(
    model: &dyn LatentModel,
    data: &Dataset,
    theta: &ParamVector,
    phi: &ParamVector,
    cfg: &EstimatorConfig,
    key: DrawKey,
) -> Result<Vec<LevelEstimate>> {
    cfg.validate()?;
    model.check_params(theta, phi)?;
    if data.dim() != model.data_dim() {
        return Err(Error::contract("dataset dimension does not match the model"));
    }
    let dist = cfg.level_distribution()?;
    let n_data = data.len();
    par::try_map_indexed(cfg.batch_size, cfg.execution, |m| {
        let stamp = key.with_member(m as u64);
        let mut rng = stamp.rng();
        let level = dist.sample(rng.sample(Open01))?;
        let idx = rng.random_range(0..n_data);
        level_estimate_from_rng(
            model,
            data.get(idx).as_slice(),
            idx,
            theta.as_slice(),
            phi.as_slice(),
            level,
            cfg.n0,
            &mut rng,
            stamp,
            Coupling::Antithetic,
        )
    })
}

/// Result of one evidence batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceEstimate {
    /// Estimate of `log p_θ(X)`.
    pub value: f64,
    /// `N * sd(Z/w) / sqrt(M)`; zero when `M = 1`.
    pub std_error: f64,
    pub total_cost: u64,
    pub per_level_counts: BTreeMap<u32, u64>,
}

pub(crate) fn fold_evidence(members: &[LevelEstimate], dist: &LevelDistribution, n_total: usize) -> EvidenceEstimate {
    let mut moments = StreamingMoments::new();
    let mut counts = BTreeMap::new();
    let mut total_cost = 0;
    for est in members {
        moments.push(est.z_value / dist.mass(est.level));
        *counts.entry(est.level).or_insert(0) += 1;
        total_cost += est.cost;
    }
    let n = n_total as f64;
    EvidenceEstimate {
        value: n * moments.mean(),
        std_error: moments.std_error().map_or(0.0, |se| n * se),
        total_cost,
        per_level_counts: counts,
    }
}

/// One batch of the unbiased estimator of `log p_θ(X)`.
///
/// Each call consumes one counter of `stream`.
pub fn estimate_log_evidence(
    model: &dyn LatentModel,
    data: &Dataset,
    theta: &ParamVector,
    phi: &ParamVector,
    cfg: &EstimatorConfig,
    stream: &mut RngStream,
) -> Result<EvidenceEstimate> {
    let members = batch_members(model, data, theta, phi, cfg, stream.next_key())?;
    Ok(fold_evidence(&members, &cfg.level_distribution()?, data.len()))
}

/// `Σ_x log p_θ(x)` from the model oracle, when it has one.
pub fn oracle_log_evidence(model: &dyn LatentModel, data: &Dataset, theta: &ParamVector) -> Option<f64> {
    data.points()
        .iter()
        .map(|p| model.oracle_log_evidence(p.as_slice(), theta.as_slice()))
        .sum()
}
