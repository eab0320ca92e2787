//! Joint training: ascend the MLMC estimate of `∇_θ log p_θ(X)` in `theta`
//! and the score-function ELBO gradient in `phi`, one shared batch per step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{estimate_log_evidence, oracle_log_evidence, EstimatorConfig};
use crate::gradients::estimate_gradients;
use crate::io::{Cell, CsvTable};
use crate::models::{Dataset, LatentModel, ParamVector};
use crate::rng::{RngStream, Substream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr_theta: f64,
    pub lr_phi: f64,
    /// Heavy-ball coefficient in `[0, 1)`.
    pub momentum: f64,
    pub eval_every: usize,
    /// Evidence batches averaged per evaluation.
    pub eval_replications: usize,
    pub estimator: EstimatorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            lr_theta: 1e-3,
            lr_phi: 2e-4,
            momentum: 0.0,
            eval_every: 100,
            eval_replications: 8,
            estimator: EstimatorConfig {
                batch_size: 256,
                ..EstimatorConfig::default()
            },
        }
    }
}

impl TrainConfig {
    /// Learning rates may be zero (frozen parameters) but not negative.
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.eval_every == 0 || self.eval_replications == 0 {
            return Err(Error::contract(
                "steps, eval_every and eval_replications must be positive",
            ));
        }
        if !(self.lr_theta >= 0.0 && self.lr_phi >= 0.0) || !self.lr_theta.is_finite() || !self.lr_phi.is_finite() {
            return Err(Error::contract("learning rates must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::contract("momentum must lie in [0, 1)"));
        }
        self.estimator.validate()
    }
}

/// Metrics recorded at one evaluation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Number of updates applied so far.
    pub step: usize,
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    pub evidence_estimate: f64,
    pub evidence_oracle: Option<f64>,
    /// Mean of `KL(q(z|x) ‖ p(z|x))` over the dataset.
    pub kl_oracle: Option<f64>,
    pub grad_norm_theta: f64,
    pub grad_norm_phi: f64,
    /// Latent draws consumed by training updates.
    pub cumulative_cost: u64,
}

/// Final state of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub final_theta: Vec<f64>,
    pub final_phi: Vec<f64>,
    pub final_evidence: f64,
    pub final_evidence_oracle: Option<f64>,
    pub final_kl_oracle: Option<f64>,
    pub total_cost: u64,
    pub seed: u64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Mean posterior KL over `data`, if the model has the oracle.
pub fn mean_posterior_kl(
    model: &dyn LatentModel,
    data: &Dataset,
    theta: &ParamVector,
    phi: &ParamVector,
) -> Option<f64> {
    let mut total = 0.0;
    for p in data.points() {
        total += model
            .oracle_posterior_kl(p.as_slice(), theta.as_slice(), phi.as_slice())
            .ok()?;
    }
    Some(total / data.len() as f64)
}

struct Evaluator<'a> {
    model: &'a dyn LatentModel,
    data: &'a Dataset,
    cfg: &'a TrainConfig,
    stream: RngStream,
}

impl Evaluator<'_> {
    fn record(
        &mut self,
        step: usize,
        theta: &ParamVector,
        phi: &ParamVector,
        grads: (f64, f64),
        cost: u64,
    ) -> Result<RunRecord> {
        let mut total = 0.0;
        for _ in 0..self.cfg.eval_replications {
            total +=
                estimate_log_evidence(self.model, self.data, theta, phi, &self.cfg.estimator, &mut self.stream)?.value;
        }
        Ok(RunRecord {
            step,
            theta: theta.as_slice().to_vec(),
            phi: phi.as_slice().to_vec(),
            evidence_estimate: total / self.cfg.eval_replications as f64,
            evidence_oracle: oracle_log_evidence(self.model, self.data, theta),
            kl_oracle: mean_posterior_kl(self.model, self.data, theta, phi),
            grad_norm_theta: grads.0,
            grad_norm_phi: grads.1,
            cumulative_cost: cost,
        })
    }
}

fn ascend(params: &mut ParamVector, velocity: &mut [f64], grad: &[f64], lr: f64, momentum: f64) {
    if lr == 0.0 {
        return;
    }
    for ((p, v), g) in params.entries_mut().iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = momentum * *v + g;
        *p += lr * *v;
    }
}

/// Runs `cfg.steps` updates from `(theta0, phi0)`.
///
/// Training batches draw from the `Latents` substream of
/// `cfg.estimator.seed`, evaluations from `Eval`. Records are taken at
/// step 0, every `eval_every` steps, and at the final step.
pub fn train(
    model: &dyn LatentModel,
    data: &Dataset,
    theta0: &ParamVector,
    phi0: &ParamVector,
    cfg: &TrainConfig,
) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    model.check_params(theta0, phi0)?;
    let seed = cfg.estimator.seed;
    let mut train_stream = RngStream::new(seed, Substream::Latents);
    let mut eval = Evaluator {
        model,
        data,
        cfg,
        stream: RngStream::new(seed, Substream::Eval),
    };

    let mut theta = theta0.clone();
    let mut phi = phi0.clone();
    let mut vel_theta = vec![0.0; theta.len()];
    let mut vel_phi = vec![0.0; phi.len()];
    let mut cost = 0u64;
    let mut records = vec![eval.record(0, &theta, &phi, (0.0, 0.0), 0)?];

    for step in 1..=cfg.steps {
        let g = estimate_gradients(model, data, &theta, &phi, &cfg.estimator, &mut train_stream)?;
        let grads = (norm(&g.grad_theta), norm(&g.grad_phi));
        cost += g.total_cost;
        ascend(&mut theta, &mut vel_theta, &g.grad_theta, cfg.lr_theta, cfg.momentum);
        ascend(&mut phi, &mut vel_phi, &g.grad_phi, cfg.lr_phi, cfg.momentum);
        if !theta.is_finite() || !phi.is_finite() {
            return Err(Error::Divergence {
                step,
                grad_norm_theta: grads.0,
                grad_norm_phi: grads.1,
            });
        }
        if step % cfg.eval_every == 0 || step == cfg.steps {
            records.push(eval.record(step, &theta, &phi, grads, cost)?);
        }
    }
    Ok(records)
}

pub fn summarize(records: &[RunRecord], seed: u64) -> Option<TrainSummary> {
    let last = records.last()?;
    Some(TrainSummary {
        final_theta: last.theta.clone(),
        final_phi: last.phi.clone(),
        final_evidence: last.evidence_estimate,
        final_evidence_oracle: last.evidence_oracle,
        final_kl_oracle: last.kl_oracle,
        total_cost: last.cumulative_cost,
        seed,
    })
}

/// One row per record; parameter vectors are spread over `theta_k`/`phi_k` columns.
pub fn records_table(records: &[RunRecord]) -> Result<CsvTable> {
    let (td, pd) = records.first().map_or((0, 0), |r| (r.theta.len(), r.phi.len()));
    let mut header = vec!["step".to_string()];
    header.extend((0..td).map(|k| format!("theta_{k}")));
    header.extend((0..pd).map(|k| format!("phi_{k}")));
    header.extend(
        [
            "evidence_estimate",
            "evidence_oracle",
            "kl_oracle",
            "grad_norm_theta",
            "grad_norm_phi",
            "cumulative_cost",
        ]
        .map(String::from),
    );
    let mut t = CsvTable::new(header);
    for r in records {
        let mut row: Vec<Cell> = vec![r.step.into()];
        row.extend(r.theta.iter().map(|&v| Cell::Real(v)));
        row.extend(r.phi.iter().map(|&v| Cell::Real(v)));
        row.extend([
            r.evidence_estimate.into(),
            r.evidence_oracle.into(),
            r.kl_oracle.into(),
            r.grad_norm_theta.into(),
            r.grad_norm_phi.into(),
            r.cumulative_cost.into(),
        ]);
        t.push(row)?;
    }
    Ok(t)
}
