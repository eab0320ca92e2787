//! Empirical checks of the estimator's variance and cost behaviour.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::draws::LatentDraws;
use crate::error::{Error, Result};
use crate::estimator::{level_estimate_from_rng, Coupling, EstimatorConfig, LevelDistribution};
use crate::io::{Cell, CsvTable};
use crate::logspace::{log_mean_exp, softmax_weights, StreamingMoments};
use crate::models::{DataPoint, Dataset, LatentModel, ParamVector};
use crate::par;
use crate::rng::{DrawKey, RngStream};

/// Replication statistics for one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: u32,
    pub mean_z: f64,
    /// `V_l`.
    pub var_z: f64,
    /// Per-component variance of `∇_θ Z_l`.
    pub var_grad_theta: Vec<f64>,
    pub var_grad_theta_max: f64,
    /// Latent draws per replication (`n0 * 2^l`).
    pub mean_cost: f64,
    pub replications: u64,
}

/// Runs `replications` independent level differences at each level.
///
/// Replication `r` at a level draws its data index and latents from one
/// keyed stream, so two calls on identically seeded streams see the same
/// draws whatever the coupling.
#[allow(clippy::too_many_arguments)]
pub fn variance_profile(
    model: &dyn LatentModel,
    data: &Dataset,
    theta: &ParamVector,
    phi: &ParamVector,
    levels: RangeInclusive<u32>,
    replications: usize,
    cfg: &EstimatorConfig,
    stream: &mut RngStream,
    coupling: Coupling,
) -> Result<Vec<LevelStats>> {
    cfg.validate()?;
    model.check_params(theta, phi)?;
    if replications < 100 {
        return Err(Error::contract("variance_profile needs at least 100 replications"));
    }
    if *levels.end() > cfg.level_cap {
        return Err(Error::LevelCap {
            level: u64::from(*levels.end()),
            cap: cfg.level_cap,
        });
    }
    let n_data = data.len();
    let mut out = Vec::new();
    for level in levels {
        let key = stream.next_key();
        let reps = par::try_map_indexed(replications, cfg.execution, |r| {
            let stamp = key.with_member(r as u64);
            let mut rng = stamp.rng();
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
                coupling,
            )
        })?;
        let mut z = StreamingMoments::new();
        let mut grads = vec![StreamingMoments::new(); model.theta_dim()];
        let mut cost = StreamingMoments::new();
        for est in &reps {
            z.push(est.z_value);
            cost.push(est.cost as f64);
            for (acc, g) in grads.iter_mut().zip(&est.grad_theta) {
                acc.push(*g);
            }
        }
        let var_grad_theta: Vec<f64> = grads.iter().map(|g| g.variance().unwrap_or(0.0)).collect();
        out.push(LevelStats {
            level,
            mean_z: z.mean(),
            var_z: z.variance().unwrap_or(0.0),
            var_grad_theta_max: var_grad_theta.iter().copied().fold(0.0, f64::max),
            var_grad_theta,
            mean_cost: cost.mean(),
            replications: z.count(),
        });
    }
    Ok(out)
}

/// Profile table: `level, replications, mean_z, var_z, var_grad_theta_max, mean_cost`.
pub fn profile_table(stats: &[LevelStats]) -> Result<CsvTable> {
    let mut t = CsvTable::new([
        "level",
        "replications",
        "mean_z",
        "var_z",
        "var_grad_theta_max",
        "mean_cost",
    ]);
    for s in stats {
        t.push(vec![
            s.level.into(),
            s.replications.into(),
            s.mean_z.into(),
            s.var_z.into(),
            s.var_grad_theta_max.into(),
            Cell::Real(s.mean_cost),
        ])?;
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecayField {
    VarZ,
    VarGradThetaMax,
    MeanCost,
}

impl DecayField {
    fn pick(self, s: &LevelStats) -> f64 {
        match self {
            DecayField::VarZ => s.var_z,
            DecayField::VarGradThetaMax => s.var_grad_theta_max,
            DecayField::MeanCost => s.mean_cost,
        }
    }
}

/// Least-squares line through `(level, log2 value)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Levels left out because their value was not positive.
    pub excluded: Vec<u32>,
}

pub fn fit_decay_rate(stats: &[LevelStats], field: DecayField) -> Result<DecayFit> {
    let mut excluded = Vec::new();
    let mut pts = Vec::new();
    for s in stats {
        let v = field.pick(s);
        if v > 0.0 && v.is_finite() {
            pts.push((f64::from(s.level), v.log2()));
        } else {
            excluded.push(s.level);
        }
    }
    if pts.len() < 3 {
        return Err(Error::contract(format!(
            "decay fit needs 3 positive levels, got {} (excluded {:?})",
            pts.len(),
            excluded
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::contract("decay fit needs at least two distinct levels"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(DecayFit {
        slope,
        intercept,
        r2,
        excluded,
    })
}

/// Monte Carlo estimates of `E_q[(f/p)^s]` and `E_q[|log(f/p)|^t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentDiagnostic {
    pub s_exponent: f64,
    pub t_exponent: f64,
    pub s_moment_estimate: f64,
    pub t_moment_estimate: f64,
    /// Set when the largest 0.1% of draws carry more than half of the
    /// `s`-moment sum.
    pub tail_warning: bool,
    pub n_draws: usize,
}

#[allow(clippy::too_many_arguments)]
pub fn estimate_moments(
    model: &dyn LatentModel,
    x: &DataPoint,
    theta: &ParamVector,
    phi: &ParamVector,
    s: f64,
    t: f64,
    n_draws: usize,
    key: DrawKey,
) -> Result<MomentDiagnostic> {
    model.check_params(theta, phi)?;
    if n_draws < 10_000 {
        return Err(Error::contract("estimate_moments needs at least 10^4 draws"));
    }
    if !(s > 0.0 && t > 0.0) {
        return Err(Error::contract("moment exponents must be positive"));
    }
    let log_p = model
        .oracle_log_evidence(x.as_slice(), theta.as_slice())
        .ok_or(Error::Unsupported {
            model: model.name(),
            operation: "moment diagnostic (needs an evidence oracle)",
        })?;
    let mut rng = key.rng();
    let draws = LatentDraws::generate(
        model,
        x.as_slice(),
        0,
        theta.as_slice(),
        phi.as_slice(),
        n_draws,
        &mut rng,
    )?;
    let log_ratio: Vec<f64> = draws.log_f().iter().map(|lf| lf - log_p).collect();
    let scaled: Vec<f64> = log_ratio.iter().map(|r| s * r).collect();
    let s_moment = log_mean_exp(&scaled)?.exp();
    let t_moment = log_ratio.iter().map(|r| r.abs().powf(t)).sum::<f64>() / n_draws as f64;

    let mut w = softmax_weights(&scaled)?;
    w.sort_unstable_by(|a, b| b.total_cmp(a));
    let top = n_draws.div_ceil(1000);
    let top_share: f64 = w[..top].iter().sum();

    Ok(MomentDiagnostic {
        s_exponent: s,
        t_exponent: t,
        s_moment_estimate: s_moment,
        t_moment_estimate: t_moment,
        tail_warning: top_share > 0.5,
        n_draws,
    })
}

/// Empirical behaviour of the level law over many draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelDrawSummary {
    pub draws: u64,
    /// Mean of `2^l`, the per-sample cost in units of `n0`.
    pub mean_cost_factor: f64,
    pub counts: BTreeMap<u32, u64>,
}

/// Draws `n` levels, in chunks of one keyed stream each.
pub fn summarize_level_draws(
    dist: &LevelDistribution,
    n: u64,
    stream: &mut RngStream,
    exec: par::Execution,
) -> Result<LevelDrawSummary> {
    const CHUNK: u64 = 10_000;
    let key = stream.next_key();
    let chunks = n.div_ceil(CHUNK) as usize;
    let parts = par::try_map_indexed(chunks, exec, |c| {
        let mut rng = key.with_member(c as u64).rng();
        let len = CHUNK.min(n - c as u64 * CHUNK);
        let mut counts = BTreeMap::new();
        let mut cost = 0.0;
        for _ in 0..len {
            let l = dist.sample(rng.sample(Open01))?;
            *counts.entry(l).or_insert(0u64) += 1;
            cost += (l as f64).exp2();
        }
        Ok::<_, Error>((cost, counts))
    })?;
    let mut counts = BTreeMap::new();
    let mut cost = 0.0;
    for (c, part) in parts {
        cost += c;
        for (l, k) in part {
            *counts.entry(l).or_insert(0) += k;
        }
    }
    Ok(LevelDrawSummary {
        draws: n,
        mean_cost_factor: cost / n as f64,
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::GaussianConjugate;
    use crate::rng::Substream;

    fn stats(values: &[(u32, f64)]) -> Vec<LevelStats> {
        values
            .iter()
            .map(|&(level, v)| LevelStats {
                level,
                mean_z: 0.0,
                var_z: v,
                var_grad_theta: vec![v],
                var_grad_theta_max: v,
                mean_cost: f64::from(level).exp2(),
                replications: 100,
            })
            .collect()
    }

    #[test]
    fn fit_is_exact_on_geometric_input() {
        let s: Vec<(u32, f64)> = (1..8).map(|l| (l, (-2.0 * f64::from(l)).exp2())).collect();
        let fit = fit_decay_rate(&stats(&s), DecayField::VarZ).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-14 && (fit.r2 - 1.0).abs() < 1e-14);
        let s: Vec<(u32, f64)> = (1..8).map(|l| (l, (-f64::from(l)).exp2())).collect();
        let fit = fit_decay_rate(&stats(&s), DecayField::VarGradThetaMax).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-14 && (fit.r2 - 1.0).abs() < 1e-14);
        let fit = fit_decay_rate(&stats(&[(0, 4.0), (1, 1.0), (2, 0.25)]), DecayField::VarZ).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-14);
        assert!((fit.intercept - 2.0).abs() < 1e-14);
        let fit = fit_decay_rate(&stats(&s), DecayField::MeanCost).unwrap();
        assert!((fit.slope - 1.0).abs() < 1e-14);
    }

    #[test]
    fn fit_excludes_nonpositive_levels() {
        let fit = fit_decay_rate(
            &stats(&[(0, 4.0), (1, 0.0), (2, 0.25), (3, 1.0 / 16.0)]),
            DecayField::VarZ,
        )
        .unwrap();
        assert_eq!(fit.excluded, vec![1]);
        assert!((fit.slope + 2.0).abs() < 1e-14);
        let err = fit_decay_rate(&stats(&[(0, 4.0), (1, 0.0), (2, 0.25)]), DecayField::VarZ).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    fn unit_setup() -> (GaussianConjugate, ParamVector) {
        (
            GaussianConjugate::new(1).unwrap(),
            ParamVector::theta(vec![0.0; 3]).unwrap(),
        )
    }

    #[test]
    fn exact_posterior_profile_is_flat_zero() {
        let (model, theta) = unit_setup();
        let phi = ParamVector::phi(model.exact_posterior_phi(theta.as_slice())).unwrap();
        let data = Dataset::synthesize(&model, theta.as_slice(), 20, 1).unwrap();
        let cfg = EstimatorConfig::default();
        let mut stream = RngStream::new(1, Substream::Diagnostics);
        let prof = variance_profile(
            &model,
            &data,
            &theta,
            &phi,
            1..=4,
            200,
            &cfg,
            &mut stream,
            Coupling::Antithetic,
        )
        .unwrap();
        for s in &prof {
            assert!(s.var_z < 1e-20 && s.var_grad_theta_max < 1e-20, "{s:?}");
            assert_eq!(s.mean_cost, f64::from(8u32 << s.level));
            assert_eq!(s.replications, 200);
        }
    }

    #[test]
    fn profile_validates_arguments() {
        let (model, theta) = unit_setup();
        let phi = ParamVector::phi(vec![0.0; 3]).unwrap();
        let data = Dataset::synthesize(&model, theta.as_slice(), 2, 1).unwrap();
        let cfg = EstimatorConfig {
            level_cap: 5,
            ..Default::default()
        };
        let mut stream = RngStream::new(1, Substream::Diagnostics);
        assert!(variance_profile(
            &model,
            &data,
            &theta,
            &phi,
            1..=3,
            50,
            &cfg,
            &mut stream,
            Coupling::Antithetic
        )
        .is_err());
        assert!(matches!(
            variance_profile(
                &model,
                &data,
                &theta,
                &phi,
                1..=6,
                100,
                &cfg,
                &mut stream,
                Coupling::Antithetic
            ),
            Err(Error::LevelCap { .. })
        ));
    }

    #[test]
    fn profile_is_reproducible_and_csv_has_one_row_per_level() {
        let (model, theta) = unit_setup();
        let phi = ParamVector::phi(vec![0.0, 0.0, 0.3]).unwrap();
        let data = Dataset::synthesize(&model, theta.as_slice(), 10, 1).unwrap();
        let cfg = EstimatorConfig::default();
        let run = |exec| {
            let cfg = EstimatorConfig {
                execution: exec,
                ..cfg.clone()
            };
            let mut stream = RngStream::new(3, Substream::Diagnostics);
            variance_profile(
                &model,
                &data,
                &theta,
                &phi,
                0..=3,
                150,
                &cfg,
                &mut stream,
                Coupling::Antithetic,
            )
            .unwrap()
        };
        let a = run(par::Execution::Parallel);
        assert_eq!(a, run(par::Execution::Sequential));
        let csv = profile_table(&a).unwrap().render();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("level,replications,mean_z,var_z,var_grad_theta_max,mean_cost\n"));
    }

    #[test]
    fn moments_at_exact_posterior() {
        let (model, theta) = unit_setup();
        let phi = ParamVector::phi(model.exact_posterior_phi(theta.as_slice())).unwrap();
        let x = DataPoint::new(vec![0.3]).unwrap();
        let key = DrawKey::new(1, Substream::Diagnostics, 0, 0);
        let m = estimate_moments(&model, &x, &theta, &phi, 4.5, 3.0, 10_000, key).unwrap();
        assert!((m.s_moment_estimate - 1.0).abs() < 1e-10, "{m:?}");
        assert!(m.t_moment_estimate < 1e-30);
        assert!(!m.tail_warning);
    }

    #[test]
    fn moments_need_an_oracle_and_enough_draws() {
        let model = crate::models::BernoulliGaussian::new();
        struct NoOracle(crate::models::BernoulliGaussian);
        impl LatentModel for NoOracle {
            fn name(&self) -> &'static str {
                "no-oracle"
            }
            fn data_dim(&self) -> usize {
                1
            }
            fn latent_dim(&self) -> usize {
                1
            }
            fn theta_dim(&self) -> usize {
                2
            }
            fn phi_dim(&self) -> usize {
                4
            }
            fn sample_q(&self, x: &[f64], p: &[f64], r: &mut dyn rand::RngCore, z: &mut [f64]) {
                self.0.sample_q(x, p, r, z)
            }
            fn log_joint(&self, x: &[f64], z: &[f64], t: &[f64]) -> f64 {
                self.0.log_joint(x, z, t)
            }
            fn log_q(&self, x: &[f64], z: &[f64], p: &[f64]) -> f64 {
                self.0.log_q(x, z, p)
            }
            fn log_weight_into(
                &self,
                x: &[f64],
                z: &[f64],
                t: &[f64],
                p: &[f64],
                gt: &mut [f64],
                gp: &mut [f64],
            ) -> f64 {
                self.0.log_weight_into(x, z, t, p, gt, gp)
            }
            fn sample_data(&self, t: &[f64], r: &mut dyn rand::RngCore) -> Vec<f64> {
                self.0.sample_data(t, r)
            }
        }
        let theta = ParamVector::theta(vec![1.0, 0.0]).unwrap();
        let phi = ParamVector::phi(vec![0.0; 4]).unwrap();
        let x = DataPoint::new(vec![1.0]).unwrap();
        let key = DrawKey::new(1, Substream::Diagnostics, 0, 0);
        let err = estimate_moments(&NoOracle(model), &x, &theta, &phi, 4.5, 3.0, 10_000, key).unwrap_err();
        assert!(matches!(err, Error::Unsupported { .. }));
        assert!(matches!(
            estimate_moments(&model, &x, &theta, &phi, 4.5, 3.0, 100, key),
            Err(Error::Contract(_))
        ));
        assert!(estimate_moments(&model, &x, &theta, &phi, 4.5, 3.0, 10_000, key).is_ok());
    }

    #[test]
    fn level_summary_chunks_cover_all_draws() {
        let dist = EstimatorConfig::default().level_distribution().unwrap();
        let mut stream = RngStream::new(2, Substream::Levels);
        let s = summarize_level_draws(&dist, 25_001, &mut stream, par::Execution::Parallel).unwrap();
        assert_eq!(s.counts.values().sum::<u64>(), 25_001);
        let mut stream = RngStream::new(2, Substream::Levels);
        let t = summarize_level_draws(&dist, 25_001, &mut stream, par::Execution::Sequential).unwrap();
        assert_eq!(s, t);
    }
}
