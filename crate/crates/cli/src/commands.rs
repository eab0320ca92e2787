use std::fs;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use mlmc_core::diagnostics::{estimate_moments, fit_decay_rate, profile_table, variance_profile, DecayField};
use mlmc_core::estimator::{estimate_log_evidence, oracle_log_evidence, Coupling};
use mlmc_core::gradients::estimate_gradients;
use mlmc_core::io::{write_json, CsvTable};
use mlmc_core::logspace::StreamingMoments;
use mlmc_core::trainer::{records_table, summarize, train, TrainConfig, TrainSummary};
use mlmc_core::{
    BernoulliGaussian, Dataset, DrawKey, EstimatorConfig, GaussianConjugate, LatentModel, ParamVector, RngStream,
    Substream,
};

use crate::config::{CommandName, ModelName, RunConfig, Runtime};
use crate::CliError;

pub(crate) fn dispatch(cfg: &RunConfig, rt: &Runtime) -> Result<String, CliError> {
    fs::create_dir_all(&rt.out).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", rt.out.display())))?;
    let model = build_model(cfg)?;
    let summary = match cfg.command {
        CommandName::Estimate => estimate(cfg, model.as_ref(), &rt.out)?,
        CommandName::VarianceProfile => profile(cfg, model.as_ref(), &rt.out)?,
        CommandName::GradCheck => grad_check(cfg, model.as_ref(), &rt.out)?,
        CommandName::Moments => moments(cfg, model.as_ref(), &rt.out)?,
        CommandName::Train => run_train(cfg, model.as_ref(), &rt.out)?,
        CommandName::GenData => gen_data(cfg, model.as_ref(), &rt.out)?,
    };
    write_json(&rt.out.join("manifest.json"), cfg)?;
    Ok(summary)
}

fn build_model(cfg: &RunConfig) -> Result<Box<dyn LatentModel>, CliError> {
    Ok(match cfg.model {
        ModelName::Gaussian => Box::new(GaussianConjugate::new(cfg.dim)?),
        ModelName::Bernoulli => {
            if cfg.dim != 1 {
                return Err(CliError::Usage("the bernoulli model has dim 1".into()));
            }
            Box::new(BernoulliGaussian::new())
        }
    })
}

fn estimator_config(cfg: &RunConfig) -> EstimatorConfig {
    EstimatorConfig {
        n0: cfg.n0,
        batch_size: cfg.batch,
        level_ratio_log2: cfg.level_ratio_log2,
        level_cap: cfg.level_cap,
        seed: cfg.seed,
        ..Default::default()
    }
}

fn required<T: Copy>(v: Option<T>, name: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Usage(format!("manifest is missing `{name}`")))
}

fn params(theta: &[f64], phi: &[f64]) -> Result<(ParamVector, ParamVector), CliError> {
    Ok((ParamVector::theta(theta.to_vec())?, ParamVector::phi(phi.to_vec())?))
}

fn load_data(cfg: &RunConfig, model: &dyn LatentModel) -> Result<Dataset, CliError> {
    let data = match &cfg.data {
        Some(path) => Dataset::load(path)?.0,
        None => Dataset::synthesize(model, &cfg.theta, cfg.n, cfg.seed)?,
    };
    if data.dim() != model.data_dim() {
        return Err(CliError::Usage(format!(
            "data has dimension {}, the {} model expects {}",
            data.dim(),
            model.name(),
            model.data_dim()
        )));
    }
    Ok(data)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.6}"))
}

#[derive(Serialize)]
struct EstimateReport {
    value: f64,
    std_error: f64,
    total_cost: u64,
    oracle_log_evidence: Option<f64>,
    seed: u64,
}

fn estimate(cfg: &RunConfig, model: &dyn LatentModel, out: &Path) -> Result<String, CliError> {
    let data = load_data(cfg, model)?;
    let (theta, phi) = params(&cfg.theta, &cfg.phi)?;
    let mut stream = RngStream::new(cfg.seed, Substream::Latents);
    let est = estimate_log_evidence(model, &data, &theta, &phi, &estimator_config(cfg), &mut stream)?;
    let oracle = oracle_log_evidence(model, &data, &theta);
    let mut levels = CsvTable::new(["level", "count"]);
    for (&l, &c) in &est.per_level_counts {
        levels.push(vec![l.into(), c.into()])?;
    }
    levels.write(&out.join("levels.csv"))?;
    write_json(
        &out.join("estimate.json"),
        &EstimateReport {
            value: est.value,
            std_error: est.std_error,
            total_cost: est.total_cost,
            oracle_log_evidence: oracle,
            seed: cfg.seed,
        },
    )?;
    Ok(format!(
        "log evidence {:.6} ± {:.6} (oracle {}, cost {})",
        est.value,
        est.std_error,
        opt(oracle),
        est.total_cost
    ))
}

#[derive(Serialize)]
struct DecayReport {
    coupling: &'static str,
    slope_var_z: f64,
    r2_var_z: f64,
    slope_var_grad_theta_max: f64,
    r2_var_grad_theta_max: f64,
    slope_mean_cost: f64,
}

fn profile(cfg: &RunConfig, model: &dyn LatentModel, out: &Path) -> Result<String, CliError> {
    let levels = cfg
        .levels
        .ok_or_else(|| CliError::Usage("manifest is missing `levels`".into()))?;
    let reps = required(cfg.reps, "reps")?;
    let coupling = if required(cfg.naive, "naive")? {
        Coupling::Naive
    } else {
        Coupling::Antithetic
    };
    let data = load_data(cfg, model)?;
    let (theta, phi) = params(&cfg.theta, &cfg.phi)?;
    let mut stream = RngStream::new(cfg.seed, Substream::Diagnostics);
    let stats = variance_profile(
        model,
        &data,
        &theta,
        &phi,
        levels.range(),
        reps,
        &estimator_config(cfg),
        &mut stream,
        coupling,
    )?;
    profile_table(&stats)?.write(&out.join("variance_profile.csv"))?;
    let z = fit_decay_rate(&stats, DecayField::VarZ)?;
    let g = fit_decay_rate(&stats, DecayField::VarGradThetaMax)?;
    let c = fit_decay_rate(&stats, DecayField::MeanCost)?;
    let coupling_name = match coupling {
        Coupling::Antithetic => "antithetic",
        Coupling::Naive => "naive",
    };
    write_json(
        &out.join("decay_fit.json"),
        &DecayReport {
            coupling: coupling_name,
            slope_var_z: z.slope,
            r2_var_z: z.r2,
            slope_var_grad_theta_max: g.slope,
            r2_var_grad_theta_max: g.r2,
            slope_mean_cost: c.slope,
        },
    )?;
    Ok(format!(
        "{coupling_name} variance slope {:.4} (r2 {:.4}), gradient variance slope {:.4}",
        z.slope, z.r2, g.slope
    ))
}

struct CheckRow {
    check: &'static str,
    component: usize,
    value: f64,
    reference: f64,
    tolerance: f64,
}

impl CheckRow {
    fn passed(&self) -> bool {
        (self.value - self.reference).abs() <= self.tolerance
    }
}

fn grad_check(cfg: &RunConfig, model: &dyn LatentModel, out: &Path) -> Result<String, CliError> {
    let reps = required(cfg.reps, "reps")?;
    let points = required(cfg.points, "points")?;
    let data = load_data(cfg, model)?;
    let (theta, phi) = params(&cfg.theta, &cfg.phi)?;
    model.check_params(&theta, &phi)?;
    let mut rows = fd_rows(model, &data, cfg, points);

    let ecfg = estimator_config(cfg);
    let mut stream = RngStream::new(cfg.seed, Substream::Latents);
    let mut mt = vec![StreamingMoments::default(); model.theta_dim()];
    let mut mp = vec![StreamingMoments::default(); model.phi_dim()];
    for _ in 0..reps {
        let g = estimate_gradients(model, &data, &theta, &phi, &ecfg, &mut stream)?;
        mt.iter_mut().zip(&g.grad_theta).for_each(|(m, v)| m.push(*v));
        mp.iter_mut().zip(&g.grad_phi).for_each(|(m, v)| m.push(*v));
    }
    let sum_oracle = |f: &dyn Fn(&[f64]) -> Option<Vec<f64>>, dim: usize| -> Option<Vec<f64>> {
        let mut acc = vec![0.0; dim];
        for p in data.points() {
            acc.iter_mut().zip(f(p.as_slice())?).for_each(|(a, v)| *a += v);
        }
        Some(acc)
    };
    let oracle_t = sum_oracle(
        &|x| model.oracle_grad_log_evidence(x, theta.as_slice()),
        model.theta_dim(),
    );
    let oracle_p = sum_oracle(
        &|x| model.oracle_elbo_grad_phi(x, theta.as_slice(), phi.as_slice()),
        model.phi_dim(),
    );
    for (check, moments, oracle) in [("mlmc_grad_theta", &mt, oracle_t), ("elbo_grad_phi", &mp, oracle_p)] {
        let Some(oracle) = oracle else { continue };
        for (k, (m, r)) in moments.iter().zip(oracle).enumerate() {
            rows.push(CheckRow {
                check,
                component: k,
                value: m.mean(),
                reference: r,
                tolerance: 4.0 * m.std_error().unwrap_or(0.0),
            });
        }
    }

    let mut table = CsvTable::new(["check", "component", "value", "reference", "tolerance", "pass"]);
    for r in &rows {
        table.push(vec![
            r.check.into(),
            r.component.into(),
            r.value.into(),
            r.reference.into(),
            r.tolerance.into(),
            r.passed().into(),
        ])?;
    }
    table.write(&out.join("grad_check.csv"))?;
    let failed = rows.iter().filter(|r| !r.passed()).count();
    let line = format!("grad-check: {} of {} checks passed", rows.len() - failed, rows.len());
    if failed > 0 {
        // artifacts and manifest are still wanted for a failing check
        write_json(&out.join("manifest.json"), cfg)?;
        return Err(CliError::CheckFailed(line));
    }
    Ok(line)
}

/// Worst finite-difference deviation of each model gradient component over
/// random `(x, z, theta, phi)`, scaled so the tolerance is `1e-6`.
fn fd_rows(model: &dyn LatentModel, data: &Dataset, cfg: &RunConfig, points: usize) -> Vec<CheckRow> {
    const H: f64 = 1e-5;
    let mut worst_t = vec![0.0f64; model.theta_dim()];
    let mut worst_p = vec![0.0f64; model.phi_dim()];
    let mut z = vec![0.0; model.latent_dim()];
    for i in 0..points {
        let mut rng = DrawKey::new(cfg.seed, Substream::Diagnostics, 0, i as u64).rng();
        let mut jitter = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .map(|a| a + 0.3 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                .collect()
        };
        let theta = jitter(&cfg.theta);
        let phi = jitter(&cfg.phi);
        let x = data.get(i % data.len()).as_slice();
        model.sample_q(x, &phi, &mut rng, &mut z);
        let s = model.log_weight(x, &z, &theta, &phi);
        let fd_t = central_diff(&theta, H, |t| model.log_joint(x, &z, t) - model.log_q(x, &z, &phi));
        let fd_p = central_diff(&phi, H, |p| model.log_q(x, &z, p));
        for (w, (g, f)) in worst_t.iter_mut().zip(s.grad_theta_log_f.iter().zip(&fd_t)) {
            *w = w.max((g - f).abs() / f.abs().max(1.0));
        }
        for (w, (g, f)) in worst_p.iter_mut().zip(s.grad_phi_log_q.iter().zip(&fd_p)) {
            *w = w.max((g - f).abs() / f.abs().max(1.0));
        }
    }
    let rows = |check, worst: Vec<f64>| {
        worst.into_iter().enumerate().map(move |(k, w)| CheckRow {
            check,
            component: k,
            value: w,
            reference: 0.0,
            tolerance: 1e-6,
        })
    };
    rows("fd_grad_theta_log_f", worst_t)
        .chain(rows("fd_grad_phi_log_q", worst_p))
        .collect()
}

fn central_diff(p: &[f64], h: f64, g: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    (0..p.len())
        .map(|k| {
            let mut hi = p.to_vec();
            let mut lo = p.to_vec();
            hi[k] += h;
            lo[k] -= h;
            (g(&hi) - g(&lo)) / (2.0 * h)
        })
        .collect()
}

fn moments(cfg: &RunConfig, model: &dyn LatentModel, out: &Path) -> Result<String, CliError> {
    let data = load_data(cfg, model)?;
    let index = required(cfg.index, "index")?;
    if index >= data.len() {
        return Err(CliError::Usage(format!(
            "--index {index} is out of range for {} points",
            data.len()
        )));
    }
    let (theta, phi) = params(&cfg.theta, &cfg.phi)?;
    let key = DrawKey::new(cfg.seed, Substream::Diagnostics, 0, index as u64);
    let d = estimate_moments(
        model,
        data.get(index),
        &theta,
        &phi,
        required(cfg.s, "s")?,
        required(cfg.t, "t")?,
        required(cfg.draws, "draws")?,
        key,
    )?;
    write_json(&out.join("moments.json"), &d)?;
    Ok(format!(
        "E[ratio^{}] = {:.6e}, E[|log ratio|^{}] = {:.6e}{}",
        d.s_exponent,
        d.s_moment_estimate,
        d.t_exponent,
        d.t_moment_estimate,
        if d.tail_warning { " (heavy-tail warning)" } else { "" }
    ))
}

#[derive(Serialize)]
struct TrainReport {
    #[serde(flatten)]
    summary: TrainSummary,
    mle_log_evidence: Option<f64>,
}

fn run_train(cfg: &RunConfig, model: &dyn LatentModel, out: &Path) -> Result<String, CliError> {
    let data = load_data(cfg, model)?;
    let init_theta = cfg.init_theta.clone().unwrap_or_else(|| vec![0.0; model.theta_dim()]);
    let init_phi = cfg.init_phi.clone().unwrap_or_else(|| vec![0.0; model.phi_dim()]);
    let (theta0, phi0) = params(&init_theta, &init_phi)?;
    let tcfg = TrainConfig {
        steps: required(cfg.steps, "steps")?,
        lr_theta: required(cfg.lr_theta, "lr_theta")?,
        lr_phi: required(cfg.lr_phi, "lr_phi")?,
        momentum: required(cfg.momentum, "momentum")?,
        eval_every: required(cfg.eval_every, "eval_every")?,
        eval_replications: required(cfg.eval_reps, "eval_reps")?,
        estimator: estimator_config(cfg),
    };
    let records = train(model, &data, &theta0, &phi0, &tcfg)?;
    records_table(&records)?.write(&out.join("train.csv"))?;
    let summary = summarize(&records, cfg.seed).expect("train records at least step 0");
    let mle_log_evidence = match cfg.model {
        ModelName::Gaussian => GaussianConjugate::new(cfg.dim)?.mle(&data, 0.5).ok().map(|(_, v)| v),
        ModelName::Bernoulli => None,
    };
    let line = format!(
        "final evidence {:.6} (oracle {}, MLE {}), mean KL {}, cost {}",
        summary.final_evidence,
        opt(summary.final_evidence_oracle),
        opt(mle_log_evidence),
        opt(summary.final_kl_oracle),
        summary.total_cost
    );
    write_json(
        &out.join("summary.json"),
        &TrainReport {
            summary,
            mle_log_evidence,
        },
    )?;
    Ok(line)
}

fn gen_data(cfg: &RunConfig, model: &dyn LatentModel, out: &Path) -> Result<String, CliError> {
    if cfg.data.is_some() {
        return Err(CliError::Usage(
            "gen-data writes a dataset; --data is not accepted".into(),
        ));
    }
    let data = load_data(cfg, model)?;
    let path = out.join("data.txt");
    data.save(&path, cfg.seed, &cfg.theta)?;
    Ok(format!(
        "wrote {} points of dimension {} to data.txt",
        data.len(),
        data.dim()
    ))
}
