//! Replication studies of the public estimators at small scale.

use mlmc_core::diagnostics::{estimate_moments, variance_profile};
use mlmc_core::estimator::{estimate_log_evidence, oracle_log_evidence, Coupling};
use mlmc_core::gradients::estimate_gradients;
use mlmc_core::logspace::StreamingMoments;
use mlmc_core::trainer::{train, TrainConfig};
use mlmc_core::{
    BernoulliGaussian, DataPoint, Dataset, DrawKey, EstimatorConfig, Execution, GaussianConjugate, LatentModel,
    ParamVector, RngStream, Substream,
};

fn within_4se(m: &StreamingMoments, want: f64) -> bool {
    (m.mean() - want).abs() <= 4.0 * m.std_error().unwrap()
}

fn bernoulli_setup() -> (BernoulliGaussian, Dataset, ParamVector, ParamVector) {
    let model = BernoulliGaussian::new();
    let theta = vec![1.2, -0.4];
    let data = Dataset::synthesize(&model, &theta, 30, 21).unwrap();
    for p in data.points() {
        assert!(BernoulliGaussian::oracle_converged(p.as_slice(), &theta));
    }
    (
        model,
        data,
        ParamVector::theta(theta).unwrap(),
        ParamVector::phi(vec![0.3, -0.2, -0.5, 0.1]).unwrap(),
    )
}

#[test]
fn bernoulli_evidence_is_unbiased() {
    let (model, data, theta, phi) = bernoulli_setup();
    let cfg = EstimatorConfig {
        batch_size: 16,
        ..Default::default()
    };
    let mut stream = RngStream::new(1, Substream::Latents);
    let m: StreamingMoments = (0..20_000)
        .map(|_| {
            estimate_log_evidence(&model, &data, &theta, &phi, &cfg, &mut stream)
                .unwrap()
                .value
        })
        .collect();
    let exact = oracle_log_evidence(&model, &data, &theta).unwrap();
    assert!(
        within_4se(&m, exact),
        "{} ± {} vs {exact}",
        m.mean(),
        m.std_error().unwrap()
    );
}

fn gradient_moments(
    model: &dyn LatentModel,
    data: &Dataset,
    theta: &ParamVector,
    phi: &ParamVector,
    reps: usize,
    seed: u64,
) -> (Vec<StreamingMoments>, Vec<StreamingMoments>) {
    let cfg = EstimatorConfig {
        batch_size: 16,
        ..Default::default()
    };
    let mut stream = RngStream::new(seed, Substream::Latents);
    let mut mt = vec![StreamingMoments::new(); model.theta_dim()];
    let mut mp = vec![StreamingMoments::new(); model.phi_dim()];
    for _ in 0..reps {
        let g = estimate_gradients(model, data, theta, phi, &cfg, &mut stream).unwrap();
        mt.iter_mut().zip(&g.grad_theta).for_each(|(m, v)| m.push(*v));
        mp.iter_mut().zip(&g.grad_phi).for_each(|(m, v)| m.push(*v));
    }
    (mt, mp)
}

fn summed_oracle(data: &Dataset, dim: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    for p in data.points() {
        acc.iter_mut().zip(f(p.as_slice())).for_each(|(a, v)| *a += v);
    }
    acc
}

#[test]
fn bernoulli_gradients_are_unbiased() {
    let (model, data, theta, phi) = bernoulli_setup();
    let (mt, mp) = gradient_moments(&model, &data, &theta, &phi, 20_000, 2);
    let want_t = summed_oracle(&data, 2, |x| {
        model.oracle_grad_log_evidence(x, theta.as_slice()).unwrap()
    });
    let want_p = summed_oracle(&data, 4, |x| {
        model.oracle_elbo_grad_phi(x, theta.as_slice(), phi.as_slice()).unwrap()
    });
    for (k, (m, w)) in mt.iter().zip(&want_t).enumerate() {
        assert!(
            within_4se(m, *w),
            "theta[{k}]: {} ± {} vs {w}",
            m.mean(),
            m.std_error().unwrap()
        );
    }
    for (k, (m, w)) in mp.iter().zip(&want_p).enumerate() {
        assert!(
            within_4se(m, *w),
            "phi[{k}]: {} ± {} vs {w}",
            m.mean(),
            m.std_error().unwrap()
        );
    }
}

#[test]
fn exact_posterior_is_stationary_in_phi() {
    let model = GaussianConjugate::new(2).unwrap();
    let theta = vec![0.5, -0.3, 0.1, 0.2, -0.4, 0.0];
    let data = Dataset::synthesize(&model, &theta, 40, 5).unwrap();
    let phi = ParamVector::phi(model.exact_posterior_phi(&theta)).unwrap();
    let theta = ParamVector::theta(theta).unwrap();
    let (mt, mp) = gradient_moments(&model, &data, &theta, &phi, 5_000, 3);
    for m in &mp {
        assert!(within_4se(m, 0.0), "{} ± {}", m.mean(), m.std_error().unwrap());
    }
    // theta gradient has zero variance here: every level above 0 vanishes
    let want_t = summed_oracle(&data, 6, |x| {
        model.oracle_grad_log_evidence(x, theta.as_slice()).unwrap()
    });
    for (m, w) in mt.iter().zip(&want_t) {
        assert!(within_4se(m, *w) || (m.mean() - w).abs() < 1e-9);
    }
}

#[test]
fn moment_diagnostic_flags_narrow_proposals() {
    let model = GaussianConjugate::new(1).unwrap();
    let theta = ParamVector::theta(vec![0.0; 3]).unwrap();
    let x = DataPoint::new(vec![0.8]).unwrap();
    let key = DrawKey::new(4, Substream::Diagnostics, 0, 0);
    // the posterior is N(x/2, 1/2); this q has variance 0.09
    let narrow = ParamVector::phi(vec![0.5, 0.0, 0.3f64.ln()]).unwrap();
    let d = estimate_moments(&model, &x, &theta, &narrow, 4.5, 3.0, 100_000, key).unwrap();
    assert!(d.tail_warning, "{d:?}");
    let wide = ParamVector::phi(vec![0.0, 0.0, 0.5 * 2f64.ln()]).unwrap();
    let d = estimate_moments(&model, &x, &theta, &wide, 4.5, 3.0, 100_000, key).unwrap();
    assert!(!d.tail_warning, "{d:?}");
    assert!(d.s_moment_estimate.is_finite() && d.t_moment_estimate > 0.0);
}

#[test]
fn moment_diagnostic_rejects_models_without_oracles() {
    struct NoOracle(GaussianConjugate);
    impl LatentModel for NoOracle {
        fn name(&self) -> &'static str {
            "no-oracle"
        }
        fn data_dim(&self) -> usize {
            self.0.data_dim()
        }
        fn latent_dim(&self) -> usize {
            self.0.latent_dim()
        }
        fn theta_dim(&self) -> usize {
            self.0.theta_dim()
        }
        fn phi_dim(&self) -> usize {
            self.0.phi_dim()
        }
        fn sample_q(&self, x: &[f64], phi: &[f64], rng: &mut dyn rand::RngCore, z: &mut [f64]) {
            self.0.sample_q(x, phi, rng, z)
        }
        fn log_joint(&self, x: &[f64], z: &[f64], theta: &[f64]) -> f64 {
            self.0.log_joint(x, z, theta)
        }
        fn log_q(&self, x: &[f64], z: &[f64], phi: &[f64]) -> f64 {
            self.0.log_q(x, z, phi)
        }
        fn log_weight_into(&self, x: &[f64], z: &[f64], t: &[f64], p: &[f64], gt: &mut [f64], gp: &mut [f64]) -> f64 {
            self.0.log_weight_into(x, z, t, p, gt, gp)
        }
        fn sample_data(&self, theta: &[f64], rng: &mut dyn rand::RngCore) -> Vec<f64> {
            self.0.sample_data(theta, rng)
        }
    }
    let model = NoOracle(GaussianConjugate::new(1).unwrap());
    let theta = ParamVector::theta(vec![0.0; 3]).unwrap();
    let phi = ParamVector::phi(vec![0.0; 3]).unwrap();
    let x = DataPoint::new(vec![0.1]).unwrap();
    let err = estimate_moments(
        &model,
        &x,
        &theta,
        &phi,
        2.0,
        2.0,
        10_000,
        DrawKey::new(0, Substream::Diagnostics, 0, 0),
    );
    assert!(matches!(err, Err(mlmc_core::Error::Unsupported { .. })));
    // the estimators themselves still run
    let data = Dataset::synthesize(&model, theta.as_slice(), 10, 0).unwrap();
    let cfg = EstimatorConfig::default();
    let est = estimate_log_evidence(
        &model,
        &data,
        &theta,
        &phi,
        &cfg,
        &mut RngStream::new(0, Substream::Latents),
    );
    assert!(est.unwrap().value.is_finite());
    assert!(oracle_log_evidence(&model, &data, &theta).is_none());
}

#[test]
fn frozen_theta_training_shrinks_kl() {
    let model = GaussianConjugate::new(1).unwrap();
    let data = Dataset::synthesize(&model, &[1.0, 0.0, -0.693], 100, 3).unwrap();
    let theta0 = ParamVector::theta(vec![1.0, 0.0, -0.693]).unwrap();
    let phi0 = ParamVector::phi(vec![0.0; 3]).unwrap();
    let cfg = TrainConfig {
        steps: 600,
        lr_theta: 0.0,
        eval_every: 200,
        eval_replications: 1,
        estimator: EstimatorConfig {
            batch_size: 64,
            seed: 9,
            ..Default::default()
        },
        ..Default::default()
    };
    let records = train(&model, &data, &theta0, &phi0, &cfg).unwrap();
    let kls: Vec<f64> = records.iter().map(|r| r.kl_oracle.unwrap()).collect();
    assert!(records.iter().all(|r| r.theta == theta0.as_slice()));
    assert!(kls.last().unwrap() < &(0.2 * kls[0]), "{kls:?}");
    let oracle: Vec<f64> = records.iter().map(|r| r.evidence_oracle.unwrap()).collect();
    assert!(oracle.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn training_ascends_the_evidence() {
    let model = GaussianConjugate::new(1).unwrap();
    let data = Dataset::synthesize(&model, &[1.0, 0.0, -0.693], 100, 4).unwrap();
    let theta0 = ParamVector::theta(vec![0.0; 3]).unwrap();
    let phi0 = ParamVector::phi(vec![0.0; 3]).unwrap();
    let mut improved = 0;
    for seed in 0..5 {
        let cfg = TrainConfig {
            steps: 300,
            eval_every: 300,
            eval_replications: 1,
            estimator: EstimatorConfig {
                batch_size: 64,
                seed,
                ..Default::default()
            },
            ..Default::default()
        };
        let records = train(&model, &data, &theta0, &phi0, &cfg).unwrap();
        let first = records.first().unwrap().evidence_oracle.unwrap();
        let last = records.last().unwrap().evidence_oracle.unwrap();
        improved += usize::from(last > first + 10.0);
    }
    assert_eq!(improved, 5);
}

#[test]
fn execution_mode_never_changes_results() {
    let model = GaussianConjugate::new(1).unwrap();
    let theta = ParamVector::theta(vec![0.2, 0.1, -0.3]).unwrap();
    let phi = ParamVector::phi(vec![0.1, 0.0, 0.2]).unwrap();
    let data = Dataset::synthesize(&model, theta.as_slice(), 25, 8).unwrap();
    let run = |execution| {
        let cfg = EstimatorConfig {
            execution,
            ..Default::default()
        };
        let mut stream = RngStream::new(6, Substream::Diagnostics);
        variance_profile(
            &model,
            &data,
            &theta,
            &phi,
            0..=4,
            200,
            &cfg,
            &mut stream,
            Coupling::Antithetic,
        )
        .unwrap()
    };
    assert_eq!(run(Execution::Sequential), run(Execution::Parallel));

    let train_run = |execution| {
        let cfg = TrainConfig {
            steps: 20,
            eval_every: 5,
            eval_replications: 2,
            estimator: EstimatorConfig {
                batch_size: 32,
                seed: 2,
                execution,
                ..Default::default()
            },
            ..Default::default()
        };
        train(&model, &data, &theta, &phi, &cfg).unwrap()
    };
    assert_eq!(train_run(Execution::Sequential), train_run(Execution::Parallel));
}
