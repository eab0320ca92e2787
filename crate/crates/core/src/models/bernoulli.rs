use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};

use super::quadrature::{oracle_rule, GaussHermite};
use super::{log_sigmoid, sigmoid, LatentModel, LN_2PI};

/// Binary observations driven by a scalar Gaussian latent.
///
/// ```text
/// z ~ N(0, 1)
/// x | z ~ Bernoulli(sigmoid(w z + c))        theta = (w, c)
/// q(z | x) = N(m_x, s_x^2)                   phi = (m_0, log s_0, m_1, log s_1)
/// ```
///
/// The evidence has no closed form; the oracles use Gauss–Hermite quadrature.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BernoulliGaussian;

impl BernoulliGaussian {
    pub fn new() -> Self {
        BernoulliGaussian
    }

    fn branch(x: &[f64]) -> usize {
        usize::from(x[0] >= 0.5)
    }

    fn log_lik(x: &[f64], z: f64, theta: &[f64]) -> f64 {
        let a = theta[0] * z + theta[1];
        if Self::branch(x) == 1 {
            log_sigmoid(a)
        } else {
            log_sigmoid(-a)
        }
    }

    fn log_evidence_with(rule: &GaussHermite, x: &[f64], theta: &[f64]) -> f64 {
        let terms: Vec<f64> = rule
            .std_normal_points()
            .map(|(z, w)| w.ln() + Self::log_lik(x, z, theta))
            .collect();
        let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
    }

    /// `|log p(x)|` difference between the 64-node oracle and a 128-node rule.
    pub fn quadrature_drift(x: &[f64], theta: &[f64]) -> f64 {
        let fine = GaussHermite::new(128);
        (Self::log_evidence_with(oracle_rule(), x, theta) - Self::log_evidence_with(&fine, x, theta)).abs()
    }

    /// Whether the 64-node oracle is within `1e-10` of the 128-node rule.
    pub fn oracle_converged(x: &[f64], theta: &[f64]) -> bool {
        Self::quadrature_drift(x, theta) < 1e-10
    }
}

impl LatentModel for BernoulliGaussian {
    fn name(&self) -> &'static str {
        "bernoulli"
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

    fn sample_q(&self, x: &[f64], phi: &[f64], rng: &mut dyn RngCore, z: &mut [f64]) {
        let j = 2 * Self::branch(x);
        let eps: f64 = StandardNormal.sample(rng);
        z[0] = phi[j] + phi[j + 1].exp() * eps;
    }

    fn log_joint(&self, x: &[f64], z: &[f64], theta: &[f64]) -> f64 {
        Self::log_lik(x, z[0], theta) - 0.5 * LN_2PI - 0.5 * z[0] * z[0]
    }

    fn log_q(&self, x: &[f64], z: &[f64], phi: &[f64]) -> f64 {
        let j = 2 * Self::branch(x);
        let (m, log_s) = (phi[j], phi[j + 1]);
        -0.5 * LN_2PI - log_s - (z[0] - m).powi(2) / (2.0 * (2.0 * log_s).exp())
    }

    fn log_weight_into(
        &self,
        x: &[f64],
        z: &[f64],
        theta: &[f64],
        phi: &[f64],
        grad_theta_log_f: &mut [f64],
        grad_phi_log_q: &mut [f64],
    ) -> f64 {
        let zv = z[0];
        let xv = Self::branch(x) as f64;
        let resid = xv - sigmoid(theta[0] * zv + theta[1]);
        grad_theta_log_f[0] = resid * zv;
        grad_theta_log_f[1] = resid;

        let j = 2 * Self::branch(x);
        let (m, log_s) = (phi[j], phi[j + 1]);
        let s2 = (2.0 * log_s).exp();
        let dq = zv - m;
        grad_phi_log_q.fill(0.0);
        grad_phi_log_q[j] = dq / s2;
        grad_phi_log_q[j + 1] = dq * dq / s2 - 1.0;

        self.log_joint(x, z, theta) - self.log_q(x, z, phi)
    }

    fn sample_data(&self, theta: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        let z: f64 = StandardNormal.sample(rng);
        let p = sigmoid(theta[0] * z + theta[1]);
        vec![if rng.random::<f64>() < p { 1.0 } else { 0.0 }]
    }

    fn oracle_log_evidence(&self, x: &[f64], theta: &[f64]) -> Option<f64> {
        Some(Self::log_evidence_with(oracle_rule(), x, theta))
    }

    fn oracle_grad_log_evidence(&self, x: &[f64], theta: &[f64]) -> Option<Vec<f64>> {
        // posterior expectation of the likelihood score, by quadrature
        let xv = Self::branch(x) as f64;
        let log_ev = Self::log_evidence_with(oracle_rule(), x, theta);
        let mut g = vec![0.0; 2];
        for (z, w) in oracle_rule().std_normal_points() {
            let post = w * (Self::log_lik(x, z, theta) - log_ev).exp();
            let resid = xv - sigmoid(theta[0] * z + theta[1]);
            g[0] += post * resid * z;
            g[1] += post * resid;
        }
        Some(g)
    }

    fn oracle_elbo_grad_phi(&self, x: &[f64], theta: &[f64], phi: &[f64]) -> Option<Vec<f64>> {
        // reparameterize z = m + s * eps and differentiate under the integral
        let j = 2 * Self::branch(x);
        let (m, s) = (phi[j], phi[j + 1].exp());
        let xv = Self::branch(x) as f64;
        let dlog_joint = |z: f64| (xv - sigmoid(theta[0] * z + theta[1])) * theta[0] - z;
        let rule = oracle_rule();
        let mut g = vec![0.0; 4];
        g[j] = rule.expect_std_normal(|e| dlog_joint(m + s * e));
        g[j + 1] = rule.expect_std_normal(|e| dlog_joint(m + s * e) * s * e) + 1.0;
        Some(g)
    }
}
