use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use super::{Dataset, LatentModel, LN_2PI};
use crate::error::{Error, Result};

/// Diagonal Gaussian model with an analytic posterior.
///
/// ```text
/// z ~ N(mu0, diag(sigma0^2))        theta = (mu0, log sigma0, log sigmax)
/// x | z ~ N(z, diag(sigmax^2))
/// q(z|x) = N(a*x + b, diag(s^2))    phi = (a, b, log s)   (a elementwise)
/// ```
///
/// Each block of `theta` and `phi` has length `dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GaussianConjugate {
    dim: usize,
}

/// Per-coordinate view of the parameters.
struct Coord {
    mu0: f64,
    var0: f64,
    varx: f64,
}

impl GaussianConjugate {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::contract("gaussian model needs dim >= 1"));
        }
        Ok(GaussianConjugate { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn coord(&self, theta: &[f64], k: usize) -> Coord {
        let d = self.dim;
        Coord {
            mu0: theta[k],
            var0: (2.0 * theta[d + k]).exp(),
            varx: (2.0 * theta[2 * d + k]).exp(),
        }
    }

    fn q_moments(&self, x: &[f64], phi: &[f64], k: usize) -> (f64, f64) {
        let d = self.dim;
        (phi[k] * x[k] + phi[d + k], phi[2 * d + k])
    }

    /// Posterior mean and variance of `z_k` given `x`.
    pub fn posterior(&self, x: &[f64], theta: &[f64]) -> Vec<(f64, f64)> {
        (0..self.dim)
            .map(|k| {
                let c = self.coord(theta, k);
                let v = 1.0 / (1.0 / c.var0 + 1.0 / c.varx);
                (v * (c.mu0 / c.var0 + x[k] / c.varx), v)
            })
            .collect()
    }

    /// The `phi` for which `q(z|x)` equals the posterior for every `x`.
    pub fn exact_posterior_phi(&self, theta: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut phi = vec![0.0; 3 * d];
        for k in 0..d {
            let c = self.coord(theta, k);
            let v = 1.0 / (1.0 / c.var0 + 1.0 / c.varx);
            phi[k] = v / c.varx;
            phi[d + k] = v * c.mu0 / c.var0;
            phi[2 * d + k] = 0.5 * v.ln();
        }
        phi
    }

    /// Maximum of `log p_θ(X)` over `theta`.
    ///
    /// Only `sigma0^2 + sigmax^2` is identified, so the maximizer is a curve;
    /// the returned `theta` splits the marginal variance as
    /// `sigma0^2 = prior_share * tau^2`. Fails when a coordinate has zero
    /// sample variance.
    pub fn mle(&self, data: &Dataset, prior_share: f64) -> Result<(Vec<f64>, f64)> {
        if !(0.0..1.0).contains(&prior_share) || prior_share == 0.0 {
            return Err(Error::contract("prior_share must lie in (0, 1)"));
        }
        let d = self.dim;
        let n = data.len() as f64;
        let mut theta = vec![0.0; 3 * d];
        for k in 0..d {
            let mean = data.points().iter().map(|p| p.as_slice()[k]).sum::<f64>() / n;
            let tau2 = data
                .points()
                .iter()
                .map(|p| (p.as_slice()[k] - mean).powi(2))
                .sum::<f64>()
                / n;
            if tau2 <= 0.0 {
                return Err(Error::contract("degenerate data: zero sample variance"));
            }
            theta[k] = mean;
            theta[d + k] = 0.5 * (prior_share * tau2).ln();
            theta[2 * d + k] = 0.5 * ((1.0 - prior_share) * tau2).ln();
        }
        let value = data
            .points()
            .iter()
            .map(|p| self.log_evidence(p.as_slice(), &theta))
            .sum();
        Ok((theta, value))
    }

    fn log_evidence(&self, x: &[f64], theta: &[f64]) -> f64 {
        (0..self.dim)
            .map(|k| {
                let c = self.coord(theta, k);
                let tau2 = c.var0 + c.varx;
                -0.5 * (LN_2PI + tau2.ln() + (x[k] - c.mu0).powi(2) / tau2)
            })
            .sum()
    }
}

impl LatentModel for GaussianConjugate {
    fn name(&self) -> &'static str {
        "gaussian"
    }

    fn data_dim(&self) -> usize {
        self.dim
    }

    fn latent_dim(&self) -> usize {
        self.dim
    }

    fn theta_dim(&self) -> usize {
        3 * self.dim
    }

    fn phi_dim(&self) -> usize {
        3 * self.dim
    }

    fn sample_q(&self, x: &[f64], phi: &[f64], rng: &mut dyn RngCore, z: &mut [f64]) {
        for (k, zk) in z.iter_mut().enumerate() {
            let (m, log_s) = self.q_moments(x, phi, k);
            let eps: f64 = StandardNormal.sample(rng);
            *zk = m + log_s.exp() * eps;
        }
    }

    fn log_joint(&self, x: &[f64], z: &[f64], theta: &[f64]) -> f64 {
        let d = self.dim;
        (0..d)
            .map(|k| {
                let c = self.coord(theta, k);
                let prior = -0.5 * LN_2PI - theta[d + k] - (z[k] - c.mu0).powi(2) / (2.0 * c.var0);
                let lik = -0.5 * LN_2PI - theta[2 * d + k] - (x[k] - z[k]).powi(2) / (2.0 * c.varx);
                prior + lik
            })
            .sum()
    }

    fn log_q(&self, x: &[f64], z: &[f64], phi: &[f64]) -> f64 {
        (0..self.dim)
            .map(|k| {
                let (m, log_s) = self.q_moments(x, phi, k);
                -0.5 * LN_2PI - log_s - (z[k] - m).powi(2) / (2.0 * (2.0 * log_s).exp())
            })
            .sum()
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
        let d = self.dim;
        let mut log_f = 0.0;
        for k in 0..d {
            let c = self.coord(theta, k);
            let (m, log_s) = self.q_moments(x, phi, k);
            let s2 = (2.0 * log_s).exp();
            let dz0 = z[k] - c.mu0;
            let dx = x[k] - z[k];
            let dq = z[k] - m;

            log_f += -0.5 * LN_2PI - theta[d + k] - dz0 * dz0 / (2.0 * c.var0);
            log_f += -0.5 * LN_2PI - theta[2 * d + k] - dx * dx / (2.0 * c.varx);
            log_f -= -0.5 * LN_2PI - log_s - dq * dq / (2.0 * s2);

            grad_theta_log_f[k] = dz0 / c.var0;
            grad_theta_log_f[d + k] = dz0 * dz0 / c.var0 - 1.0;
            grad_theta_log_f[2 * d + k] = dx * dx / c.varx - 1.0;

            let r = dq / s2;
            grad_phi_log_q[k] = r * x[k];
            grad_phi_log_q[d + k] = r;
            grad_phi_log_q[2 * d + k] = dq * r - 1.0;
        }
        log_f
    }

    fn sample_data(&self, theta: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        (0..self.dim)
            .map(|k| {
                let c = self.coord(theta, k);
                let e1: f64 = StandardNormal.sample(rng);
                let e2: f64 = StandardNormal.sample(rng);
                c.mu0 + c.var0.sqrt() * e1 + c.varx.sqrt() * e2
            })
            .collect()
    }

    fn oracle_log_evidence(&self, x: &[f64], theta: &[f64]) -> Option<f64> {
        Some(self.log_evidence(x, theta))
    }

    fn oracle_grad_log_evidence(&self, x: &[f64], theta: &[f64]) -> Option<Vec<f64>> {
        let d = self.dim;
        let mut g = vec![0.0; 3 * d];
        for k in 0..d {
            let c = self.coord(theta, k);
            let tau2 = c.var0 + c.varx;
            let r = x[k] - c.mu0;
            // d/d(tau^2) of the log density, times d(tau^2)/d(log sigma) = 2 sigma^2
            let dtau = 0.5 * (r * r / (tau2 * tau2) - 1.0 / tau2);
            g[k] = r / tau2;
            g[d + k] = 2.0 * c.var0 * dtau;
            g[2 * d + k] = 2.0 * c.varx * dtau;
        }
        Some(g)
    }

    fn oracle_elbo_grad_phi(&self, x: &[f64], theta: &[f64], phi: &[f64]) -> Option<Vec<f64>> {
        let d = self.dim;
        let post = self.posterior(x, theta);
        let mut g = vec![0.0; 3 * d];
        for (k, &(mp, vp)) in post.iter().enumerate() {
            let (m, log_s) = self.q_moments(x, phi, k);
            let s2 = (2.0 * log_s).exp();
            let dm = -(m - mp) / vp;
            g[k] = dm * x[k];
            g[d + k] = dm;
            g[2 * d + k] = 1.0 - s2 / vp;
        }
        Some(g)
    }

    fn oracle_posterior_kl(&self, x: &[f64], theta: &[f64], phi: &[f64]) -> Result<f64> {
        let post = self.posterior(x, theta);
        let kl = post
            .iter()
            .enumerate()
            .map(|(k, &(mp, vp))| {
                let (m, log_s) = self.q_moments(x, phi, k);
                let s2 = (2.0 * log_s).exp();
                0.5 * (vp.ln() - 2.0 * log_s) + (s2 + (m - mp).powi(2)) / (2.0 * vp) - 0.5
            })
            .sum::<f64>();
        Ok(kl.max(0.0))
    }
}
