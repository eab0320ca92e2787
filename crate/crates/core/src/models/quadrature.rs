//! Gauss–Hermite quadrature for expectations under a standard normal.

use std::sync::OnceLock;

/// Nodes and weights for `∫ e^{-t^2} g(t) dt ≈ Σ w_i g(t_i)`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Newton iteration on the orthonormal Hermite recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Hermite rule needs at least one node");
        const PIM4: f64 = 0.751_125_544_464_942_5; // pi^(-1/4)
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        let m = n.div_ceil(2);
        let mut z = 0.0f64;
        for i in 0..m {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * nodes[0],
                3 => 1.91 * z - 0.91 * nodes[1],
                _ => 2.0 * z - nodes[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..200 {
                let mut p1 = PIM4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let step = p1 / pp;
                z -= step;
                if step.abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            weights[i] = 2.0 / (pp * pp);
            weights[n - 1 - i] = weights[i];
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        GaussHermite { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `E[g(Z)]` for `Z ~ N(0, 1)`.
    pub fn expect_std_normal(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.std_normal_points().map(|(z, w)| w * g(z)).sum()
    }

    /// Standard-normal points and probability weights (summing to one).
    pub fn std_normal_points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let inv_sqrt_pi = std::f64::consts::FRAC_2_SQRT_PI / 2.0;
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(t, w)| (std::f64::consts::SQRT_2 * t, w * inv_sqrt_pi))
    }
}

/// Node count used by the model oracles.
pub const ORACLE_NODES: usize = 64;

/// The shared 64-node rule.
pub fn oracle_rule() -> &'static GaussHermite {
    static RULE: OnceLock<GaussHermite> = OnceLock::new();
    RULE.get_or_init(|| GaussHermite::new(ORACLE_NODES))
}
