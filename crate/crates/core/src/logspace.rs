//! Log-domain reductions shared by every estimator.
//!
//! Importance weights are only ever handled through their natural logs.
//! Reductions use a single max-shift pass in `f64`.

use crate::error::{Error, Result};

fn check_finite(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::contract("log-domain reduction over an empty buffer"));
    }
    if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::contract(format!("non-finite log value {v} at position {i}")));
    }
    Ok(())
}

fn max_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// An owned buffer of finite log-domain values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LogValueBuffer {
    values: Vec<f64>,
}

impl LogValueBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        LogValueBuffer {
            values: Vec::with_capacity(n),
        }
    }

    /// Rejects negative infinity (a zero density) along with NaN and +inf.
    pub fn push(&mut self, v: f64) -> Result<()> {
        if !v.is_finite() {
            return Err(Error::contract(format!("non-finite log value {v}")));
        }
        self.values.push(v);
        Ok(())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn log_mean_exp(&self) -> Result<f64> {
        log_mean_exp(&self.values)
    }

    pub fn softmax_weights(&self) -> Result<Vec<f64>> {
        softmax_weights(&self.values)
    }
}

impl TryFrom<Vec<f64>> for LogValueBuffer {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::contract(format!("non-finite log value {v}")));
        }
        Ok(LogValueBuffer { values })
    }
}

/// `log(Σ exp(v_i))`.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    check_finite(values)?;
    let m = max_of(values);
    let s: f64 = values.iter().map(|v| (v - m).exp()).sum();
    Ok(m + s.ln())
}

/// `log((1/n) Σ exp(v_i))`, the log of a sample mean of weights.
pub fn log_mean_exp(values: &[f64]) -> Result<f64> {
    Ok(log_sum_exp(values)? - (values.len() as f64).ln())
}

/// Log of the mean of two equal-sized halves given the log-means of each half:
/// `log((e^a + e^b) / 2)`.
pub fn combine_halves(a: f64, b: f64) -> Result<f64> {
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::contract(format!("non-finite half log-mean ({a}, {b})")));
    }
    let m = a.max(b);
    Ok(m + (-(a - b).abs()).exp().ln_1p() - std::f64::consts::LN_2)
}

/// Normalized weights `exp(v_i - log_sum_exp(v))`.
pub fn softmax_weights(values: &[f64]) -> Result<Vec<f64>> {
    let lse = log_sum_exp(values)?;
    Ok(values.iter().map(|v| (v - lse).exp()).collect())
}

/// Self-normalized average `Σ w_i g_i` of row-major per-sample vectors
/// `grads` (one row of length `dim` per log value).
///
/// With `v_i = log f_i` and `g_i = ∇ log f_i` this is `Σ ∇f_i / Σ f_i`.
pub fn softmax_weighted_mean(values: &[f64], grads: &[f64], dim: usize) -> Result<Vec<f64>> {
    if grads.len() != values.len() * dim {
        return Err(Error::contract(format!(
            "gradient buffer has {} entries, expected {} x {}",
            grads.len(),
            values.len(),
            dim
        )));
    }
    let weights = softmax_weights(values)?;
    let mut out = vec![0.0; dim];
    for (w, row) in weights.iter().zip(grads.chunks_exact(dim.max(1))) {
        for (o, g) in out.iter_mut().zip(row) {
            *o += w * g;
        }
    }
    Ok(out)
}

/// Welford accumulator for mean and variance.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StreamingMoments {
    count: u64,
    mean: f64,
    m2: f64,
}

impl StreamingMoments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
        if self.m2 < 0.0 {
            self.m2 = 0.0;
        }
    }

    /// Chan et al. pairwise combination.
    pub fn merge(&mut self, other: &StreamingMoments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        let (na, nb) = (self.count as f64, other.count as f64);
        self.mean += delta * nb / n;
        self.m2 += other.m2 + delta * delta * na * nb / n;
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn m2(&self) -> f64 {
        self.m2
    }

    /// Unbiased sample variance; `None` below two observations.
    pub fn variance(&self) -> Option<f64> {
        (self.count >= 2).then(|| self.m2 / (self.count - 1) as f64)
    }

    /// Standard error of the mean; `None` below two observations.
    pub fn std_error(&self) -> Option<f64> {
        self.variance().map(|v| (v / self.count as f64).sqrt())
    }
}

impl FromIterator<f64> for StreamingMoments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = StreamingMoments::new();
        for x in iter {
            m.push(x);
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    const LN3: f64 = 1.098_612_288_668_109_8;

    #[test]
    fn log_mean_exp_examples() {
        assert_eq!(log_mean_exp(&[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(log_mean_exp(&[1000.0, 1000.0]).unwrap(), 1000.0);
        let v = log_mean_exp(&[0.0, LN3]).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-15, "{v}");
    }

    #[test]
    fn reductions_reject_bad_input() {
        assert!(matches!(log_mean_exp(&[]), Err(Error::Contract(_))));
        assert!(log_mean_exp(&[0.0, f64::NAN]).is_err());
        assert!(log_mean_exp(&[f64::NEG_INFINITY]).is_err());
        assert!(softmax_weights(&[]).is_err());
        assert!(combine_halves(f64::NEG_INFINITY, 0.0).is_err());
        let mut buf = LogValueBuffer::new();
        assert!(buf.push(f64::NEG_INFINITY).is_err());
        assert!(buf.is_empty());
        assert!(LogValueBuffer::try_from(vec![0.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn combine_halves_examples() {
        for c in [-700.0, -1.5, 0.0, 3.25, 650.0] {
            assert_eq!(combine_halves(c, c).unwrap(), c);
        }
        assert!((combine_halves(0.0, LN3).unwrap() - 2f64.ln()).abs() < 1e-15);
        let v = combine_halves(-745.0, 0.0).unwrap();
        assert!((v - 0.5f64.ln()).abs() < 1e-15, "{v}");
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_weights(&[0.0; 4]).unwrap(), vec![0.25; 4]);
        let w = softmax_weights(&[0.0, LN3]).unwrap();
        assert!((w[0] - 0.25).abs() < 1e-15 && (w[1] - 0.75).abs() < 1e-15, "{w:?}");
        let w = softmax_weights(&[2.0, 1002.0]).unwrap();
        assert!(w[0] < 1e-300 && (w[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn buffer_methods_match_free_functions() {
        let buf = LogValueBuffer::try_from(vec![0.5, -1.0, 2.0]).unwrap();
        assert_eq!(buf.log_mean_exp().unwrap(), log_mean_exp(buf.as_slice()).unwrap());
        assert_eq!(buf.softmax_weights().unwrap(), softmax_weights(buf.as_slice()).unwrap());
    }

    #[test]
    fn streaming_moments_match_two_pass() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let xs: Vec<f64> = (0..100_000).map(|_| 3.0 + 2.0 * rng.random::<f64>()).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let acc: StreamingMoments = xs.iter().copied().collect();
        assert!(((acc.mean() - mean) / mean).abs() < 1e-9);
        assert!(((acc.variance().unwrap() - var) / var).abs() < 1e-9);

        let (a, b) = xs.split_at(31_337);
        let mut left: StreamingMoments = a.iter().copied().collect();
        left.merge(&b.iter().copied().collect());
        assert_eq!(left.count(), acc.count());
        assert!(((left.variance().unwrap() - var) / var).abs() < 1e-9);
    }

    #[test]
    fn streaming_moments_small_counts() {
        let mut m = StreamingMoments::new();
        assert_eq!(m.variance(), None);
        m.push(1.0);
        assert_eq!(m.variance(), None);
        m.push(1.0);
        assert_eq!(m.variance(), Some(0.0));
        let mut empty = StreamingMoments::new();
        empty.merge(&m);
        assert_eq!(empty, m);
    }

    proptest! {
        #[test]
        fn log_mean_exp_is_shift_invariant(
            v in prop::collection::vec(-50.0f64..50.0, 1..64),
            c in -700.0f64..700.0,
        ) {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let lhs = log_mean_exp(&shifted).unwrap();
            let rhs = log_mean_exp(&v).unwrap() + c;
            prop_assert!((lhs - rhs).abs() < 1e-12 * (1.0 + rhs.abs()));
        }

        #[test]
        fn log_mean_exp_stays_in_range(v in prop::collection::vec(-300.0f64..300.0, 1..64)) {
            let out = log_mean_exp(&v).unwrap();
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = max_of(&v);
            prop_assert!(out >= lo - 1e-12 && out <= hi + 1e-12);
        }

        #[test]
        fn halves_recombine_exactly(v in prop::collection::vec(-300.0f64..300.0, 1..64)) {
            let mut full = v.clone();
            full.extend(v.iter().map(|x| x * 0.5 - 3.0));
            let (a, b) = full.split_at(v.len());
            let joined = combine_halves(log_mean_exp(a).unwrap(), log_mean_exp(b).unwrap()).unwrap();
            let direct = log_mean_exp(&full).unwrap();
            prop_assert!((joined - direct).abs() <= 1e-12 * direct.abs().max(1.0));
        }

        #[test]
        fn softmax_is_normalized_and_shift_invariant(
            v in prop::collection::vec(-300.0f64..300.0, 1..64),
            c in -300.0f64..300.0,
        ) {
            let w = softmax_weights(&v).unwrap();
            prop_assert!(w.iter().all(|x| *x >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let ws = softmax_weights(&shifted).unwrap();
            for (a, b) in w.iter().zip(&ws) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn weighted_mean_matches_direct_ratio(
            rows in prop::collection::vec((-30.0f64..30.0, -5.0f64..5.0, -5.0f64..5.0), 1..32),
        ) {
            let v: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let g: Vec<f64> = rows.iter().flat_map(|r| [r.1, r.2]).collect();
            let got = softmax_weighted_mean(&v, &g, 2).unwrap();
            let denom: f64 = v.iter().map(|x| x.exp()).sum();
            for (k, g) in got.iter().enumerate() {
                let num: f64 = rows.iter().map(|r| r.0.exp() * if k == 0 { r.1 } else { r.2 }).sum();
                let direct = num / denom;
                prop_assert!((g - direct).abs() <= 1e-10 * direct.abs().max(1e-3));
            }
        }
    }
}
