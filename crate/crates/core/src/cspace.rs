//! Configuration-space types, the metric and samplers.

use std::ops::{Deref, DerefMut};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Joint positions in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Configuration(pub Vec<f64>);

impl Configuration {
    pub fn new(q: Vec<f64>) -> Self {
        Configuration(q)
    }

    pub fn zeros(n: usize) -> Self {
        Configuration(vec![0.0; n])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn sub(&self, other: &Configuration) -> Vec<f64> {
        self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect()
    }

    /// `self + s * dir`
    pub fn offset(&self, dir: &[f64], s: f64) -> Configuration {
        Configuration(self.0.iter().zip(dir).map(|(q, e)| q + s * e).collect())
    }
}

impl Deref for Configuration {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Configuration {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for Configuration {
    fn from(v: Vec<f64>) -> Self {
        Configuration(v)
    }
}

/// Position, velocity and acceleration of every joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtendedConfiguration {
    pub q: Configuration,
    pub q_dot: Vec<f64>,
    pub q_ddot: Vec<f64>,
}

impl ExtendedConfiguration {
    pub fn at_rest(q: Configuration) -> Self {
        let n = q.dim();
        ExtendedConfiguration {
            q,
            q_dot: vec![0.0; n],
            q_ddot: vec![0.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.q.dim()
    }

    pub fn is_at_rest(&self, tol: f64) -> bool {
        self.q_dot.iter().chain(&self.q_ddot).all(|x| x.abs() <= tol)
    }

    pub fn speed(&self) -> f64 {
        norm(&self.q_dot)
    }

    pub fn is_finite(&self) -> bool {
        self.q.is_finite() && self.q_dot.iter().chain(&self.q_ddot).all(|x| x.is_finite())
    }
}

/// Lower/upper bound per joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointLimits(pub Vec<(f64, f64)>);

impl JointLimits {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn contains(&self, q: &[f64]) -> bool {
        q.len() == self.0.len() && q.iter().zip(&self.0).all(|(x, (lo, hi))| *x >= *lo && *x <= *hi)
    }

    pub fn clamp(&self, q: &mut [f64]) {
        for (x, (lo, hi)) in q.iter_mut().zip(&self.0) {
            *x = x.clamp(*lo, *hi);
        }
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Plain Euclidean distance; callers guarantee equal dimensions.
pub fn rho(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Weighted Euclidean metric on configurations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    /// Per-joint weights; `None` means unit weights.
    pub weights: Option<Vec<f64>>,
}

impl Metric {
    pub fn distance(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: a.len(),
                got: b.len(),
            });
        }
        match &self.weights {
            None => Ok(rho(a, b)),
            Some(w) => {
                if w.len() != a.len() {
                    return Err(Error::DimensionMismatch {
                        expected: w.len(),
                        got: a.len(),
                    });
                }
                Ok(a.iter()
                    .zip(b)
                    .zip(w)
                    .map(|((x, y), w)| w * (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt())
            }
        }
    }
}

/// Unit-weight metric between two configurations.
pub fn metric_rho(q1: &Configuration, q2: &Configuration) -> Result<f64> {
    Metric::default().distance(q1, q2)
}

pub fn interpolate(q1: &Configuration, q2: &Configuration, s: f64) -> Configuration {
    debug_assert!((0.0..=1.0).contains(&s));
    Configuration(q1.iter().zip(q2.iter()).map(|(a, b)| a + s * (b - a)).collect())
}

pub fn sample_uniform<R: Rng + ?Sized>(limits: &JointLimits, rng: &mut R) -> Configuration {
    Configuration(limits.0.iter().map(|(lo, hi)| rng.random_range(*lo..=*hi)).collect())
}

/// Uniform direction on the unit sphere in `n` dimensions.
pub fn random_unit<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let len = norm(&v);
        if len > 1e-12 {
            return v.into_iter().map(|x| x / len).collect();
        }
    }
}

/// Uniform sample from the metric ball of `radius` around `q`, intersected
/// with the joint limits.
pub fn sample_neighborhood<R: Rng + ?Sized>(
    q: &Configuration,
    radius: f64,
    limits: &JointLimits,
    rng: &mut R,
) -> Configuration {
    let n = q.dim();
    let mut candidate = q.clone();
    for _ in 0..64 {
        let dir = random_unit(n, rng);
        let r = radius * rng.random::<f64>().powf(1.0 / n as f64);
        candidate = q.offset(&dir, r);
        if limits.contains(&candidate) {
            return candidate;
        }
    }
    // projection onto the limit box never increases the distance to q
    limits.clamp(&mut candidate);
    candidate
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn metric_basics() {
        let a = Configuration::new(vec![0.0, 0.0]);
        let b = Configuration::new(vec![3.0, 4.0]);
        assert_eq!(metric_rho(&a, &a).unwrap(), 0.0);
        assert_eq!(metric_rho(&a, &b).unwrap(), 5.0);
        assert!(matches!(
            metric_rho(&a, &Configuration::zeros(3)),
            Err(Error::DimensionMismatch { .. })
        ));
        let weighted = Metric {
            weights: Some(vec![4.0, 1.0]),
        };
        assert_eq!(weighted.distance(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), 2.0);
    }

    #[test]
    fn interpolation_endpoints() {
        let a = Configuration::new(vec![1.0, -1.0]);
        let b = Configuration::new(vec![3.0, 1.0]);
        assert_eq!(interpolate(&a, &b, 0.0), a);
        assert_eq!(interpolate(&a, &b, 1.0), b);
        assert_eq!(interpolate(&a, &b, 0.5).0, vec![2.0, 0.0]);
    }

    #[test]
    fn neighborhood_stays_in_ball() {
        let limits = JointLimits(vec![(-1.0, 1.0); 3]);
        let q = Configuration::new(vec![0.9, 0.0, -0.9]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let s = sample_neighborhood(&q, 0.5, &limits, &mut rng);
            assert!(rho(&q, &s) <= 0.5 + 1e-12);
            assert!(limits.contains(&s));
        }
        let s = sample_neighborhood(&q, 1e-15, &limits, &mut rng);
        assert!(rho(&q, &s) < 1e-14);
    }

    #[test]
    fn seeded_streams_repeat() {
        let limits = JointLimits(vec![(-3.0, 3.0); 4]);
        let mut r1 = ChaCha8Rng::seed_from_u64(11);
        let mut r2 = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            assert_eq!(sample_uniform(&limits, &mut r1), sample_uniform(&limits, &mut r2));
        }
    }
}
