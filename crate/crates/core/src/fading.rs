//! Per-hypothesis estimation of an unknown fading coefficient.
//!
//! All recursions are written in noise-normalized units (unit observation
//! noise). Callers with a general σ² divide both the observation `y` and the
//! regressor `c = √P·wᴴA(θ_i)` by σ first.

use std::time::Instant;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Complex Gaussian prior `α ~ CN(mean, var)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FadingPrior {
    pub mean: Complex64,
    pub var: f64,
}

impl Default for FadingPrior {
    /// `CN(1, 0.25²)`.
    fn default() -> Self {
        Self {
            mean: Complex64::new(1.0, 0.0),
            var: 0.0625,
        }
    }
}

impl FadingPrior {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Complex64 {
        let sd = (self.var / 2.0).sqrt();
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        self.mean + Complex64::new(sd * re, sd * im)
    }
}

/// Gaussian belief over α for every hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingBelief {
    pub mu: Vec<Complex64>,
    pub sigma: Vec<f64>,
}

impl FadingBelief {
    pub fn from_prior(prior: &FadingPrior, hypotheses: usize) -> Self {
        Self {
            mu: vec![prior.mean; hypotheses],
            sigma: vec![prior.var; hypotheses],
        }
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn kalman_update(&mut self, i: usize, c: Complex64, y: Complex64) {
        let (mu, sigma) = kalman_step(self.mu[i], self.sigma[i], c, y);
        self.mu[i] = mu;
        self.sigma[i] = sigma;
    }

    pub fn nu(&self, i: usize, c: Complex64, y: Complex64) -> f64 {
        nu_unknown(self.mu[i], self.sigma[i], c, y)
    }
}

/// One Kalman step for `y = α·c + n`, `n ~ CN(0, 1)`.
pub fn kalman_step(mu: Complex64, sigma: f64, c: Complex64, y: Complex64) -> (Complex64, f64) {
    debug_assert!(sigma >= 0.0);
    let denom = sigma * c.norm_sqr() + 1.0;
    let gain = c.conj() * (sigma / denom);
    (mu + gain * (y - mu * c), sigma / denom)
}

/// Probability factor with α marginalized under the current belief.
pub fn nu_unknown(mu: Complex64, sigma: f64, c: Complex64, y: Complex64) -> f64 {
    log_nu_unknown(mu, sigma, c, y).exp()
}

pub fn log_nu_unknown(mu: Complex64, sigma: f64, c: Complex64, y: Complex64) -> f64 {
    -(y - mu * c).norm_sqr() / (sigma * c.norm_sqr() + 1.0)
}

/// Closed-form conjugate posterior of α after a whole observation history.
///
/// Precision `1/σ' = 1/σ_α + Σ|c_t|²`, mean `μ' = σ'·(μ_α/σ_α + Σ c_t*·y_t)`.
/// A degenerate prior (`σ_α = 0`) is returned unchanged.
pub fn batch_mmse(history: &[(Complex64, Complex64)], prior: &FadingPrior) -> (Complex64, f64) {
    if prior.var == 0.0 {
        return (prior.mean, 0.0);
    }
    let (precision, info) = history.iter().fold(
        (1.0 / prior.var, prior.mean / prior.var),
        |(p, s), (c, y)| (p + c.norm_sqr(), s + c.conj() * y),
    );
    let var = 1.0 / precision;
    (info * var, var)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RuntimeComparison {
    pub steps: usize,
    pub hypotheses: usize,
    /// Mean wall-clock seconds per trial.
    pub kalman_seconds: f64,
    pub batch_seconds: f64,
    /// Scalar recursions per hypothesis per trial (`T`).
    pub kalman_updates: usize,
    /// History terms folded per hypothesis per trial (`T(T+1)/2`).
    pub batch_terms: usize,
}

impl RuntimeComparison {
    pub fn ratio(&self) -> f64 {
        self.batch_seconds / self.kalman_seconds
    }
}

/// Times sequential Kalman tracking against recomputing the batch posterior
/// from the full history at every step, over random regressors and observations.
pub fn runtime_compare<R: Rng + ?Sized>(
    trials: usize,
    steps: usize,
    hypotheses: usize,
    prior: &FadingPrior,
    rng: &mut R,
) -> RuntimeComparison {
    let draw = |rng: &mut R| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        Complex64::new(re, im)
    };
    let mut kalman_seconds = 0.0;
    let mut batch_seconds = 0.0;
    let mut sink = Complex64::new(0.0, 0.0);
    let mut batch_terms = 0;
    for _ in 0..trials {
        let obs: Vec<Vec<(Complex64, Complex64)>> = (0..steps)
            .map(|_| (0..hypotheses).map(|_| (draw(rng), draw(rng))).collect())
            .collect();

        let start = Instant::now();
        let mut belief = FadingBelief::from_prior(prior, hypotheses);
        for row in &obs {
            for (i, &(c, y)) in row.iter().enumerate() {
                sink += belief.nu(i, c, y) * belief.mu[i];
                belief.kalman_update(i, c, y);
            }
        }
        kalman_seconds += start.elapsed().as_secs_f64();

        let start = Instant::now();
        let mut history: Vec<Vec<(Complex64, Complex64)>> =
            vec![Vec::with_capacity(steps); hypotheses];
        let mut current = vec![(prior.mean, prior.var); hypotheses];
        batch_terms = 0;
        for row in &obs {
            for (i, &(c, y)) in row.iter().enumerate() {
                let (mu, sigma) = current[i];
                sink += nu_unknown(mu, sigma, c, y) * mu;
                history[i].push((c, y));
                current[i] = batch_mmse(&history[i], prior);
            }
            batch_terms += history[0].len();
        }
        batch_seconds += start.elapsed().as_secs_f64();
    }
    std::hint::black_box(sink);
    let n = trials.max(1) as f64;
    RuntimeComparison {
        steps,
        hypotheses,
        kalman_seconds: kalman_seconds / n,
        batch_seconds: batch_seconds / n,
        kalman_updates: steps,
        batch_terms,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn kalman_examples() {
        let (mu, s) = kalman_step(c(0.4, 1.0), 0.0, c(2.0, -1.0), c(5.0, 5.0));
        assert_eq!((mu, s), (c(0.4, 1.0), 0.0));

        let (mu, s) = kalman_step(c(0.4, 1.0), 0.3, c(0.0, 0.0), c(5.0, 5.0));
        assert_eq!((mu, s), (c(0.4, 1.0), 0.3));

        let (m0, cc) = (c(0.7, -0.2), c(1.5, 0.5));
        let (mu, s) = kalman_step(m0, 0.3, cc, m0 * cc);
        assert!((mu - m0).norm() < 1e-15);
        assert!((s - 0.3 / (0.3 * 2.5 + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn nu_examples() {
        let (mu, cc) = (c(0.2, 0.9), c(-1.1, 0.4));
        assert_eq!(nu_unknown(mu, 0.5, cc, mu * cc), 1.0);
        assert!((nu_unknown(mu, 1e12, cc, c(3.0, -2.0)) - 1.0).abs() < 1e-9);
        let v = nu_unknown(c(1.0, 0.0), 0.0625, c(1.0, 0.0), c(2.0, 0.0));
        assert!((v - (-1.0f64 / 1.0625).exp()).abs() < 1e-15);
        assert!((v - 0.390_168_5).abs() < 1e-6);
    }

    #[test]
    fn batch_edge_cases() {
        let prior = FadingPrior::default();
        assert_eq!(batch_mmse(&[], &prior), (prior.mean, prior.var));

        let (cc, y) = (c(0.8, 0.3), c(1.1, -0.4));
        let (mb, sb) = batch_mmse(&[(cc, y)], &prior);
        let (mk, sk) = kalman_step(prior.mean, prior.var, cc, y);
        assert!((mb - mk).norm() < 1e-14 && (sb - sk).abs() < 1e-15);

        let point = FadingPrior {
            mean: c(2.0, 0.0),
            var: 0.0,
        };
        assert_eq!(batch_mmse(&[(cc, y)], &point), (c(2.0, 0.0), 0.0));
    }

    #[test]
    fn confident_prior_recovers_known_alpha_factor() {
        let alpha = c(0.9, 0.2);
        let prior = FadingPrior {
            mean: alpha,
            var: 1e-14,
        };
        let (cc, y) = (c(0.3, -0.7), c(0.1, 0.5));
        let known = (-(y - alpha * cc).norm_sqr()).exp();
        assert!((nu_unknown(prior.mean, prior.var, cc, y) - known).abs() < 1e-12);
    }

    #[test]
    fn operation_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = runtime_compare(2, 1, 4, &FadingPrior::default(), &mut rng);
        assert_eq!((r.kalman_updates, r.batch_terms), (1, 1));
        let r = runtime_compare(2, 14, 4, &FadingPrior::default(), &mut rng);
        assert_eq!((r.kalman_updates, r.batch_terms), (14, 105));
    }

    proptest! {
        #[test]
        fn sequential_matches_batch_on_every_prefix(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let prior = FadingPrior { mean: c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)), var: rng.random_range(0.01..2.0) };
            let mut history = Vec::new();
            let (mut mu, mut sigma) = (prior.mean, prior.var);
            for _ in 0..10 {
                let cc = c(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
                let y = c(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
                let prev = sigma;
                (mu, sigma) = kalman_step(mu, sigma, cc, y);
                prop_assert!(sigma < prev);
                history.push((cc, y));
                let (mb, sb) = batch_mmse(&history, &prior);
                prop_assert!((mb - mu).norm() < 1e-8);
                prop_assert!((sb - sigma).abs() < 1e-10);
            }
        }
    }
}
