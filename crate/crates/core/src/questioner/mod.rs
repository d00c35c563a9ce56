//! Posterior-matching questioner: query selection, Bayesian updates,
//! stopping and decoding.

mod alignment;
mod likelihood;

pub use alignment::{
    accuracy, run_alignment, write_trace_jsonl, Alignment, FadingEstimator, StepRecord, TrialResult,
};
pub use likelihood::{
    calibrate_flip, likelihood_delta, one_bit_delta, FadingState, FlipModel, Measurement,
    MeasurementRule,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::AngleGrid;

/// Smallest likelihood admitted into an update.
pub const DELTA_FLOOR: f64 = 1e-300;

/// Sorted, de-duplicated set of 0-based bin indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Query {
    bins: Vec<usize>,
}

impl Query {
    pub fn new(mut bins: Vec<usize>) -> Result<Self> {
        if bins.is_empty() {
            return Err(Error::domain("query must contain at least one bin"));
        }
        bins.sort_unstable();
        bins.dedup();
        Ok(Self { bins })
    }

    /// Every bin of an `m`-bin grid.
    pub fn all(m: usize) -> Result<Self> {
        Self::new((0..m).collect())
    }

    pub fn bins(&self) -> &[usize] {
        &self.bins
    }

    /// Query size `K`.
    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn contains(&self, bin: usize) -> bool {
        self.bins.binary_search(&bin).is_ok()
    }

    /// `K / M`.
    pub fn size_fraction(&self, m: usize) -> f64 {
        self.len() as f64 / m as f64
    }

    pub fn membership(&self, m: usize) -> Vec<bool> {
        let mut v = vec![false; m];
        self.bins
            .iter()
            .filter(|&&b| b < m)
            .for_each(|&b| v[b] = true);
        v
    }
}

impl TryFrom<Vec<usize>> for Query {
    type Error = Error;

    fn try_from(bins: Vec<usize>) -> Result<Self> {
        Self::new(bins)
    }
}

impl From<Query> for Vec<usize> {
    fn from(q: Query) -> Self {
        q.bins
    }
}

/// Probability vector over the `M` bin hypotheses.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Posterior {
    rho: Vec<f64>,
}

impl Posterior {
    pub fn uniform(m: usize) -> Self {
        assert!(m > 0, "posterior needs at least one hypothesis");
        Self {
            rho: vec![1.0 / m as f64; m],
        }
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::domain(
                "posterior weights must be finite and non-negative",
            ));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 || !total.is_finite() {
            return Err(Error::DegenerateUpdate);
        }
        Ok(Self {
            rho: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.rho
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    /// Index of the largest entry, lowest index on ties.
    pub fn argmax(&self) -> usize {
        self.rho
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &r)| {
                if r > best.1 {
                    (i, r)
                } else {
                    best
                }
            })
            .0
    }

    pub fn max(&self) -> f64 {
        self.rho.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Total-variation distance to the uniform distribution.
    pub fn tv_from_uniform(&self) -> f64 {
        let u = 1.0 / self.len() as f64;
        0.5 * self.rho.iter().map(|r| (r - u).abs()).sum::<f64>()
    }

    /// Bayes update with likelihoods clamped below at [`DELTA_FLOOR`].
    pub fn update(&self, deltas: &[f64]) -> Result<Self> {
        self.check_len(deltas.len())?;
        if deltas.iter().any(|d| d.is_nan() || *d < 0.0) {
            return Err(Error::domain("likelihoods must be non-negative"));
        }
        if deltas.iter().all(|&d| d == 0.0) {
            return Err(Error::DegenerateUpdate);
        }
        Self::from_weights(
            self.rho
                .iter()
                .zip(deltas)
                .map(|(r, d)| r * d.max(DELTA_FLOOR))
                .collect(),
        )
    }

    /// Bayes update from log-likelihoods, stable when every factor underflows.
    /// Factors are floored at [`DELTA_FLOOR`] relative to the largest one.
    pub fn update_log(&self, log_deltas: &[f64]) -> Result<Self> {
        self.check_len(log_deltas.len())?;
        let floor = log_deltas.iter().copied().fold(f64::NEG_INFINITY, f64::max) + DELTA_FLOOR.ln();
        let logs: Vec<f64> = self
            .rho
            .iter()
            .zip(log_deltas)
            .map(|(r, l)| r.ln() + l.max(floor))
            .collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !top.is_finite() {
            return Err(Error::DegenerateUpdate);
        }
        Self::from_weights(logs.into_iter().map(|l| (l - top).exp()).collect())
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.len() {
            return Err(Error::Shape {
                expected: self.len(),
                actual: n,
            });
        }
        Ok(())
    }
}

pub fn update_posterior(rho: &Posterior, deltas: &[f64]) -> Result<Posterior> {
    rho.update(deltas)
}

/// Bins ordered by descending probability, ties by ascending index.
fn ranked(rho: &Posterior) -> Vec<usize> {
    let p = rho.as_slice();
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    order
}

/// Chooses the next query from the posterior.
pub trait QueryStrategy: Send + Sync {
    fn select(&self, rho: &Posterior) -> Query;
}

/// Which prefix of the sorted posterior a [`SortPm`] strategy asks about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SortPm {
    /// Shortest prefix holding at least half the mass.
    Prefix,
    /// Prefix whose mass is closest to one half (shorter on ties).
    #[default]
    Closest,
}

impl SortPm {
    pub fn prefix() -> Self {
        SortPm::Prefix
    }

    pub fn closest() -> Self {
        SortPm::Closest
    }
}

impl QueryStrategy for SortPm {
    fn select(&self, rho: &Posterior) -> Query {
        match self {
            SortPm::Prefix => sortpm_select(rho),
            SortPm::Closest => sortpm_closest(rho),
        }
    }
}

const HALF: f64 = 0.5 - 1e-12;

/// Shortest descending-sorted prefix with cumulative probability ≥ 1/2.
pub fn sortpm_select(rho: &Posterior) -> Query {
    let mut mass = 0.0;
    let mut bins = Vec::new();
    for i in ranked(rho) {
        bins.push(i);
        mass += rho.as_slice()[i];
        if mass >= HALF {
            break;
        }
    }
    Query::new(bins).expect("posterior is non-empty")
}

pub fn sortpm_closest(rho: &Posterior) -> Query {
    let order = ranked(rho);
    let mut mass = 0.0;
    let (mut best, mut best_len) = (f64::INFINITY, 1);
    for (n, &i) in order.iter().enumerate() {
        mass += rho.as_slice()[i];
        let d = (mass - 0.5).abs();
        if d < best - 1e-12 {
            (best, best_len) = (d, n + 1);
        }
        if mass >= HALF {
            break;
        }
    }
    Query::new(order[..best_len].to_vec()).expect("posterior is non-empty")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Stop(usize),
    Continue,
}

/// Stops once the posterior is `1 − ε` confident or the budget of `n` pilots is spent.
pub fn stop_or_continue(rho: &Posterior, epsilon: f64, t: usize, n: usize) -> StopDecision {
    if rho.max() > 1.0 - epsilon || t >= n {
        StopDecision::Stop(rho.argmax())
    } else {
        StopDecision::Continue
    }
}

/// Midpoint angle of a decoded bin.
pub fn decode(bin: usize, grid: &AngleGrid) -> f64 {
    grid.bin_midpoint(bin)
}

pub fn quadratic_loss(theta_hat: f64, theta_true: f64) -> f64 {
    (theta_hat - theta_true).powi(2)
}
