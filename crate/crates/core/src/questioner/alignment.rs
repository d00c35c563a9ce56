use std::io::Write;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::likelihood::{log_full_factors, normalized};
use super::{
    decode, one_bit_delta, quadratic_loss, stop_or_continue, FlipModel, Measurement,
    MeasurementRule, Posterior, Query, QueryStrategy, StopDecision,
};
use crate::beamformer::{threshold_select, QueryMapper};
use crate::channel::{measure_1bit, measure_full, receive, ResponseModel};
use crate::error::{Error, Result};
use crate::fading::{batch_mmse, FadingBelief, FadingPrior};
use crate::geometry::AngleGrid;

/// How the full-rule likelihood treats the fading coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "estimator", rename_all = "lowercase")]
pub enum FadingEstimator {
    /// α taken from the channel parameters.
    #[default]
    Known,
    /// Per-hypothesis Kalman tracking from a Gaussian prior.
    Kalman { prior: FadingPrior },
    /// Conjugate batch posterior recomputed from the full history each step.
    Mmse { prior: FadingPrior },
}

impl FadingEstimator {
    pub fn name(&self) -> &'static str {
        match self {
            FadingEstimator::Known => "known",
            FadingEstimator::Kalman { .. } => "kalman",
            FadingEstimator::Mmse { .. } => "mmse",
        }
    }

    pub fn prior(&self) -> Option<FadingPrior> {
        match self {
            FadingEstimator::Known => None,
            FadingEstimator::Kalman { prior } | FadingEstimator::Mmse { prior } => Some(*prior),
        }
    }
}

/// One adaptive alignment setup, shared read-only across trials.
#[derive(Clone, Copy)]
pub struct Alignment<'a> {
    pub grid: &'a AngleGrid,
    pub mapper: &'a dyn QueryMapper,
    pub strategy: &'a dyn QueryStrategy,
    pub rule: MeasurementRule,
    pub response: &'a ResponseModel,
    pub flip: &'a FlipModel,
    pub fading: FadingEstimator,
    pub epsilon: f64,
    /// Pilot budget `n`.
    pub budget: usize,
}

impl Alignment<'_> {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::config(format!(
                "epsilon {} outside (0, 1)",
                self.epsilon
            )));
        }
        if self.budget == 0 {
            return Err(Error::config("pilot budget must be at least 1"));
        }
        match (self.rule, self.response, self.fading) {
            (MeasurementRule::Full, ResponseModel::Abstract(_), _) => Err(Error::config(
                "the full measurement rule needs the physical channel model",
            )),
            (
                MeasurementRule::OneBit,
                _,
                FadingEstimator::Kalman { .. } | FadingEstimator::Mmse { .. },
            ) => Err(Error::config(
                "fading estimation is only defined for the full measurement rule",
            )),
            (MeasurementRule::OneBit, _, _) => {
                let m = self.grid.bins();
                for k in 1..=m {
                    let p = self.flip.p(k);
                    if !(p > 0.0 && p < 0.5) {
                        return Err(Error::config(format!(
                            "flip probability {p} for K={k} outside (0, 0.5)"
                        )));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: usize,
    pub query_size: usize,
    pub query: Query,
    pub measurement: Measurement,
    /// Region answer implied by the measurement.
    pub response: bool,
    /// Whether the target actually lies in the queried region.
    pub desired: bool,
    pub posterior_max: f64,
    pub uniform_tv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub theta_true: f64,
    pub theta_hat: f64,
    pub bin_hat: usize,
    /// Pilots used.
    pub tau: usize,
    pub loss: f64,
    pub trace: Vec<StepRecord>,
}

impl TrialResult {
    pub fn correct_responses(&self) -> usize {
        self.trace
            .iter()
            .filter(|s| s.response == s.desired)
            .count()
    }
}

/// Fraction of recorded steps whose response matched region membership;
/// `None` when no steps were recorded.
pub fn accuracy(trials: &[TrialResult]) -> Option<f64> {
    let steps: usize = trials.iter().map(|t| t.trace.len()).sum();
    if steps == 0 {
        return None;
    }
    let correct: usize = trials.iter().map(TrialResult::correct_responses).sum();
    Some(correct as f64 / steps as f64)
}

pub fn write_trace_jsonl<W: Write>(mut out: W, trace: &[StepRecord]) -> Result<()> {
    for step in trace {
        serde_json::to_writer(&mut out, step)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

enum Tracker {
    Known,
    Kalman(FadingBelief),
    Mmse {
        prior: FadingPrior,
        belief: FadingBelief,
        history: Vec<Vec<(Complex64, Complex64)>>,
    },
}

impl Tracker {
    fn new(estimator: FadingEstimator, m: usize) -> Self {
        match estimator {
            FadingEstimator::Known => Tracker::Known,
            FadingEstimator::Kalman { prior } => {
                Tracker::Kalman(FadingBelief::from_prior(&prior, m))
            }
            FadingEstimator::Mmse { prior } => Tracker::Mmse {
                prior,
                belief: FadingBelief::from_prior(&prior, m),
                history: vec![Vec::new(); m],
            },
        }
    }

    fn belief(&self) -> Option<&FadingBelief> {
        match self {
            Tracker::Known => None,
            Tracker::Kalman(b) | Tracker::Mmse { belief: b, .. } => Some(b),
        }
    }

    /// Absorbs one normalized observation `(c_j, y)` for every hypothesis `j`.
    fn observe(&mut self, regressors: &[Complex64], y: Complex64) {
        match self {
            Tracker::Known => {}
            Tracker::Kalman(belief) => {
                for (j, &c) in regressors.iter().enumerate() {
                    belief.kalman_update(j, c, y);
                }
            }
            Tracker::Mmse {
                prior,
                belief,
                history,
            } => {
                for (j, &c) in regressors.iter().enumerate() {
                    history[j].push((c, y));
                    let (mu, sigma) = batch_mmse(&history[j], prior);
                    belief.mu[j] = mu;
                    belief.sigma[j] = sigma;
                }
            }
        }
    }
}

/// Runs one adaptive alignment trial against a target at `theta_true`.
pub fn run_alignment<R: Rng + ?Sized>(
    cfg: &Alignment<'_>,
    theta_true: f64,
    rng: &mut R,
) -> Result<TrialResult> {
    cfg.validate()?;
    let grid = cfg.grid;
    let m = grid.bins();
    let true_bin = grid.bin_of(theta_true)?;
    let mut rho = Posterior::uniform(m);
    let mut tracker = Tracker::new(cfg.fading, m);
    let mut trace = Vec::with_capacity(cfg.budget);

    let mut t = 1;
    let bin_hat = loop {
        let query = cfg.strategy.select(&rho);
        let desired = query.contains(true_bin);
        let (measurement, response, updated) = match cfg.response {
            ResponseModel::Abstract(ch) => {
                let bit =
                    ch.sample(f64::from(u8::from(desired)), query.size_fraction(m), rng)? > 0.5;
                (
                    Measurement::Bit(bit),
                    bit,
                    one_bit_update(&rho, &query, bit, cfg.flip)?,
                )
            }
            ResponseModel::Physical(params) => {
                let w = cfg.mapper.map(&query, grid)?;
                let y = receive(&w, theta_true, grid, params, rng)?;
                match cfg.rule {
                    MeasurementRule::OneBit => {
                        let iota = threshold_select(&query, grid, &w) * params.gain().norm_sqr();
                        let bit = measure_1bit(y, iota);
                        (
                            Measurement::Bit(bit),
                            bit,
                            one_bit_update(&rho, &query, bit, cfg.flip)?,
                        )
                    }
                    MeasurementRule::Full => {
                        let y = measure_full(y);
                        let responses: Vec<Complex64> =
                            grid.bin_manifold().iter().map(|a| w.response(a)).collect();
                        let logs = log_full_factors(y, &responses, params, tracker.belief());
                        let response = favours_region(&logs, &query);
                        let updated = rho.update_log(&logs);
                        let regressors: Vec<Complex64> = responses
                            .iter()
                            .map(|&c| normalized(c, y, params).0)
                            .collect();
                        tracker.observe(
                            &regressors,
                            normalized(Complex64::new(0.0, 0.0), y, params).1,
                        );
                        (Measurement::Full(y), response, updated)
                    }
                }
            }
        };
        rho = match updated {
            Ok(r) => r,
            Err(Error::DegenerateUpdate) => Posterior::uniform(m),
            Err(e) => return Err(e),
        };
        trace.push(StepRecord {
            t,
            query_size: query.len(),
            query,
            measurement,
            response,
            desired,
            posterior_max: rho.max(),
            uniform_tv: rho.tv_from_uniform(),
        });
        if let StopDecision::Stop(i) = stop_or_continue(&rho, cfg.epsilon, t, cfg.budget) {
            break i;
        }
        t += 1;
    };

    let theta_hat = decode(bin_hat, grid);
    Ok(TrialResult {
        theta_true,
        theta_hat,
        bin_hat,
        tau: t,
        loss: quadratic_loss(theta_hat, theta_true),
        trace,
    })
}

fn one_bit_update(
    rho: &Posterior,
    query: &Query,
    bit: bool,
    flip: &FlipModel,
) -> Result<Result<Posterior>> {
    let p = flip.p(query.len());
    let deltas = (0..rho.len())
        .map(|i| one_bit_delta(bit, query.contains(i), p))
        .collect::<Result<Vec<_>>>()?;
    Ok(rho.update(&deltas))
}

/// Full-rule answer: whether the best in-region factor beats every out-of-region one.
fn favours_region(log_factors: &[f64], query: &Query) -> bool {
    let (mut best_in, mut best_out) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (j, &l) in log_factors.iter().enumerate() {
        if query.contains(j) {
            best_in = best_in.max(l);
        } else {
            best_out = best_out.max(l);
        }
    }
    best_in > best_out
}
