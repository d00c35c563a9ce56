use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Query;
use crate::beamformer::{Beamformer, QueryMapper};
use crate::channel::{estimate_effective_flip_prob, ChannelParams, ResponseModel};
use crate::error::{Error, Result};
use crate::fading::{log_nu_unknown, FadingBelief};
use crate::geometry::AngleGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MeasurementRule {
    #[serde(rename = "1bit", alias = "one-bit")]
    OneBit,
    #[serde(rename = "full")]
    Full,
}

impl MeasurementRule {
    pub fn as_str(&self) -> &'static str {
        match self {
            MeasurementRule::OneBit => "1bit",
            MeasurementRule::Full => "full",
        }
    }
}

impl fmt::Display for MeasurementRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MeasurementRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1bit" | "one-bit" => Ok(MeasurementRule::OneBit),
            "full" => Ok(MeasurementRule::Full),
            other => Err(Error::config(format!("unknown measurement rule {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measurement {
    Bit(bool),
    Full(Complex64),
}

/// Crossover probability assumed by the 1-bit likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipModel {
    Constant(f64),
    /// Entry `K − 1` holds the probability for queries of size `K`.
    PerQuerySize(Vec<f64>),
}

impl Default for FlipModel {
    fn default() -> Self {
        FlipModel::Constant(0.1)
    }
}

impl FlipModel {
    pub fn p(&self, query_size: usize) -> f64 {
        match self {
            FlipModel::Constant(p) => *p,
            FlipModel::PerQuerySize(v) => v[(query_size.max(1) - 1).min(v.len() - 1)],
        }
    }
}

/// Calibrated probabilities are kept inside `[CALIBRATION_MIN, CALIBRATION_MAX]`.
pub const CALIBRATION_MIN: f64 = 1e-3;
pub const CALIBRATION_MAX: f64 = 0.499;

/// Measures the effective crossover probability for every query size.
pub fn calibrate_flip<R: Rng + ?Sized>(
    mapper: &dyn QueryMapper,
    grid: &AngleGrid,
    response: &ResponseModel,
    trials: usize,
    rng: &mut R,
) -> Result<FlipModel> {
    (1..=grid.bins())
        .map(|k| {
            estimate_effective_flip_prob(mapper, grid, k, response, trials, rng)
                .map(|p| p.clamp(CALIBRATION_MIN, CALIBRATION_MAX))
        })
        .collect::<Result<Vec<_>>>()
        .map(FlipModel::PerQuerySize)
}

/// Knowledge about the fading coefficient when evaluating a full-rule factor.
#[derive(Debug, Clone, Copy)]
pub enum FadingState<'a> {
    Known(&'a ChannelParams),
    /// Gaussian belief `CN(mu, sigma)` over α for the hypothesis being scored,
    /// in noise-normalized units.
    Unknown {
        mu: Complex64,
        sigma: f64,
        params: &'a ChannelParams,
    },
}

impl FadingState<'_> {
    fn params(&self) -> &ChannelParams {
        match self {
            FadingState::Known(p) | FadingState::Unknown { params: p, .. } => p,
        }
    }
}

/// `1 − p` when the bit agrees with membership, `p` otherwise.
pub fn one_bit_delta(bit: bool, in_region: bool, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 0.5) {
        return Err(Error::domain(format!(
            "flip probability {p} outside (0, 0.5)"
        )));
    }
    Ok(if bit == in_region { 1.0 - p } else { p })
}

/// Likelihood of `measurement` under the hypothesis that the target sits at `theta_i`.
pub fn likelihood_delta(
    measurement: &Measurement,
    theta_i: f64,
    w: &Beamformer,
    query: &Query,
    grid: &AngleGrid,
    p: f64,
    fading: FadingState<'_>,
) -> Result<f64> {
    match *measurement {
        Measurement::Bit(bit) => one_bit_delta(bit, query.contains(grid.bin_of(theta_i)?), p),
        Measurement::Full(y) => {
            let c = w.response(&grid.steering_vector(theta_i));
            Ok(log_full_factor(y, c, fading).exp())
        }
    }
}

/// Log of the full-rule factor for one hypothesis with noise-free response `c = wᴴA(θ_i)`.
pub(crate) fn log_full_factor(y: Complex64, c: Complex64, fading: FadingState<'_>) -> f64 {
    let params = fading.params();
    let var = params.effective_noise_var();
    match fading {
        FadingState::Known(_) => -(y - params.gain() * c).norm_sqr() / var,
        FadingState::Unknown { mu, sigma, .. } => {
            let (c, y) = normalized(c, y, params);
            log_nu_unknown(mu, sigma, c, y)
        }
    }
}

/// `(√P·c/σ, y/σ)`: the regressor and observation in unit-noise units.
pub(crate) fn normalized(
    c: Complex64,
    y: Complex64,
    params: &ChannelParams,
) -> (Complex64, Complex64) {
    let sd = params.effective_noise_var().sqrt();
    (c * (params.power.sqrt() / sd), y / sd)
}

/// Full-rule log factors for every hypothesis given per-bin responses `c_j`.
pub(crate) fn log_full_factors(
    y: Complex64,
    responses: &[Complex64],
    params: &ChannelParams,
    belief: Option<&FadingBelief>,
) -> Vec<f64> {
    responses
        .iter()
        .enumerate()
        .map(|(j, &c)| {
            let state = match belief {
                None => FadingState::Known(params),
                Some(b) => FadingState::Unknown {
                    mu: b.mu[j],
                    sigma: b.sigma[j],
                    params,
                },
            };
            log_full_factor(y, c, state)
        })
        .collect()
}
