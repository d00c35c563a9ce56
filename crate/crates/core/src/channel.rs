//! Received-signal model, measurement rules and abstract query-dependent channels.

use num_complex::Complex64;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::beamformer::{threshold_select, Beamformer, QueryMapper};
use crate::error::{Error, Result};
use crate::geometry::{AngleGrid, SteeringVector};
use crate::questioner::Query;

/// Variance substituted for σ² = 0 wherever the likelihood divides by it.
pub const NOISE_FLOOR: f64 = 1e-12;

/// Physical link parameters. The pilot symbol is fixed to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Fading coefficient α.
    pub alpha: Complex64,
    /// Transmit power P (linear).
    pub power: f64,
    /// Per-antenna noise variance σ².
    pub noise_var: f64,
}

impl ChannelParams {
    pub fn new(alpha: Complex64, power: f64, noise_var: f64) -> Result<Self> {
        if !(power > 0.0 && power.is_finite()) {
            return Err(Error::domain(format!(
                "transmit power must be positive, got {power}"
            )));
        }
        if !(noise_var >= 0.0) {
            return Err(Error::domain(format!(
                "noise variance must be ≥ 0, got {noise_var}"
            )));
        }
        Ok(Self {
            alpha,
            power,
            noise_var,
        })
    }

    /// α = P = σ² = 1.
    pub fn unit() -> Self {
        Self {
            alpha: Complex64::new(1.0, 0.0),
            power: 1.0,
            noise_var: 1.0,
        }
    }

    /// α = P = 1 and σ² = 10^(−snr/10).
    pub fn from_snr_db(snr_db: f64) -> Self {
        Self {
            noise_var: 10f64.powf(-snr_db / 10.0),
            ..Self::unit()
        }
    }

    pub fn noise_free() -> Self {
        Self {
            noise_var: 0.0,
            ..Self::unit()
        }
    }

    pub fn with_alpha(self, alpha: Complex64) -> Self {
        Self { alpha, ..self }
    }

    /// `10·log10(P/σ²)`; `+∞` without noise.
    pub fn snr_db(&self) -> f64 {
        10.0 * (self.power / self.noise_var).log10()
    }

    /// `α·√P`.
    pub fn gain(&self) -> Complex64 {
        self.alpha * self.power.sqrt()
    }

    pub fn effective_noise_var(&self) -> f64 {
        self.noise_var.max(NOISE_FLOOR)
    }
}

/// `y = α√P·wᴴA(θ) + wᴴn` with `n ~ CN(0, σ²I)`.
pub fn receive<R: Rng + ?Sized>(
    w: &Beamformer,
    theta_true: f64,
    grid: &AngleGrid,
    params: &ChannelParams,
    rng: &mut R,
) -> Result<Complex64> {
    if (w.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::Contract(format!("beamformer norm {} ≠ 1", w.norm())));
    }
    if w.len() != grid.antennas() {
        return Err(Error::Contract(format!(
            "beamformer length {} ≠ N_R={}",
            w.len(),
            grid.antennas()
        )));
    }
    Ok(receive_from(
        w,
        &grid.steering_vector(theta_true),
        params,
        rng,
    ))
}

pub(crate) fn receive_from<R: Rng + ?Sized>(
    w: &Beamformer,
    a: &SteeringVector,
    params: &ChannelParams,
    rng: &mut R,
) -> Complex64 {
    let signal = params.gain() * w.response(a);
    if params.noise_var == 0.0 {
        return signal;
    }
    let sd = (params.noise_var / 2.0).sqrt();
    let noise: Complex64 = w
        .as_slice()
        .iter()
        .map(|wm| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            wm.conj() * Complex64::new(sd * re, sd * im)
        })
        .sum();
    signal + noise
}

pub fn measure_full(y: Complex64) -> Complex64 {
    y
}

/// `𝟙(|y|² > ι)`.
pub fn measure_1bit(y: Complex64, threshold: f64) -> bool {
    y.norm_sqr() > threshold
}

/// Bounded Lipschitz size function `β(s) = clamp(intercept + slope·s, 0, cap)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeFunction {
    pub intercept: f64,
    pub slope: f64,
    pub cap: f64,
}

impl SizeFunction {
    pub fn constant(value: f64) -> Self {
        Self {
            intercept: value,
            slope: 0.0,
            cap: value.max(0.0),
        }
    }

    /// Placeholder affine β used for abstract-channel experiments: `0.05 + 0.2·s`, capped at 0.45.
    pub fn affine_default() -> Self {
        Self {
            intercept: 0.05,
            slope: 0.2,
            cap: 0.45,
        }
    }

    pub fn eval(&self, size: f64) -> f64 {
        (self.intercept + self.slope * size).clamp(0.0, self.cap)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ChannelKind {
    /// Crossover probability β(|A|).
    Bsc,
    /// Gaussian noise with standard deviation β(|A|)·σ.
    Awgn { sigma: f64 },
}

/// Oracle answers passed through a channel whose noise depends on the query size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryDependentChannel {
    #[serde(flatten)]
    pub kind: ChannelKind,
    pub beta: SizeFunction,
}

impl QueryDependentChannel {
    pub fn bsc(beta: SizeFunction) -> Result<Self> {
        if beta.cap >= 0.5 || beta.cap < 0.0 {
            return Err(Error::domain(format!(
                "BSC crossover must stay in [0, 0.5), cap is {}",
                beta.cap
            )));
        }
        Ok(Self {
            kind: ChannelKind::Bsc,
            beta,
        })
    }

    pub fn awgn(beta: SizeFunction, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) {
            return Err(Error::domain("AWGN σ must be ≥ 0"));
        }
        Ok(Self {
            kind: ChannelKind::Awgn { sigma },
            beta,
        })
    }

    /// Noise-free BSC: every answer is truthful.
    pub fn ideal() -> Self {
        Self {
            kind: ChannelKind::Bsc,
            beta: SizeFunction::constant(0.0),
        }
    }

    /// Passes one symbol through the channel. `query_size` is `|A| ∈ [0, 1]`;
    /// BSC inputs must be 0 or 1.
    pub fn sample<R: Rng + ?Sized>(&self, x: f64, query_size: f64, rng: &mut R) -> Result<f64> {
        if !(0.0..=1.0).contains(&query_size) {
            return Err(Error::domain(format!(
                "query size {query_size} outside [0, 1]"
            )));
        }
        let b = self.beta.eval(query_size);
        match self.kind {
            ChannelKind::Bsc => {
                if x != 0.0 && x != 1.0 {
                    return Err(Error::domain(format!("BSC input must be 0 or 1, got {x}")));
                }
                Ok(if b > 0.0 && rng.random_bool(b) {
                    1.0 - x
                } else {
                    x
                })
            }
            ChannelKind::Awgn { sigma } => {
                let sd = b * sigma;
                if sd == 0.0 {
                    return Ok(x);
                }
                let n = Normal::new(0.0, sd).map_err(|e| Error::domain(e.to_string()))?;
                Ok(x + n.sample(rng))
            }
        }
    }
}

/// Source of responses in an alignment trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum ResponseModel {
    /// Beamformed pilot through the array with additive noise.
    Physical(ChannelParams),
    /// Region-membership answer through a query-dependent channel.
    Abstract(QueryDependentChannel),
}

/// Empirical rate at which the 1-bit response disagrees with region membership.
///
/// Each trial draws a uniform random query of size `query_size`, places the
/// true direction inside or outside the region with equal probability
/// (always inside when the query covers every bin) uniformly within a random
/// bin, and compares the thresholded response with the membership indicator.
pub fn estimate_effective_flip_prob<R: Rng + ?Sized>(
    mapper: &dyn QueryMapper,
    grid: &AngleGrid,
    query_size: usize,
    response: &ResponseModel,
    trials: usize,
    rng: &mut R,
) -> Result<f64> {
    if trials == 0 {
        return Err(Error::domain("at least one trial is required"));
    }
    let m = grid.bins();
    if query_size == 0 || query_size > m {
        return Err(Error::domain(format!(
            "query size {query_size} outside [1, {m}]"
        )));
    }
    let mut flips = 0usize;
    for _ in 0..trials {
        let query = Query::new(sample(rng, m, query_size).into_vec())?;
        let inside = query_size == m || rng.random_bool(0.5);
        let candidates: Vec<usize> = (0..m).filter(|&b| query.contains(b) == inside).collect();
        let bin = candidates[rng.random_range(0..candidates.len())];
        let (lo, hi) = grid.bin_edges(bin);
        let theta = rng.random_range(lo..hi);
        let bit = match response {
            ResponseModel::Physical(params) => {
                let w = mapper.map(&query, grid)?;
                let iota = threshold_select(&query, grid, &w) * params.gain().norm_sqr();
                measure_1bit(receive(&w, theta, grid, params, rng)?, iota)
            }
            ResponseModel::Abstract(ch) => {
                let x = if inside { 1.0 } else { 0.0 };
                ch.sample(x, query.size_fraction(m), rng)? > 0.5
            }
        };
        if bit != inside {
            flips += 1;
        }
    }
    Ok(flips as f64 / trials as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beamformer::{lws_map, Lws};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn noise_free_receive_examples() {
        let g = AngleGrid::new(-90.0, 90.0, 2, 1, 2).unwrap();
        let p = ChannelParams::noise_free();
        let w: Beamformer = g.steering_vector(12.0).into();
        let y = receive(&w, 12.0, &g, &p, &mut rng(0)).unwrap();
        assert!((y - Complex64::new(1.0, 0.0)).norm() < 1e-12);

        let w: Beamformer = g.steering_vector(90.0).into();
        let y = receive(&w, 0.0, &g, &p, &mut rng(0)).unwrap();
        assert!(y.norm() < 1e-12);

        let p = ChannelParams::new(Complex64::new(0.0, 2.0), 4.0, 0.0).unwrap();
        let w: Beamformer = g.steering_vector(-20.0).into();
        let y = receive(&w, -20.0, &g, &p, &mut rng(0)).unwrap();
        assert!((y - Complex64::new(0.0, 4.0)).norm() < 1e-12);
    }

    #[test]
    fn non_unit_beamformer_is_rejected() {
        let g = AngleGrid::new(-90.0, 90.0, 2, 1, 2).unwrap();
        let bad = Beamformer::normalize(vec![Complex64::new(1.0, 0.0); 3]).unwrap();
        assert!(matches!(
            receive(&bad, 0.0, &g, &ChannelParams::unit(), &mut rng(0)),
            Err(Error::Contract(_))
        ));
        assert!(Beamformer::from_unit(vec![Complex64::new(2.0, 0.0)]).is_err());
    }

    #[test]
    fn noise_components_have_half_variance() {
        let g = AngleGrid::new(-60.0, 60.0, 8, 2, 8).unwrap();
        let w = lws_map(&Query::new(vec![1, 4, 5]).unwrap(), &g).unwrap();
        let params = ChannelParams::new(Complex64::new(0.0, 0.0), 1.0, 2.0).unwrap();
        let mut r = rng(7);
        let n = 100_000;
        let (mut sr, mut si) = (0.0, 0.0);
        for _ in 0..n {
            let y = receive(&w, 0.0, &g, &params, &mut r).unwrap();
            sr += y.re * y.re;
            si += y.im * y.im;
        }
        let (vr, vi) = (sr / n as f64, si / n as f64);
        assert!((vr - 1.0).abs() < 0.05, "{vr}");
        assert!((vi - 1.0).abs() < 0.05, "{vi}");
    }

    #[test]
    fn measurement_rules() {
        for y in [
            Complex64::new(0.0, 0.0),
            Complex64::new(1.0, 1.0),
            Complex64::new(-3.0, 0.0),
        ] {
            assert_eq!(measure_full(y), y);
        }
        assert!(measure_1bit(Complex64::new(2f64.sqrt(), 0.0), 1.0));
        assert!(!measure_1bit(Complex64::new(0.5f64.sqrt(), 0.0), 1.0));
        assert!(!measure_1bit(Complex64::new(1.0, 0.0), 1.0));
    }

    #[test]
    fn query_dependent_channel_examples() {
        let bsc = QueryDependentChannel::bsc(SizeFunction::constant(0.0)).unwrap();
        let mut r = rng(1);
        assert!((0..1000).all(|_| bsc.sample(1.0, 0.3, &mut r).unwrap() == 1.0));

        let awgn = QueryDependentChannel::awgn(SizeFunction::constant(0.0), 1.0).unwrap();
        assert_eq!(awgn.sample(0.7, 0.5, &mut r).unwrap(), 0.7);

        let bsc = QueryDependentChannel::bsc(SizeFunction::constant(0.1)).unwrap();
        let n = 100_000;
        let flips = (0..n)
            .filter(|_| bsc.sample(0.0, 0.5, &mut r).unwrap() == 1.0)
            .count();
        let rate = flips as f64 / n as f64;
        assert!((rate - 0.1).abs() < 0.01, "{rate}");

        assert!(bsc.sample(0.0, 1.5, &mut r).is_err());
        assert!(bsc.sample(0.5, 0.5, &mut r).is_err());
        assert!(QueryDependentChannel::bsc(SizeFunction::constant(0.5)).is_err());
    }

    #[test]
    fn affine_size_function_is_clipped() {
        let b = SizeFunction::affine_default();
        assert!((b.eval(0.0) - 0.05).abs() < 1e-15);
        assert!((b.eval(1.0) - 0.25).abs() < 1e-15);
        let steep = SizeFunction { slope: 5.0, ..b };
        assert_eq!(steep.eval(1.0), 0.45);
    }

    #[test]
    fn awgn_scale_follows_beta() {
        let ch = QueryDependentChannel::awgn(
            SizeFunction {
                intercept: 0.0,
                slope: 2.0,
                cap: 10.0,
            },
            1.5,
        )
        .unwrap();
        let mut r = rng(3);
        let n = 50_000;
        let var = (0..n)
            .map(|_| ch.sample(0.0, 0.5, &mut r).unwrap().powi(2))
            .sum::<f64>()
            / n as f64;
        // sd = β(0.5)·σ = 1·1.5
        assert!((var - 2.25).abs() < 0.05, "{var}");
    }

    #[test]
    fn flip_probability_of_ideal_channel_is_zero() {
        let g = AngleGrid::new(-60.0, 60.0, 16, 2, 16).unwrap();
        let ideal = ResponseModel::Abstract(QueryDependentChannel::ideal());
        for k in [1, 5, 16] {
            let p =
                estimate_effective_flip_prob(&Lws, &g, k, &ideal, 500, &mut rng(k as u64)).unwrap();
            assert_eq!(p, 0.0);
        }
        assert!(estimate_effective_flip_prob(&Lws, &g, 3, &ideal, 0, &mut rng(0)).is_err());
        assert!(estimate_effective_flip_prob(&Lws, &g, 17, &ideal, 1, &mut rng(0)).is_err());
    }

    #[test]
    fn noise_free_lws_flips_at_every_small_query_size() {
        let g = AngleGrid::new(-60.0, 60.0, 64, 10, 64).unwrap();
        let phys = ResponseModel::Physical(ChannelParams::noise_free());
        for k in 1..=16 {
            let p =
                estimate_effective_flip_prob(&Lws, &g, k, &phys, 400, &mut rng(k as u64)).unwrap();
            assert!(p > 0.0, "K={k}");
        }
    }

    #[test]
    fn noise_dominated_flip_rate_is_a_coin() {
        let g = AngleGrid::new(-60.0, 60.0, 16, 4, 16).unwrap();
        let phys = ResponseModel::Physical(ChannelParams::from_snr_db(-120.0));
        let p = estimate_effective_flip_prob(&Lws, &g, 4, &phys, 4000, &mut rng(9)).unwrap();
        assert!((p - 0.5).abs() < 0.05, "{p}");
    }

    proptest! {
        #[test]
        fn full_then_1bit_equals_1bit(re in -5.0f64..5.0, im in -5.0f64..5.0, iota in 0.0f64..10.0) {
            let y = Complex64::new(re, im);
            prop_assert_eq!(measure_1bit(measure_full(y), iota), measure_1bit(y, iota));
        }

        #[test]
        fn noise_free_receive_is_exact(theta in -60.0f64..60.0, seed in any::<u64>()) {
            let g = AngleGrid::new(-60.0, 60.0, 8, 2, 8).unwrap();
            let w = lws_map(&Query::new(vec![(seed % 8) as usize]).unwrap(), &g).unwrap();
            let p = ChannelParams::new(Complex64::new(0.3, -1.2), 2.5, 0.0).unwrap();
            let y = receive(&w, theta, &g, &p, &mut rng(seed)).unwrap();
            let expect = p.gain() * w.response(&g.steering_vector(theta));
            prop_assert_eq!(y, expect);
        }
    }
}
