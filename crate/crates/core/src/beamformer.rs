//! Query → beamformer mappings and the noise-free separation diagnostics.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;

use crate::channel::ChannelParams;
use crate::error::{Error, Result};
use crate::geometry::{norm, AngleGrid, SteeringVector};
use crate::mlp::MlpModel;
use crate::questioner::Query;

const UNIT_NORM_TOL: f64 = 1e-9;
const CANCELLATION_TOL: f64 = 1e-9;

/// Receive combining vector with unit Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Beamformer(Vec<Complex64>);

impl Beamformer {
    /// Projects `v` onto the unit sphere. `None` when `v` is zero.
    pub fn normalize(mut v: Vec<Complex64>) -> Option<Self> {
        let n = norm(&v);
        if !(n.is_finite() && n > 0.0) {
            return None;
        }
        v.iter_mut().for_each(|z| *z /= n);
        Some(Self(v))
    }

    /// Wraps a vector that must already have unit norm.
    pub fn from_unit(v: Vec<Complex64>) -> Result<Self> {
        let n = norm(&v);
        if (n - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::Contract(format!(
                "beamformer norm is {n}, expected 1"
            )));
        }
        Ok(Self(v))
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    /// `wᴴ·a`.
    pub fn response(&self, a: &SteeringVector) -> Complex64 {
        self.0
            .iter()
            .zip(a.as_slice())
            .map(|(w, a)| w.conj() * a)
            .sum()
    }

    /// Noise-free received power `|wᴴ·a|²`.
    pub fn power(&self, a: &SteeringVector) -> f64 {
        self.response(a).norm_sqr()
    }
}

impl From<SteeringVector> for Beamformer {
    fn from(a: SteeringVector) -> Self {
        Self(a.into_inner())
    }
}

/// Converts a query into a beamformer.
pub trait QueryMapper: Send + Sync {
    fn name(&self) -> &str;

    fn map(&self, query: &Query, grid: &AngleGrid) -> Result<Beamformer>;
}

impl<T: QueryMapper + ?Sized> QueryMapper for Arc<T> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn map(&self, query: &Query, grid: &AngleGrid) -> Result<Beamformer> {
        (**self).map(query, grid)
    }
}

/// Linear weighted sum with unit weights over the secondary midpoints.
#[derive(Debug, Clone, Copy, Default)]
pub struct Lws;

impl QueryMapper for Lws {
    fn name(&self) -> &str {
        "lws"
    }

    fn map(&self, query: &Query, grid: &AngleGrid) -> Result<Beamformer> {
        lws_map(query, grid)
    }
}

pub fn lws_map(query: &Query, grid: &AngleGrid) -> Result<Beamformer> {
    grid.check_query(query)?;
    let mut sum = vec![Complex64::new(0.0, 0.0); grid.antennas()];
    for &bin in query.bins() {
        for a in grid.secondary_steering(bin) {
            sum.iter_mut().zip(a.as_slice()).for_each(|(s, x)| *s += x);
        }
    }
    if norm(&sum) < CANCELLATION_TOL {
        return Err(Error::Cancellation(query.bins().to_vec()));
    }
    Ok(Beamformer::normalize(sum).expect("non-zero sum"))
}

/// Network input for a query: real parts of the `K·k` steering vectors
/// (ordered as [`AngleGrid::midpoints`]) followed by their imaginary parts.
pub fn stack_input(query: &Query, grid: &AngleGrid) -> Result<Vec<f64>> {
    grid.check_query(query)?;
    let vectors: Vec<&SteeringVector> = query
        .bins()
        .iter()
        .flat_map(|&b| grid.secondary_steering(b))
        .collect();
    let re = vectors
        .iter()
        .flat_map(|a| a.as_slice().iter().map(|z| z.re));
    let im = vectors
        .iter()
        .flat_map(|a| a.as_slice().iter().map(|z| z.im));
    Ok(re.chain(im).collect())
}

/// One trained network per query size.
#[derive(Debug, Clone, Default)]
pub struct MlpMapper {
    models: BTreeMap<usize, MlpModel>,
}

impl MlpMapper {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, model: MlpModel) {
        self.models.insert(model.meta().query_size, model);
    }

    pub fn model(&self, query_size: usize) -> Option<&MlpModel> {
        self.models.get(&query_size)
    }

    pub fn query_sizes(&self) -> impl Iterator<Item = usize> + '_ {
        self.models.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

impl FromIterator<MlpModel> for MlpMapper {
    fn from_iter<I: IntoIterator<Item = MlpModel>>(iter: I) -> Self {
        let mut m = Self::new();
        iter.into_iter().for_each(|model| m.insert(model));
        m
    }
}

impl QueryMapper for MlpMapper {
    fn name(&self) -> &str {
        "mlp"
    }

    fn map(&self, query: &Query, grid: &AngleGrid) -> Result<Beamformer> {
        mlp_map(
            query,
            grid,
            self.model(query.len())
                .ok_or(Error::ModelNotFound(query.len()))?,
        )
    }
}

pub fn mlp_map(query: &Query, grid: &AngleGrid, model: &MlpModel) -> Result<Beamformer> {
    let meta = model.meta();
    if meta.query_size != query.len() {
        return Err(Error::ModelNotFound(query.len()));
    }
    if meta.antennas != grid.antennas() || meta.secondary != grid.secondary() {
        return Err(Error::config(format!(
            "model trained for N_R={}, k={} but grid has N_R={}, k={}",
            meta.antennas,
            meta.secondary,
            grid.antennas(),
            grid.secondary()
        )));
    }
    model.forward(&stack_input(query, grid)?)
}

/// Network for small queries, linear weighted sum above `max_query_size`.
#[derive(Debug, Clone)]
pub struct Hybrid {
    pub mlp: MlpMapper,
    pub max_query_size: usize,
}

impl QueryMapper for Hybrid {
    fn name(&self) -> &str {
        "hybrid"
    }

    fn map(&self, query: &Query, grid: &AngleGrid) -> Result<Beamformer> {
        if query.len() <= self.max_query_size {
            self.mlp.map(query, grid)
        } else {
            lws_map(query, grid)
        }
    }
}

/// Noise-free power at every secondary midpoint (bin-major, length `M·k`).
pub fn probe_powers(grid: &AngleGrid, w: &Beamformer) -> Vec<f64> {
    grid.secondary_manifold()
        .iter()
        .map(|a| w.power(a))
        .collect()
}

/// Idealized pattern: power `1/K` on every in-region probe, zero elsewhere.
pub fn indicator_powers(query: &Query, grid: &AngleGrid) -> Vec<f64> {
    let level = 1.0 / query.len() as f64;
    (0..grid.bins())
        .flat_map(|b| {
            let v = if query.contains(b) { level } else { 0.0 };
            std::iter::repeat_n(v, grid.secondary())
        })
        .collect()
}

/// Minimum in-region noise-free probe power; the 1-bit power threshold.
pub fn threshold_select(query: &Query, grid: &AngleGrid, w: &Beamformer) -> f64 {
    query
        .bins()
        .iter()
        .flat_map(|&b| grid.secondary_steering(b))
        .map(|a| w.power(a))
        .fold(f64::INFINITY, f64::min)
}

/// `max out-of-region power − min in-region power` over probe powers laid out
/// as by [`probe_powers`]. Negative means perfect separation. `-∞` when the
/// query covers every bin.
pub fn power_gap(query: &Query, grid: &AngleGrid, powers: &[f64]) -> f64 {
    let k = grid.secondary();
    let (mut min_in, mut max_out) = (f64::INFINITY, f64::NEG_INFINITY);
    for (b, chunk) in powers.chunks(k).enumerate() {
        if query.contains(b) {
            min_in = chunk.iter().copied().fold(min_in, f64::min);
        } else {
            max_out = chunk.iter().copied().fold(max_out, f64::max);
        }
    }
    if max_out == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max_out - min_in
}

/// `min in-region power − mean out-of-region power`; `+∞` when the query
/// covers every bin.
pub fn mean_out_margin(query: &Query, grid: &AngleGrid, powers: &[f64]) -> f64 {
    let k = grid.secondary();
    let (mut min_in, mut sum_out, mut n_out) = (f64::INFINITY, 0.0, 0usize);
    for (b, chunk) in powers.chunks(k).enumerate() {
        if query.contains(b) {
            min_in = chunk.iter().copied().fold(min_in, f64::min);
        } else {
            sum_out += chunk.iter().sum::<f64>();
            n_out += chunk.len();
        }
    }
    if n_out == 0 {
        return f64::INFINITY;
    }
    min_in - sum_out / n_out as f64
}

pub fn gap_1bit(query: &Query, grid: &AngleGrid, w: &Beamformer) -> f64 {
    power_gap(query, grid, &probe_powers(grid, w))
}

/// Worst-case separation of the full-rule probability factors.
///
/// For each in-region bin taken as the true direction, the noise-free sample
/// `y = α√P·wᴴA(θ_s)` yields factors `ν_j = exp(−|y − α√P·wᴴA(θ_j)|²/σ²)` at
/// every bin midpoint; the result is the largest `max_out ν − min_in ν` over
/// those true bins. `-∞` when the query covers every bin.
pub fn gap_full(query: &Query, grid: &AngleGrid, w: &Beamformer, params: &ChannelParams) -> f64 {
    if query.len() == grid.bins() {
        return f64::NEG_INFINITY;
    }
    let gain = params.alpha * params.power.sqrt();
    let var = params.effective_noise_var();
    let expected: Vec<Complex64> = grid
        .bin_manifold()
        .iter()
        .map(|a| gain * w.response(a))
        .collect();
    query
        .bins()
        .iter()
        .map(|&s| {
            let y = expected[s];
            let (mut min_in, mut max_out) = (f64::INFINITY, f64::NEG_INFINITY);
            for (j, mean) in expected.iter().enumerate() {
                let nu = (-(y - mean).norm_sqr() / var).exp();
                if query.contains(j) {
                    min_in = min_in.min(nu);
                } else {
                    max_out = max_out.max(nu);
                }
            }
            max_out - min_in
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `(angle, |wᴴA(θ)|²)` from `theta_min` to `theta_max` in `step_deg` steps.
pub fn power_spectrum(grid: &AngleGrid, w: &Beamformer, step_deg: f64) -> Vec<(f64, f64)> {
    assert!(step_deg > 0.0);
    let steps = (grid.span() / step_deg).floor() as usize;
    (0..=steps)
        .map(|i| grid.theta_min() + i as f64 * step_deg)
        .map(|theta| (theta, w.power(&grid.steering_vector(theta))))
        .collect()
}

pub fn write_spectrum_csv<W: Write>(out: W, spectrum: &[(f64, f64)]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["angle_deg", "power"])?;
    for (theta, p) in spectrum {
        wtr.write_record([
            crate::experiment::fmt_sig(*theta),
            crate::experiment::fmt_sig(*p),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
