//! Angular search grid and uniform-linear-array steering vectors.
//!
//! Angles cross the public API in degrees. The search interval
//! `[theta_min, theta_max]` is split into `M` equal sub-intervals ("bins"),
//! each of which is refined into `k` secondary sub-intervals whose midpoints
//! are the probe directions used for beam synthesis and thresholds.
//!
//! Bin indices are 0-based throughout the crate: bin `i` covers unit
//! coordinates `(i/M, (i+1)/M]`.

use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::questioner::Query;

/// Half-wavelength element spacing.
pub const DEFAULT_SPACING: f64 = 0.5;

/// Array response to a plane wave, normalized to unit Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector(Vec<Complex64>);

impl SteeringVector {
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

    pub fn into_inner(self) -> Vec<Complex64> {
        self.0
    }
}

pub(crate) fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(Complex64::norm_sqr).sum::<f64>().sqrt()
}

/// Plain description of a grid, as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub theta_min: f64,
    pub theta_max: f64,
    /// Number of sub-intervals `M`.
    pub bins: usize,
    /// Secondary sub-intervals per bin, `k`.
    pub secondary: usize,
    /// Antenna count `N_R`.
    pub antennas: usize,
    /// Element spacing over wavelength, `d/λ`.
    pub spacing: f64,
}

impl GridSpec {
    pub fn build(&self) -> Result<AngleGrid> {
        AngleGrid::new(
            self.theta_min,
            self.theta_max,
            self.bins,
            self.secondary,
            self.antennas,
        )?
        .with_spacing(self.spacing)
    }
}

impl Default for GridSpec {
    /// M = N_R = 64, k = 10 over [-60°, 60°].
    fn default() -> Self {
        Self {
            theta_min: -60.0,
            theta_max: 60.0,
            bins: 64,
            secondary: 10,
            antennas: 64,
            spacing: DEFAULT_SPACING,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AngleGrid {
    theta_min: f64,
    theta_max: f64,
    bins: usize,
    secondary: usize,
    spacing: f64,
    antennas: usize,
    bin_manifold: OnceLock<Vec<SteeringVector>>,
    secondary_manifold: OnceLock<Vec<SteeringVector>>,
}

impl AngleGrid {
    pub fn new(
        theta_min: f64,
        theta_max: f64,
        bins: usize,
        secondary: usize,
        antennas: usize,
    ) -> Result<Self> {
        if !(theta_min.is_finite() && theta_max.is_finite()) || theta_min >= theta_max {
            return Err(Error::domain(format!(
                "angle range [{theta_min}, {theta_max}] must be finite with min < max"
            )));
        }
        if theta_min < -180.0 || theta_max > 180.0 {
            return Err(Error::domain("angle range must lie within [-180°, 180°]"));
        }
        if bins == 0 || secondary == 0 || antennas == 0 {
            return Err(Error::domain("M, k and N_R must all be at least 1"));
        }
        if bins > antennas {
            return Err(Error::domain(format!(
                "resolution M={bins} exceeds the antenna count N_R={antennas}"
            )));
        }
        Ok(Self {
            theta_min,
            theta_max,
            bins,
            secondary,
            spacing: DEFAULT_SPACING,
            antennas,
            bin_manifold: OnceLock::new(),
            secondary_manifold: OnceLock::new(),
        })
    }

    pub fn with_spacing(mut self, spacing: f64) -> Result<Self> {
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::domain(format!(
                "d/λ must be positive, got {spacing}"
            )));
        }
        self.spacing = spacing;
        self.bin_manifold = OnceLock::new();
        self.secondary_manifold = OnceLock::new();
        Ok(self)
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            theta_min: self.theta_min,
            theta_max: self.theta_max,
            bins: self.bins,
            secondary: self.secondary,
            antennas: self.antennas,
            spacing: self.spacing,
        }
    }

    pub fn theta_min(&self) -> f64 {
        self.theta_min
    }

    pub fn theta_max(&self) -> f64 {
        self.theta_max
    }

    /// Number of sub-intervals `M`.
    pub fn bins(&self) -> usize {
        self.bins
    }

    /// Secondary sub-intervals per bin, `k`.
    pub fn secondary(&self) -> usize {
        self.secondary
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn span(&self) -> f64 {
        self.theta_max - self.theta_min
    }

    pub fn bin_width(&self) -> f64 {
        self.span() / self.bins as f64
    }

    pub fn secondary_width(&self) -> f64 {
        self.bin_width() / self.secondary as f64
    }

    pub fn to_unit(&self, theta: f64) -> Result<f64> {
        if !(self.theta_min..=self.theta_max).contains(&theta) {
            return Err(Error::domain(format!(
                "angle {theta}° outside [{}, {}]",
                self.theta_min, self.theta_max
            )));
        }
        Ok((theta - self.theta_min) / self.span())
    }

    pub fn from_unit(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::domain(format!("unit coordinate {u} outside [0, 1]")));
        }
        Ok(self.theta_min + u * self.span())
    }

    /// Bin containing `theta`.
    pub fn bin_of(&self, theta: f64) -> Result<usize> {
        Ok(quantize(self.to_unit(theta)?, self.bins))
    }

    pub fn bin_midpoint(&self, bin: usize) -> f64 {
        debug_assert!(bin < self.bins);
        self.theta_min + (bin as f64 + 0.5) * self.bin_width()
    }

    /// Lower and upper angle of a bin.
    pub fn bin_edges(&self, bin: usize) -> (f64, f64) {
        let w = self.bin_width();
        let lo = self.theta_min + bin as f64 * w;
        (lo, lo + w)
    }

    pub fn bin_midpoints(&self) -> Vec<f64> {
        (0..self.bins).map(|i| self.bin_midpoint(i)).collect()
    }

    /// Midpoint of secondary sub-interval `j` of bin `bin`.
    pub fn secondary_midpoint(&self, bin: usize, j: usize) -> f64 {
        debug_assert!(bin < self.bins && j < self.secondary);
        self.theta_min + bin as f64 * self.bin_width() + (j as f64 + 0.5) * self.secondary_width()
    }

    /// Secondary midpoints of every member bin, ordered by (bin, secondary index).
    pub fn midpoints(&self, query: &Query) -> Result<Vec<f64>> {
        self.check_query(query)?;
        Ok(query
            .bins()
            .iter()
            .flat_map(|&b| (0..self.secondary).map(move |j| (b, j)))
            .map(|(b, j)| self.secondary_midpoint(b, j))
            .collect())
    }

    pub(crate) fn check_query(&self, query: &Query) -> Result<()> {
        match query.bins().last() {
            Some(&last) if last < self.bins => Ok(()),
            Some(&last) => Err(Error::domain(format!(
                "query references bin {last} but the grid has {} bins",
                self.bins
            ))),
            None => Err(Error::domain("empty query")),
        }
    }

    pub fn steering_vector(&self, theta: f64) -> SteeringVector {
        steering_vector(theta, self.spacing, self.antennas)
    }

    /// Steering vectors at the `M` bin midpoints.
    pub fn bin_manifold(&self) -> &[SteeringVector] {
        self.bin_manifold.get_or_init(|| {
            (0..self.bins)
                .map(|i| self.steering_vector(self.bin_midpoint(i)))
                .collect()
        })
    }

    /// Steering vectors at all `M·k` secondary midpoints, bin-major.
    pub fn secondary_manifold(&self) -> &[SteeringVector] {
        self.secondary_manifold.get_or_init(|| {
            (0..self.bins)
                .flat_map(|b| (0..self.secondary).map(move |j| (b, j)))
                .map(|(b, j)| self.steering_vector(self.secondary_midpoint(b, j)))
                .collect()
        })
    }

    /// The `k` secondary-midpoint steering vectors of one bin.
    pub fn secondary_steering(&self, bin: usize) -> &[SteeringVector] {
        let k = self.secondary;
        &self.secondary_manifold()[bin * k..(bin + 1) * k]
    }
}

/// `A(θ)_m = √(1/N_R)·exp(j·2π·(d/λ)·m·sin θ)` for `m = 0..N_R`.
pub fn steering_vector(theta_deg: f64, spacing: f64, antennas: usize) -> SteeringVector {
    debug_assert!((-180.0..=180.0).contains(&theta_deg));
    let scale = (1.0 / antennas as f64).sqrt();
    let phase = 2.0 * PI * spacing * theta_deg.to_radians().sin();
    SteeringVector(
        (0..antennas)
            .map(|m| Complex64::from_polar(scale, phase * m as f64))
            .collect(),
    )
}

/// `⌈u·M⌉` as a 0-based bin; `u = 0` belongs to the first bin.
pub fn quantize(u: f64, bins: usize) -> usize {
    if u <= 0.0 {
        return 0;
    }
    let idx = (u * bins as f64).ceil() as usize;
    idx.clamp(1, bins) - 1
}
