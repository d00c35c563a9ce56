//! Benchmark alignment schemes: exhaustive sweep, two-stage sweep and the
//! diagonally loaded hiePM beam.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::beamformer::{lws_map, Beamformer, QueryMapper};
use crate::channel::{receive, ChannelParams};
use crate::error::{Error, Result};
use crate::geometry::AngleGrid;
use crate::questioner::{quadratic_loss, run_alignment, Alignment, Query, TrialResult};

fn sweep_result(theta_true: f64, theta_hat: f64, bin_hat: usize, tau: usize) -> TrialResult {
    TrialResult {
        theta_true,
        theta_hat,
        bin_hat,
        tau,
        loss: quadratic_loss(theta_hat, theta_true),
        trace: Vec::new(),
    }
}

/// Index of the largest received power, lowest index on ties.
fn strongest<R: Rng + ?Sized>(
    beams: impl Iterator<Item = Beamformer>,
    theta_true: f64,
    grid: &AngleGrid,
    params: &ChannelParams,
    rng: &mut R,
) -> Result<usize> {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, w) in beams.enumerate() {
        let p = receive(&w, theta_true, grid, params, rng)?.norm_sqr();
        if p > best.1 {
            best = (i, p);
        }
    }
    Ok(best.0)
}

/// Probes every bin midpoint of `grid` with its matched beam; one pilot per bin.
pub fn naive_sweep<R: Rng + ?Sized>(
    theta_true: f64,
    grid: &AngleGrid,
    params: &ChannelParams,
    rng: &mut R,
) -> Result<TrialResult> {
    let beams = grid.bin_manifold().iter().cloned().map(Beamformer::from);
    let bin = strongest(beams, theta_true, grid, params, rng)?;
    Ok(sweep_result(
        theta_true,
        grid.bin_midpoint(bin),
        bin,
        grid.bins(),
    ))
}

/// Default stage split `(⌊√n⌋, n − ⌊√n⌋)`.
pub fn default_split(budget: usize) -> (usize, usize) {
    let n1 = (budget as f64).sqrt().floor() as usize;
    (n1, budget - n1)
}

/// Two-stage sweep over the range of `grid`: `n1` wide beams, then `n2`
/// matched beams inside the strongest slice.
///
/// Wide beams are linear weighted sums over `k·⌈M/n1⌉` secondary midpoints per
/// slice, with `M`, `k`, `N_R` taken from `grid`.
pub fn hierarchical_sweep<R: Rng + ?Sized>(
    theta_true: f64,
    grid: &AngleGrid,
    split: (usize, usize),
    params: &ChannelParams,
    rng: &mut R,
) -> Result<TrialResult> {
    let (n1, n2) = split;
    if n1 == 0 || n2 == 0 {
        return Err(Error::config("both sweep stages need at least one pilot"));
    }
    let stage1 = stage_one_grid(grid, n1)?;
    let beams = (0..n1)
        .map(|i| lws_map(&Query::new(vec![i]).expect("non-empty"), &stage1))
        .collect::<Result<Vec<_>>>()?;
    let slice = strongest(beams.into_iter(), theta_true, &stage1, params, rng)?;
    let mut r = refine_in_slice(theta_true, grid, n1, slice, n2, params, rng)?;
    r.tau += n1;
    Ok(r)
}

fn stage_one_grid(grid: &AngleGrid, n1: usize) -> Result<AngleGrid> {
    let secondary = grid.secondary() * grid.bins().div_ceil(n1);
    AngleGrid::new(
        grid.theta_min(),
        grid.theta_max(),
        n1,
        secondary,
        grid.antennas(),
    )?
    .with_spacing(grid.spacing())
}

/// Second sweep stage restricted to slice `slice` of `n1`; `tau` counts only
/// the `n2` pilots spent here.
pub fn refine_in_slice<R: Rng + ?Sized>(
    theta_true: f64,
    grid: &AngleGrid,
    n1: usize,
    slice: usize,
    n2: usize,
    params: &ChannelParams,
    rng: &mut R,
) -> Result<TrialResult> {
    if slice >= n1 {
        return Err(Error::domain(format!("slice {slice} outside [0, {n1})")));
    }
    let width = grid.span() / n1 as f64;
    let lo = grid.theta_min() + slice as f64 * width;
    let fine =
        AngleGrid::new(lo, lo + width, n2, 1, grid.antennas())?.with_spacing(grid.spacing())?;
    let beams = fine.bin_manifold().iter().cloned().map(Beamformer::from);
    let bin = strongest(beams, theta_true, &fine, params, rng)?;
    let theta_hat = fine.bin_midpoint(bin);
    let bin_hat = grid.bin_of(theta_hat)?;
    Ok(sweep_result(theta_true, theta_hat, bin_hat, n2))
}

/// Default diagonal loading: one tenth of the mean eigenvalue of `A·Aᴴ`, i.e. `0.1·M/N_R`.
pub fn default_loading(grid: &AngleGrid) -> f64 {
    0.1 * grid.bins() as f64 / grid.antennas() as f64
}

/// `normalize((A·Aᴴ + σ₀²I)⁻¹·A·g)` with `A` the bin-midpoint manifold and `g`
/// the region indicator.
pub fn hiepm_ideal_beam(region: &Query, grid: &AngleGrid, sigma0_sq: f64) -> Result<Beamformer> {
    if !(sigma0_sq > 0.0 && sigma0_sq.is_finite()) {
        return Err(Error::domain(format!(
            "diagonal loading must be positive, got {sigma0_sq}"
        )));
    }
    grid.check_query(region)?;
    let n = grid.antennas();
    let manifold = grid.bin_manifold();
    let a = DMatrix::from_fn(n, manifold.len(), |r, c| manifold[c].as_slice()[r]);
    let g = DVector::from_fn(manifold.len(), |i, _| {
        Complex64::new(f64::from(u8::from(region.contains(i))), 0.0)
    });
    let mut gram = &a * a.adjoint();
    for i in 0..n {
        gram[(i, i)] += sigma0_sq;
    }
    let rhs = &a * g;
    let x = gram
        .cholesky()
        .ok_or_else(|| Error::domain("loaded Gram matrix is not positive definite"))?
        .solve(&rhs);
    Beamformer::normalize(x.iter().copied().collect()).ok_or(Error::DegenerateOutput)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HiepmMapper {
    /// `None` selects [`default_loading`].
    pub sigma0_sq: Option<f64>,
}

impl HiepmMapper {
    pub fn loading(&self, grid: &AngleGrid) -> f64 {
        self.sigma0_sq.unwrap_or_else(|| default_loading(grid))
    }
}

impl QueryMapper for HiepmMapper {
    fn name(&self) -> &str {
        "hiepm"
    }

    fn map(&self, query: &Query, grid: &AngleGrid) -> Result<Beamformer> {
        hiepm_ideal_beam(query, grid, self.loading(grid))
    }
}

/// The alignment loop of `base` with the hiePM beam as mapper.
pub fn hiepm_strategy_trial<R: Rng + ?Sized>(
    theta_true: f64,
    base: &Alignment<'_>,
    mapper: &HiepmMapper,
    rng: &mut R,
) -> Result<TrialResult> {
    let cfg = Alignment { mapper, ..*base };
    run_alignment(&cfg, theta_true, rng)
}

/// Externally published loss curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCurve {
    pub name: String,
    pub points: Vec<ReferencePoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub snr_db: f64,
    pub mean_quadratic_loss: f64,
}

impl ReferenceCurve {
    /// Reads `snr_db,mean_quadratic_loss` rows; `#` lines are comments.
    pub fn from_csv<R: std::io::Read>(name: impl Into<String>, input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(input);
        let points = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<ReferencePoint>, _>>()?;
        Ok(Self {
            name: name.into(),
            points,
        })
    }

    /// Curve named after the file stem.
    pub fn load(path: &Path) -> Result<Self> {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::from_csv(name, std::fs::File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{QueryDependentChannel, ResponseModel};
    use crate::questioner::{FadingEstimator, FlipModel, MeasurementRule, SortPm};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(17)
    }

    /// Distance from `theta` to the nearest edge of its cell in a uniform partition.
    fn edge_distance(theta: f64, lo: f64, width: f64) -> f64 {
        let x = (theta - lo).rem_euclid(width);
        x.min(width - x)
    }

    #[test]
    fn naive_sweep_examples() {
        let grid = AngleGrid::new(-60.0, 60.0, 10, 1, 10).unwrap();
        let nf = ChannelParams::noise_free();
        for bin in 0..10 {
            let r = naive_sweep(grid.bin_midpoint(bin), &grid, &nf, &mut rng()).unwrap();
            assert_eq!((r.bin_hat, r.tau), (bin, 10));
            assert!(r.loss < 1e-20);
        }
        let half = grid.bin_width() / 2.0;
        assert_eq!(half, 6.0);
        let mut g = rng();
        let mut checked = 0;
        for _ in 0..300 {
            let theta = g.random_range(-60.0..60.0);
            let r = naive_sweep(theta, &grid, &nf, &mut g).unwrap();
            // Beam patterns are symmetric in sin θ, so the decision boundary
            // drifts below a degree off the bin edge.
            if edge_distance(theta, -60.0, grid.bin_width()) > 1.0 {
                assert_eq!(r.bin_hat, grid.bin_of(theta).unwrap(), "theta {theta}");
                assert!(r.loss <= half * half + 1e-9);
                checked += 1;
            }
        }
        assert!(checked > 200);
    }

    #[test]
    fn hierarchical_noise_free_resolution() {
        let grid = AngleGrid::new(-60.0, 60.0, 16, 4, 16).unwrap();
        let split = default_split(10);
        assert_eq!(split, (3, 7));
        assert_eq!(default_split(16), (4, 12));
        let bound = grid.span() / (2.0 * 3.0 * 7.0);
        let nf = ChannelParams::noise_free();
        let mut g = rng();
        let mut checked = 0;
        for _ in 0..300 {
            let theta = g.random_range(-60.0..60.0);
            let r = hierarchical_sweep(theta, &grid, split, &nf, &mut g).unwrap();
            assert_eq!(r.tau, 10);
            let fine = grid.span() / 21.0;
            if edge_distance(theta, -60.0, 40.0) > 2.0
                && edge_distance(theta, -60.0, fine) > 0.1 * fine
            {
                assert!(
                    r.loss <= bound * bound + 1e-9,
                    "theta {theta}: loss {}",
                    r.loss
                );
                checked += 1;
            }
        }
        assert!(checked > 150);
    }

    #[test]
    fn forced_wrong_slice_stays_in_that_slice() {
        let grid = AngleGrid::new(-60.0, 60.0, 16, 4, 16).unwrap();
        let nf = ChannelParams::noise_free();
        let theta = 50.0;
        let r = refine_in_slice(theta, &grid, 3, 0, 7, &nf, &mut rng()).unwrap();
        assert!((-60.0..-20.0).contains(&r.theta_hat));
        assert!(r.loss.sqrt() <= theta + 60.0);
        assert!(r.loss.sqrt() >= theta + 20.0);
        assert_eq!(r.tau, 7);
        assert!(refine_in_slice(theta, &grid, 3, 3, 7, &nf, &mut rng()).is_err());
    }

    #[test]
    fn hiepm_single_direction_is_matched() {
        let grid = AngleGrid::new(-60.0, 60.0, 1, 1, 8).unwrap();
        let w = hiepm_ideal_beam(&Query::new(vec![0]).unwrap(), &grid, 0.3).unwrap();
        let a = &grid.bin_manifold()[0];
        for (x, y) in w.as_slice().iter().zip(a.as_slice()) {
            assert!((x - y).norm() < 1e-12);
        }
        assert!(hiepm_ideal_beam(&Query::new(vec![0]).unwrap(), &grid, 0.0).is_err());
    }

    #[test]
    fn heavy_loading_approaches_lws() {
        let grid = AngleGrid::new(-60.0, 60.0, 16, 1, 16).unwrap();
        let q = Query::new(vec![2, 3, 4, 9]).unwrap();
        let w = hiepm_ideal_beam(&q, &grid, 1e6).unwrap();
        let l = lws_map(&q, &grid).unwrap();
        let dist: f64 = w
            .as_slice()
            .iter()
            .zip(l.as_slice())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(dist < 1e-3, "{dist}");
    }

    #[test]
    fn hiepm_trial_recovers_with_ideal_responses() {
        let grid = AngleGrid::new(-60.0, 60.0, 4, 1, 4).unwrap();
        let response = ResponseModel::Abstract(QueryDependentChannel::ideal());
        let flip = FlipModel::default();
        let base = Alignment {
            grid: &grid,
            mapper: &crate::beamformer::Lws,
            strategy: &SortPm::Closest,
            rule: MeasurementRule::OneBit,
            response: &response,
            flip: &flip,
            fading: FadingEstimator::Known,
            epsilon: 0.05,
            budget: 10,
        };
        let mapper = HiepmMapper { sigma0_sq: None };
        assert!((mapper.loading(&grid) - 0.1).abs() < 1e-15);
        for bin in 0..4 {
            let theta = grid.bin_midpoint(bin);
            let r = hiepm_strategy_trial(theta, &base, &mapper, &mut rng()).unwrap();
            let l = run_alignment(&base, theta, &mut rng()).unwrap();
            assert_eq!(r.bin_hat, bin);
            assert_eq!(r.trace.len(), l.trace.len());
        }
    }

    #[test]
    fn reference_curve_from_csv() {
        let text = "# published\nsnr_db,mean_quadratic_loss\n-5, 12.5\n0,3.25\n";
        let c = ReferenceCurve::from_csv("dnn", text.as_bytes()).unwrap();
        assert_eq!(c.points.len(), 2);
        assert_eq!(
            c.points[1],
            ReferencePoint {
                snr_db: 0.0,
                mean_quadratic_loss: 3.25
            }
        );
        assert!(
            ReferenceCurve::from_csv("bad", "snr_db,mean_quadratic_loss\nx,1\n".as_bytes())
                .is_err()
        );
    }

    proptest! {
        #[test]
        fn hiepm_beams_have_unit_norm(bins in prop::collection::btree_set(0usize..16, 1..16), load in 1e-3f64..10.0) {
            let grid = AngleGrid::new(-60.0, 60.0, 16, 1, 16).unwrap();
            let w = hiepm_ideal_beam(&Query::new(bins.into_iter().collect()).unwrap(), &grid, load).unwrap();
            prop_assert!((w.norm() - 1.0).abs() < 1e-9);
        }
    }
}
