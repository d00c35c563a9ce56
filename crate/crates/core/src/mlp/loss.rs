//! Separation losses on the normalized network output and their gradients
//! with respect to the raw output vector.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::model::to_complex;
use crate::geometry::AngleGrid;
use crate::questioner::MeasurementRule;

/// Class-balanced squared error toward the `1/K` indicator pattern plus a
/// smoothed margin hinge on either probe powers (1-bit) or full-rule factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSpec {
    /// Hinge margin γ.
    pub gamma: f64,
    /// Temperature of the log-sum-exp max/min.
    pub tau: f64,
    pub mse_weight: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self {
            gamma: 0.05,
            tau: 0.02,
            mse_weight: 1.0,
        }
    }
}

pub fn loss_name(rule: MeasurementRule) -> &'static str {
    match rule {
        MeasurementRule::OneBit => "balanced-mse+power-hinge",
        MeasurementRule::Full => "balanced-mse+nu-hinge",
    }
}

/// `(τ·ln Σ exp(x/τ), softmax(x/τ))`.
fn soft_max(xs: &[f64], tau: f64) -> (f64, Vec<f64>) {
    let top = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| ((x - top) / tau).exp()).collect();
    let s: f64 = e.iter().sum();
    (top + tau * s.ln(), e.into_iter().map(|v| v / s).collect())
}

fn responses(manifold: &[crate::geometry::SteeringVector], w: &[Complex64]) -> Vec<Complex64> {
    manifold
        .iter()
        .map(|a| a.as_slice().iter().zip(w).map(|(x, y)| x.conj() * y).sum())
        .collect()
}

/// Loss of one sample and its gradient w.r.t. the raw `2·N_R` output.
///
/// Returns a NaN loss when the raw output is identically zero.
pub fn sample_loss(
    grid: &AngleGrid,
    rule: MeasurementRule,
    spec: &LossSpec,
    member: &[bool],
    raw: &[f64],
) -> (f64, Vec<f64>) {
    let z = to_complex(raw);
    let nrm = crate::geometry::norm(&z);
    if nrm == 0.0 {
        return (f64::NAN, vec![0.0; raw.len()]);
    }
    let w: Vec<Complex64> = z.iter().map(|v| v / nrm).collect();
    let k = grid.secondary();
    let kk = member.iter().filter(|&&b| b).count();

    let probes = grid.secondary_manifold();
    let c = responses(probes, &w);
    let p: Vec<f64> = c.iter().map(|v| v.norm_sqr()).collect();
    let inside = |i: usize| member[i / k];
    let n_in = (kk * k) as f64;
    let n_out = ((member.len() - kk) * k) as f64;
    let target = 1.0 / kk as f64;

    let mut dp = vec![0.0; p.len()];
    let mut loss = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        if inside(i) {
            loss += spec.mse_weight * (pi - target).powi(2) / n_in;
            dp[i] = spec.mse_weight * 2.0 * (pi - target) / n_in;
        } else {
            loss += spec.mse_weight * pi * pi / n_out;
            dp[i] = spec.mse_weight * 2.0 * pi / n_out;
        }
    }

    let bins = grid.bin_manifold();
    let mut g_bins = vec![Complex64::new(0.0, 0.0); bins.len()];
    if n_out > 0.0 {
        match rule {
            MeasurementRule::OneBit => {
                let (idx_in, idx_out): (Vec<usize>, Vec<usize>) =
                    (0..p.len()).partition(|&i| inside(i));
                let p_out: Vec<f64> = idx_out.iter().map(|&i| p[i]).collect();
                let neg_in: Vec<f64> = idx_in.iter().map(|&i| -p[i]).collect();
                let (smax, w_out) = soft_max(&p_out, spec.tau);
                let (neg_smin, w_in) = soft_max(&neg_in, spec.tau);
                let h = spec.gamma + smax + neg_smin;
                if h > 0.0 {
                    loss += h;
                    idx_out.iter().zip(&w_out).for_each(|(&i, g)| dp[i] += g);
                    idx_in.iter().zip(&w_in).for_each(|(&i, g)| dp[i] -= g);
                }
            }
            MeasurementRule::Full => {
                let cb = responses(bins, &w);
                let truths: Vec<usize> = (0..member.len()).filter(|&s| member[s]).collect();
                let (bins_in, bins_out): (Vec<usize>, Vec<usize>) =
                    (0..member.len()).partition(|&j| member[j]);
                for &s in &truths {
                    let nu: Vec<f64> = cb
                        .iter()
                        .map(|cj| (-(cb[s] - cj).norm_sqr()).exp())
                        .collect();
                    let nu_out: Vec<f64> = bins_out.iter().map(|&j| nu[j]).collect();
                    let neg_in: Vec<f64> = bins_in.iter().map(|&j| -nu[j]).collect();
                    let (smax, w_out) = soft_max(&nu_out, spec.tau);
                    let (neg_smin, w_in) = soft_max(&neg_in, spec.tau);
                    let h = spec.gamma + smax + neg_smin;
                    if h <= 0.0 {
                        continue;
                    }
                    let scale = 1.0 / truths.len() as f64;
                    loss += scale * h;
                    let mut dnu = vec![0.0; nu.len()];
                    bins_out
                        .iter()
                        .zip(&w_out)
                        .for_each(|(&j, g)| dnu[j] += scale * g);
                    bins_in
                        .iter()
                        .zip(&w_in)
                        .for_each(|(&j, g)| dnu[j] -= scale * g);
                    for j in 0..nu.len() {
                        let d = cb[s] - cb[j];
                        let g = d * (2.0 * dnu[j] * nu[j]);
                        g_bins[j] += g;
                        g_bins[s] -= g;
                    }
                }
            }
        }
    }

    let n = w.len();
    let mut g_w = vec![Complex64::new(0.0, 0.0); n];
    let terms = c
        .iter()
        .zip(&dp)
        .map(|(ci, d)| ci * (2.0 * d))
        .zip(probes)
        .chain(g_bins.into_iter().zip(bins));
    for (g, a) in terms {
        if g != Complex64::new(0.0, 0.0) {
            g_w.iter_mut()
                .zip(a.as_slice())
                .for_each(|(acc, am)| *acc += g * am);
        }
    }
    let radial: f64 = w.iter().zip(&g_w).map(|(wi, gi)| (wi.conj() * gi).re).sum();
    let mut grad = vec![0.0; raw.len()];
    for m in 0..n {
        let g = (g_w[m] - w[m] * radial) / nrm;
        grad[m] = g.re;
        grad[n + m] = g.im;
    }
    (loss, grad)
}
