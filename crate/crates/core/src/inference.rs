//! Dip fitting and coherent-fraction bounds.
//!
//! The measured g^(2X) near zero delay is modeled as
//! `g(τ) = 1 - A exp(-|τ| / τ_c)`. With the uncorrelated part of the field
//! restricted to `1 <= g2_unc(0) <= 2`, the dip amplitude brackets the
//! coherent fraction:
//!
//! * upper bound `ρ <= sqrt(2A)`,
//! * lower bound `ρ >= 2A` for `A <= 1/4` and `ρ >= 1/2 + sqrt(4A - 1)/2`
//!   for `1/4 <= A <= 1/2`.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::correlator::CorrelationHistogram;
use crate::error::{invalid, Error, Result};

/// Points on the logarithmic coherence-time grid.
const TAU_GRID_POINTS: usize = 200;
const MAX_ITERATIONS: usize = 200;
const MIN_FIT_BINS: usize = 20;
/// Exclusion radius around ±Δ in units of the fitted dip time constant.
const EXCLUSION_TAUS: f64 = 5.0;
/// Grid points for the default quadrature propagation.
pub const QUADRATURE_POINTS: usize = 100_000;
/// Half-width of the quadrature grid in standard deviations.
const QUADRATURE_SIGMAS: f64 = 8.0;
/// Minimum probability mass left inside `0 <= A <= 1/2`.
const MIN_PHYSICAL_MASS: f64 = 1e-6;

/// Result of fitting `1 - A exp(-|τ|/τ_c)` to a histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DipFit {
    pub amplitude: f64,
    pub coherence_time: f64,
    pub sigma_amplitude: f64,
    /// Infinite when the data carry no dip to constrain the width.
    pub sigma_coherence_time: f64,
    /// Covariance of `(A, τ_c)`, scaled by the reduced chi-square.
    pub covariance: [[f64; 2]; 2],
    pub chi2_reduced: f64,
    /// Largest |τ| included in the fit (s).
    pub window: f64,
    pub bins_used: usize,
}

impl DipFit {
    /// Zero-delay value of the fitted curve, `1 - A`.
    pub fn g2x_zero(&self) -> f64 {
        1.0 - self.amplitude
    }

    pub fn evaluate(&self, tau: f64) -> f64 {
        1.0 - self.amplitude * (-tau.abs() / self.coherence_time).exp()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitOptions {
    /// Largest |τ| to fit; the whole histogram when `None`.
    pub window: Option<f64>,
    /// Delay ranges left out of the fit.
    pub exclude: Vec<Range<f64>>,
}

struct Point {
    tau: f64,
    y: f64,
    weight: f64,
}

/// Weighted sums for a fixed τ_c, where `A` is linear.
fn linear_amplitude(points: &[Point], tau_c: f64) -> (f64, f64, f64) {
    let (mut sff, mut syf, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let f = (-p.tau.abs() / tau_c).exp();
        sff += p.weight * f * f;
        syf += p.weight * p.y * f;
        syy += p.weight * p.y * p.y;
    }
    let a = if sff > 0.0 { syf / sff } else { 0.0 };
    (a, (syy - a * syf).max(0.0), sff)
}

fn chi2(points: &[Point], a: f64, tau_c: f64) -> f64 {
    points
        .iter()
        .map(|p| {
            let r = p.y - a * (-p.tau.abs() / tau_c).exp();
            p.weight * r * r
        })
        .sum()
}

/// Normal matrix and gradient of the weighted least-squares problem.
fn normal_equations(points: &[Point], a: f64, tau_c: f64) -> ([[f64; 2]; 2], [f64; 2]) {
    let mut n = [[0.0; 2]; 2];
    let mut g = [0.0; 2];
    for p in points {
        let f = (-p.tau.abs() / tau_c).exp();
        // derivatives of y_model = A f with respect to (A, tau_c)
        let ja = f;
        let jt = a * f * p.tau.abs() / (tau_c * tau_c);
        let r = p.y - a * f;
        n[0][0] += p.weight * ja * ja;
        n[0][1] += p.weight * ja * jt;
        n[1][1] += p.weight * jt * jt;
        g[0] += p.weight * ja * r;
        g[1] += p.weight * jt * r;
    }
    n[1][0] = n[0][1];
    (n, g)
}

fn invert(n: &[[f64; 2]; 2]) -> Option<[[f64; 2]; 2]> {
    let det = n[0][0] * n[1][1] - n[0][1] * n[1][0];
    if !(det.is_finite() && det > 1e-14 * n[0][0].abs() * n[1][1].abs() && det > 0.0) {
        return None;
    }
    Some([[n[1][1] / det, -n[0][1] / det], [-n[1][0] / det, n[0][0] / det]])
}

/// Gauss-Newton refinement from a grid seed; `None` if it fails to converge
/// or leaves `tau_range`.
fn gauss_newton(
    points: &[Point],
    mut a: f64,
    mut tau_c: f64,
    tau_range: (f64, f64),
) -> Option<(f64, f64, [[f64; 2]; 2], f64)> {
    let mut current = chi2(points, a, tau_c);
    for _ in 0..MAX_ITERATIONS {
        let (n, g) = normal_equations(points, a, tau_c);
        let inv = invert(&n)?;
        let da = inv[0][0] * g[0] + inv[0][1] * g[1];
        let dt = inv[1][0] * g[0] + inv[1][1] * g[1];
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let (na, nt) = (a + step * da, tau_c + step * dt);
            if nt > 0.0 {
                let c = chi2(points, na, nt);
                if c <= current {
                    a = na;
                    tau_c = nt;
                    current = c;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !(tau_range.0..=tau_range.1).contains(&tau_c) {
            return None;
        }
        let small = (step * da).abs() <= 1e-13 + 1e-11 * a.abs() && (step * dt).abs() <= 1e-11 * tau_c;
        if !accepted || small {
            let (n, _) = normal_equations(points, a, tau_c);
            return Some((a, tau_c, invert(&n)?, current));
        }
    }
    None
}

/// Weighted least-squares fit of the two-sided exponential dip.
///
/// A logarithmic grid over τ_c (with `A` solved in closed form at each
/// point) seeds a Gauss-Newton refinement. A fit whose amplitude is
/// statistically indistinguishable from zero is returned with the grid
/// value of τ_c and an infinite `sigma_coherence_time` instead of failing.
pub fn fit_dip(h: &CorrelationHistogram, opts: &FitOptions) -> Result<DipFit> {
    let window = opts.window.unwrap_or(h.window).min(h.window);
    let mut points = Vec::with_capacity(h.len());
    for i in 0..h.len() {
        let tau = h.centers[i];
        if tau.abs() > window * (1.0 + 1e-12) || opts.exclude.iter().any(|r| r.contains(&tau)) {
            continue;
        }
        let sigma = h.errors[i];
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "bin at {tau:e} s has non-positive error {sigma}"
            )));
        }
        points.push(Point {
            tau,
            y: 1.0 - h.values[i],
            weight: 1.0 / (sigma * sigma),
        });
    }
    if points.len() < MIN_FIT_BINS {
        return Err(Error::InvalidInput(format!(
            "only {} bins inside the fit window, need at least {MIN_FIT_BINS}",
            points.len()
        )));
    }
    let dof = (points.len() - 2) as f64;
    let tau_min = 2.0 * h.bin_width;
    let tau_max = h.window;
    let ratio = (tau_max / tau_min).ln() / (TAU_GRID_POINTS - 1) as f64;
    let (mut best_tau, mut best) = (tau_min, (0.0, f64::INFINITY, 0.0));
    for k in 0..TAU_GRID_POINTS {
        let tau_c = tau_min * (ratio * k as f64).exp();
        let fit = linear_amplitude(&points, tau_c);
        if fit.1 < best.1 {
            best = fit;
            best_tau = tau_c;
        }
    }
    let (grid_a, grid_chi2, grid_sff) = best;

    if let Some((a, tau_c, inv, c2)) = gauss_newton(&points, grid_a, best_tau, (h.bin_width, h.window)) {
        let chi2_reduced = c2 / dof;
        let cov = inv.map(|row| row.map(|v| v * chi2_reduced));
        return Ok(DipFit {
            amplitude: a,
            coherence_time: tau_c,
            sigma_amplitude: cov[0][0].max(0.0).sqrt(),
            sigma_coherence_time: cov[1][1].max(0.0).sqrt(),
            covariance: cov,
            chi2_reduced,
            window,
            bins_used: points.len(),
        });
    }

    let chi2_reduced = grid_chi2 / dof;
    let var_a = chi2_reduced / grid_sff;
    if grid_a.abs() <= 3.0 * var_a.sqrt() {
        return Ok(DipFit {
            amplitude: grid_a,
            coherence_time: best_tau,
            sigma_amplitude: var_a.sqrt(),
            sigma_coherence_time: f64::INFINITY,
            covariance: [[var_a, 0.0], [0.0, f64::INFINITY]],
            chi2_reduced,
            window,
            bins_used: points.len(),
        });
    }
    Err(Error::NonConvergence(format!(
        "Gauss-Newton refinement from A = {grid_a:.4}, tau_c = {best_tau:e} s did not converge within [{:e}, {:e}] s",
        h.bin_width, h.window
    )))
}

/// Time constant of a significant dip (or, on flipped data, peak).
fn feature_time(h: &CorrelationHistogram) -> Option<f64> {
    let fit = fit_dip(h, &FitOptions::default()).ok()?;
    (fit.sigma_coherence_time.is_finite() && fit.amplitude > 3.0 * fit.sigma_amplitude).then_some(fit.coherence_time)
}

/// The bins within `half_width` of `center`, re-centered; with `flip` the
/// values are mirrored about 1 so a bunching peak becomes a dip.
fn section(h: &CorrelationHistogram, center: f64, half_width: f64, flip: bool) -> Option<CorrelationHistogram> {
    let mid = h.bin_at(center)?;
    let k = ((half_width / h.bin_width).round() as usize)
        .min(mid)
        .min(h.len() - 1 - mid);
    let range = mid - k..mid + k + 1;
    Some(CorrelationHistogram {
        bin_width: h.bin_width,
        window: k as f64 * h.bin_width,
        centers: range.clone().map(|i| h.centers[i] - h.centers[mid]).collect(),
        counts: h.counts[range.clone()].to_vec(),
        values: h.values[range.clone()]
            .iter()
            .map(|&g| if flip { 2.0 - g } else { g })
            .collect(),
        errors: h.errors[range].to_vec(),
        rate_a: h.rate_a,
        rate_b: h.rate_b,
        integration_time: h.integration_time,
    })
}

/// Default exclusion regions around the bunching features at ±Δ.
///
/// Probe fits of the dip over `|τ| < Δ/2` and of the feature at `+Δ` (same
/// model, flipped) give time constants; the regions `|τ ∓ Δ| < 5 τ̂` are
/// excluded with τ̂ the longer of the two. The radius is capped so that 20
/// bins on each side of the origin survive, and the cap is used when
/// neither probe finds a significant feature.
pub fn delta_exclusions(h: &CorrelationHistogram, delta: f64) -> Result<Vec<Range<f64>>> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(invalid(format!("delay must be positive, got {delta}")));
    }
    let cap = delta - MIN_FIT_BINS as f64 * h.bin_width;
    if cap <= 0.0 {
        return Err(invalid(format!(
            "delay {delta:e} s leaves fewer than {MIN_FIT_BINS} bins of {:e} s around the origin",
            h.bin_width
        )));
    }
    let probes = [
        section(h, 0.0, 0.5 * delta, false),
        section(h, delta, 0.5 * delta, true),
    ];
    let tau = probes.iter().flatten().filter_map(feature_time).reduce(f64::max);
    let radius = tau.map_or(cap, |t| (EXCLUSION_TAUS * t).min(cap));
    Ok(vec![
        (delta - radius)..(delta + radius),
        (-delta - radius)..(-delta + radius),
    ])
}

fn check_amplitude(a: f64) -> Result<()> {
    if (0.0..=0.5).contains(&a) {
        Ok(())
    } else {
        Err(invalid(format!("dip amplitude must be in [0, 1/2], got {a}")))
    }
}

/// `ρ <= sqrt(2A)`.
pub fn rho_upper_bound(a: f64) -> Result<f64> {
    check_amplitude(a)?;
    Ok((2.0 * a).sqrt())
}

/// `ρ >= 2A` below `A = 1/4`, `ρ >= 1/2 + sqrt(4A - 1)/2` above.
pub fn rho_lower_bound(a: f64) -> Result<f64> {
    check_amplitude(a)?;
    Ok(if a <= 0.25 {
        2.0 * a
    } else {
        0.5 + 0.5 * (4.0 * a - 1.0).sqrt()
    })
}

/// All roots in `[0, 1]` of the zero-delay mixture relation solved for ρ:
/// `(g/2 - 3/2) ρ² + (2 - g) ρ + g/2 - g2x0 = 0` with `g = g2_unc(0)`.
pub fn rho_from_g2x(g2x0: f64, g2_unc_zero: f64) -> Vec<f64> {
    const EPS: f64 = 1e-12;
    let a = 0.5 * g2_unc_zero - 1.5;
    let b = 2.0 - g2_unc_zero;
    let c = 0.5 * g2_unc_zero - g2x0;
    let mut roots = Vec::with_capacity(2);
    if a == 0.0 {
        roots.push(-c / b);
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc < -EPS {
            return roots;
        }
        let q = -0.5 * (b + b.signum() * disc.max(0.0).sqrt());
        if q == 0.0 {
            roots.push(0.0);
        } else {
            roots.push(q / a);
            roots.push(c / q);
        }
    }
    let mut roots: Vec<f64> = roots
        .into_iter()
        .filter(|r| (-EPS..=1.0 + EPS).contains(r))
        .map(|r| r.clamp(0.0, 1.0))
        .collect();
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|x, y| (*x - *y).abs() <= EPS);
    roots
}

/// Range of `g2_unc(0)` compatible with a physical ρ at a given `g2x(0)`:
/// a lower bound, and an upper bound only for `g2x0 < 1/2`.
pub fn unc_g2_region(g2x0: f64) -> (f64, Option<f64>) {
    let lower = if g2x0 <= 2.0 / 3.0 {
        0.0
    } else if g2x0 < 1.0 {
        3.0 + 1.0 / (1.0 - 2.0 * g2x0)
    } else {
        2.0 * g2x0
    };
    let upper = (0.0..0.5).contains(&g2x0).then_some(2.0 * g2x0);
    (lower, upper)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum Propagation {
    Quadrature { points: usize },
    MonteCarlo { samples: usize, seed: u64 },
}

impl Default for Propagation {
    fn default() -> Self {
        Propagation::Quadrature {
            points: QUADRATURE_POINTS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundSummary {
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoBounds {
    pub amplitude: f64,
    pub sigma_amplitude: f64,
    pub confidence: f64,
    pub upper: BoundSummary,
    pub lower: BoundSummary,
    pub propagation: Propagation,
}

impl RhoBounds {
    /// Midpoint of the two expectations.
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.upper.mean + self.lower.mean)
    }
}

fn upper_map(a: f64) -> f64 {
    (2.0 * a).sqrt()
}

fn lower_map(a: f64) -> f64 {
    if a <= 0.25 {
        2.0 * a
    } else {
        0.5 + 0.5 * (4.0 * a - 1.0).max(0.0).sqrt()
    }
}

/// Normal density of `A` truncated to the physical interval `[0, 1/2]`.
struct TruncatedNormal {
    mean: f64,
    sigma: f64,
    std: Normal,
    alpha: f64,
    beta: f64,
}

impl TruncatedNormal {
    fn new(mean: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(invalid(format!("sigma_A must be positive, got {sigma}")));
        }
        if !mean.is_finite() {
            return Err(invalid(format!("amplitude must be finite, got {mean}")));
        }
        let std = Normal::standard();
        let t = TruncatedNormal {
            mean,
            sigma,
            std,
            alpha: (0.0 - mean) / sigma,
            beta: (0.5 - mean) / sigma,
        };
        let mass = t.mass();
        if !(mass >= MIN_PHYSICAL_MASS) {
            return Err(Error::NonPhysical(format!(
                "only {mass:.3e} of the probability for A = {mean} +- {sigma} lies in [0, 1/2]"
            )));
        }
        Ok(t)
    }

    fn mass(&self) -> f64 {
        if self.alpha > 0.0 {
            self.std.sf(self.alpha) - self.std.sf(self.beta)
        } else {
            self.std.cdf(self.beta) - self.std.cdf(self.alpha)
        }
    }

    /// Quantile of the truncated distribution.
    fn quantile(&self, q: f64) -> f64 {
        let z = if self.alpha > 0.0 {
            // both limits in the upper tail: work with survival functions
            let (sa, sb) = (self.std.sf(self.alpha), self.std.sf(self.beta));
            -self.std.inverse_cdf(sb + (1.0 - q) * (sa - sb))
        } else {
            let (pa, pb) = (self.std.cdf(self.alpha), self.std.cdf(self.beta));
            self.std.inverse_cdf(pa + q * (pb - pa))
        };
        (self.mean + self.sigma * z).clamp(0.0, 0.5)
    }

    fn density(&self, a: f64) -> f64 {
        let z = (a - self.mean) / self.sigma;
        (-0.5 * z * z).exp()
    }
}

/// Composite Simpson rule on `n` (rounded up to even) intervals.
fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let n = (n.max(2) + 1) & !1;
    let h = (hi - lo) / n as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(lo + i as f64 * h);
    }
    s * h / 3.0
}

fn quadrature(dist: &TruncatedNormal, points: usize) -> (f64, f64) {
    let lo = (dist.mean - QUADRATURE_SIGMAS * dist.sigma).max(0.0);
    let hi = (dist.mean + QUADRATURE_SIGMAS * dist.sigma).min(0.5);
    // split at the branch point of the lower bound
    let pieces: Vec<(f64, f64)> = if lo < 0.25 && 0.25 < hi {
        vec![(lo, 0.25), (0.25, hi)]
    } else {
        vec![(lo, hi)]
    };
    let (mut mass, mut up, mut low) = (0.0, 0.0, 0.0);
    for (a, b) in pieces {
        let n = ((points as f64) * (b - a) / (hi - lo)).ceil() as usize;
        mass += simpson(|x| dist.density(x), a, b, n);
        up += simpson(|x| dist.density(x) * upper_map(x), a, b, n);
        low += simpson(|x| dist.density(x) * lower_map(x), a, b, n);
    }
    (up / mass, low / mass)
}

fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[i]
    }
}

fn monte_carlo(dist: &TruncatedNormal, samples: usize, seed: u64, confidence: f64) -> (BoundSummary, BoundSummary) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws = Vec::with_capacity(samples);
    if dist.mass() >= 0.01 {
        while draws.len() < samples {
            let z: f64 = rng.sample(StandardNormal);
            let a = dist.mean + dist.sigma * z;
            if (0.0..=0.5).contains(&a) {
                draws.push(a);
            }
        }
    } else {
        // rejection would waste almost every draw
        while draws.len() < samples {
            draws.push(dist.quantile(rng.random::<f64>()));
        }
    }
    draws.sort_by(f64::total_cmp);
    let (ql, qh) = (0.5 * (1.0 - confidence), 0.5 * (1.0 + confidence));
    let summary = |map: fn(f64) -> f64| {
        let mapped: Vec<f64> = draws.iter().map(|&a| map(a)).collect();
        BoundSummary {
            mean: mapped.iter().sum::<f64>() / mapped.len() as f64,
            ci_lo: empirical_quantile(&mapped, ql),
            ci_hi: empirical_quantile(&mapped, qh),
        }
    };
    (summary(upper_map), summary(lower_map))
}

/// Expectations and central confidence intervals of both ρ bounds for a
/// normally distributed dip amplitude `N(amplitude, sigma²)` truncated to
/// the physical interval `0 <= A <= 1/2`.
pub fn propagate_amplitude(amplitude: f64, sigma: f64, confidence: f64, method: Propagation) -> Result<RhoBounds> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(invalid(format!("confidence must be in (0, 1), got {confidence}")));
    }
    let dist = TruncatedNormal::new(amplitude, sigma)?;
    let (upper, lower) = match method {
        Propagation::Quadrature { points } => {
            if points < 2 {
                return Err(invalid("quadrature needs at least two points"));
            }
            let (mu, ml) = quadrature(&dist, points);
            let a_lo = dist.quantile(0.5 * (1.0 - confidence));
            let a_hi = dist.quantile(0.5 * (1.0 + confidence));
            // both maps are non-decreasing, so quantiles map through
            let bound = |mean: f64, map: fn(f64) -> f64| BoundSummary {
                mean: mean.clamp(map(a_lo), map(a_hi)),
                ci_lo: map(a_lo),
                ci_hi: map(a_hi),
            };
            (bound(mu, upper_map), bound(ml, lower_map))
        }
        Propagation::MonteCarlo { samples, seed } => {
            if samples < 2 {
                return Err(invalid("Monte-Carlo propagation needs at least two samples"));
            }
            monte_carlo(&dist, samples, seed, confidence)
        }
    };
    Ok(RhoBounds {
        amplitude,
        sigma_amplitude: sigma,
        confidence,
        upper,
        lower,
        propagation: method,
    })
}

/// [`propagate_amplitude`] applied to a fitted dip.
pub fn propagate_bounds(fit: &DipFit, confidence: f64, method: Propagation) -> Result<RhoBounds> {
    propagate_amplitude(fit.amplitude, fit.sigma_amplitude, confidence, method)
}
