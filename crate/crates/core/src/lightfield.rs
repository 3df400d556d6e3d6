//! Stochastic light-field models and their closed-form correlation functions.
//!
//! Field amplitudes are expressed in √(photons/s), so `|E(t)|²` is the
//! instantaneous photon rate at unit detection efficiency. All primitive
//! sources have a Lorentzian lineshape, i.e. `g1(τ) = exp(-|τ|/τ_c)`:
//!
//! * coherent light keeps a constant modulus while its phase performs a
//!   Wiener process, so `g2(τ) = 1` at every delay;
//! * chaotic light is a complex Ornstein-Uhlenbeck process with Gaussian
//!   quadratures, so `g2(τ) = 1 + |g1(τ)|²`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Tolerance on `r_alpha + r_beta = 1`.
const FRACTION_SUM_TOL: f64 = 1e-12;
/// Minimum number of samples per coherence time.
pub const MIN_SAMPLES_PER_COHERENCE: f64 = 20.0;
/// Minimum number of samples per beat period of two detuned modes.
pub const MIN_SAMPLES_PER_BEAT: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FieldModel {
    /// Constant amplitude with a diffusing phase.
    Coherent { intensity: f64, coherence_time: f64 },
    /// Thermal-like light with Gaussian field statistics.
    Chaotic { intensity: f64, coherence_time: f64 },
    /// `sqrt(rho) E_coh + sqrt(1 - rho) E_unc` with independent components
    /// of equal mean intensity.
    Mixture {
        rho: f64,
        coherent: Box<FieldModel>,
        uncorrelated: Box<FieldModel>,
    },
    /// Two mutually incoherent coherent modes separated by `detuning` (Hz).
    TwoMode {
        intensity: f64,
        r_alpha: f64,
        r_beta: f64,
        detuning: f64,
        coherence_time_alpha: f64,
        coherence_time_beta: f64,
    },
}

impl FieldModel {
    pub fn coherent(intensity: f64, coherence_time: f64) -> Self {
        FieldModel::Coherent {
            intensity,
            coherence_time,
        }
    }

    pub fn chaotic(intensity: f64, coherence_time: f64) -> Self {
        FieldModel::Chaotic {
            intensity,
            coherence_time,
        }
    }

    pub fn mixture(rho: f64, coherent: FieldModel, uncorrelated: FieldModel) -> Self {
        FieldModel::Mixture {
            rho,
            coherent: Box::new(coherent),
            uncorrelated: Box::new(uncorrelated),
        }
    }

    /// Two modes with equal coherence times and `r_beta = 1 - r_alpha`.
    pub fn two_mode(intensity: f64, r_alpha: f64, detuning: f64, coherence_time: f64) -> Self {
        FieldModel::TwoMode {
            intensity,
            r_alpha,
            r_beta: 1.0 - r_alpha,
            detuning,
            coherence_time_alpha: coherence_time,
            coherence_time_beta: coherence_time,
        }
    }

    /// An uncorrelated field whose zero-delay `g2` equals `g2_zero ∈ [1, 2]`.
    ///
    /// Built as an independent mixture of a coherent part carrying power
    /// fraction `sqrt(2 - g2_zero)` and a chaotic remainder, which gives
    /// `g2(0) = 2 - q²` for coherent fraction `q`.
    pub fn uncorrelated_with_g2(intensity: f64, g2_zero: f64, coherence_time: f64) -> Result<Self> {
        if !(1.0..=2.0).contains(&g2_zero) {
            return Err(invalid(format!(
                "g2(0) of the uncorrelated field must be in [1, 2], got {g2_zero}"
            )));
        }
        let q = (2.0 - g2_zero).sqrt();
        Ok(FieldModel::mixture(
            q,
            FieldModel::coherent(intensity, coherence_time),
            FieldModel::chaotic(intensity, coherence_time),
        ))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FieldModel::Coherent {
                intensity,
                coherence_time,
            }
            | FieldModel::Chaotic {
                intensity,
                coherence_time,
            } => {
                positive("intensity", *intensity)?;
                positive("coherence time", *coherence_time)
            }
            FieldModel::Mixture {
                rho,
                coherent,
                uncorrelated,
            } => {
                if !(0.0..=1.0).contains(rho) {
                    return Err(invalid(format!("coherent fraction rho must be in [0, 1], got {rho}")));
                }
                coherent.validate()?;
                uncorrelated.validate()?;
                let (ic, iu) = (coherent.mean_intensity(), uncorrelated.mean_intensity());
                if (ic - iu).abs() > 1e-9 * ic.max(iu) {
                    return Err(invalid(format!(
                        "mixture components must have equal mean intensity ({ic} vs {iu})"
                    )));
                }
                Ok(())
            }
            FieldModel::TwoMode {
                intensity,
                r_alpha,
                r_beta,
                detuning,
                coherence_time_alpha,
                coherence_time_beta,
            } => {
                positive("intensity", *intensity)?;
                positive("coherence time of mode alpha", *coherence_time_alpha)?;
                positive("coherence time of mode beta", *coherence_time_beta)?;
                for (name, r) in [("r_alpha", r_alpha), ("r_beta", r_beta)] {
                    if !(0.0..=1.0).contains(r) {
                        return Err(invalid(format!("{name} must be in [0, 1], got {r}")));
                    }
                }
                if (r_alpha + r_beta - 1.0).abs() > FRACTION_SUM_TOL {
                    return Err(invalid(format!(
                        "r_alpha + r_beta must equal 1, got {}",
                        r_alpha + r_beta
                    )));
                }
                if !detuning.is_finite() {
                    return Err(invalid("detuning must be finite"));
                }
                Ok(())
            }
        }
    }

    /// Mean of `|E|²` in photons/s.
    pub fn mean_intensity(&self) -> f64 {
        match self {
            FieldModel::Coherent { intensity, .. }
            | FieldModel::Chaotic { intensity, .. }
            | FieldModel::TwoMode { intensity, .. } => *intensity,
            FieldModel::Mixture { coherent, .. } => coherent.mean_intensity(),
        }
    }

    /// Every coherence time appearing anywhere in the model.
    pub fn coherence_times(&self) -> Vec<f64> {
        match self {
            FieldModel::Coherent { coherence_time, .. } | FieldModel::Chaotic { coherence_time, .. } => {
                vec![*coherence_time]
            }
            FieldModel::Mixture {
                coherent, uncorrelated, ..
            } => {
                let mut v = coherent.coherence_times();
                v.extend(uncorrelated.coherence_times());
                v
            }
            FieldModel::TwoMode {
                coherence_time_alpha,
                coherence_time_beta,
                ..
            } => vec![*coherence_time_alpha, *coherence_time_beta],
        }
    }

    pub fn shortest_coherence_time(&self) -> f64 {
        self.coherence_times().into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn longest_coherence_time(&self) -> f64 {
        self.coherence_times().into_iter().fold(0.0, f64::max)
    }

    /// Largest mode detuning (Hz); zero for single-mode light.
    pub fn largest_detuning(&self) -> f64 {
        match self {
            FieldModel::Coherent { .. } | FieldModel::Chaotic { .. } => 0.0,
            FieldModel::Mixture {
                coherent, uncorrelated, ..
            } => coherent.largest_detuning().max(uncorrelated.largest_detuning()),
            FieldModel::TwoMode { detuning, .. } => detuning.abs(),
        }
    }

    /// Coarsest sampling step that resolves both the coherence times and
    /// the beat between detuned modes.
    pub fn max_time_step(&self) -> f64 {
        let by_coherence = self.shortest_coherence_time() / MIN_SAMPLES_PER_COHERENCE;
        match self.largest_detuning() {
            d if d > 0.0 => by_coherence.min(1.0 / (MIN_SAMPLES_PER_BEAT * d)),
            _ => by_coherence,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive and finite, got {v}")))
    }
}

/// Uniformly sampled complex field amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldTrajectory {
    pub dt: f64,
    pub start: f64,
    pub samples: Vec<Complex64>,
    pub seed: u64,
}

impl FieldTrajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 * self.dt
    }

    /// Instantaneous photon rates `|E|²`.
    pub fn intensities(&self) -> Vec<f64> {
        self.samples.iter().map(|e| e.norm_sqr()).collect()
    }

    pub fn mean_intensity(&self) -> f64 {
        self.samples.iter().map(|e| e.norm_sqr()).sum::<f64>() / self.samples.len() as f64
    }
}

/// Checks the sampling step against the model's coherence times and beat
/// frequencies.
pub fn check_resolution(model: &FieldModel, dt: f64) -> Result<()> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(invalid(format!("sample period must be positive, got {dt}")));
    }
    let limit = model.max_time_step();
    if dt > limit * (1.0 + 1e-9) {
        return Err(invalid(format!(
            "sample period {dt:e} s is too coarse: need dt <= {limit:e} s ({MIN_SAMPLES_PER_COHERENCE} samples per coherence time, {MIN_SAMPLES_PER_BEAT} per beat period)"
        )));
    }
    Ok(())
}

/// Draws one realization of `model` over `duration` seconds.
pub fn sample_trajectory(model: &FieldModel, duration: f64, dt: f64, seed: u64) -> Result<FieldTrajectory> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(invalid(format!("duration must be positive, got {duration}")));
    }
    let mut gen = FieldGenerator::new(model, dt, seed)?;
    if duration < 10.0 * dt * (1.0 - 1e-9) {
        return Err(invalid(format!(
            "duration {duration:e} s must cover at least 10 samples of {dt:e} s"
        )));
    }
    let n = ((duration / dt).round() as usize).max(2);
    let samples = (0..n).map(|_| gen.next_sample()).collect();
    Ok(FieldTrajectory {
        dt,
        start: 0.0,
        samples,
        seed,
    })
}

/// Sample-by-sample field source.
///
/// Produces the same sequence as [`sample_trajectory`] without holding the
/// whole record in memory.
pub struct FieldGenerator {
    dt: f64,
    index: u64,
    state: SourceState,
}

enum SourceState {
    Coherent {
        amplitude: f64,
        phase: f64,
        step_sd: f64,
        rng: ChaCha8Rng,
    },
    Chaotic {
        field: Complex64,
        decay: f64,
        kick_sd: f64,
        rng: ChaCha8Rng,
    },
    Mixture {
        weight_coherent: f64,
        weight_uncorrelated: f64,
        coherent: Box<SourceState>,
        uncorrelated: Box<SourceState>,
    },
    TwoMode {
        weight_alpha: f64,
        weight_beta: f64,
        detuning: f64,
        alpha: Box<SourceState>,
        beta: Box<SourceState>,
    },
}

const PHASE_WRAP: f64 = 64.0 * PI;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn component_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl SourceState {
    // The coherent part of a mixture reuses its parent's stream so that a
    // mixture at rho = 1 reproduces the bare coherent source.
    fn build(model: &FieldModel, dt: f64, seed: u64, stream: u64) -> SourceState {
        match model {
            FieldModel::Coherent {
                intensity,
                coherence_time,
            } => {
                let mut rng = component_rng(seed, stream);
                let phase = rng.random::<f64>() * 2.0 * PI;
                SourceState::Coherent {
                    amplitude: intensity.sqrt(),
                    phase,
                    // Var[dphi] = 2 dt / tau gives g1 = exp(-|tau| / tau_c)
                    step_sd: (2.0 * dt / coherence_time).sqrt(),
                    rng,
                }
            }
            FieldModel::Chaotic {
                intensity,
                coherence_time,
            } => {
                let mut rng = component_rng(seed, stream);
                let quad_sd = (intensity / 2.0).sqrt();
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                let decay = (-dt / coherence_time).exp();
                SourceState::Chaotic {
                    field: Complex64::new(re * quad_sd, im * quad_sd),
                    decay,
                    kick_sd: quad_sd * (1.0 - decay * decay).sqrt(),
                    rng,
                }
            }
            FieldModel::Mixture {
                rho,
                coherent,
                uncorrelated,
            } => SourceState::Mixture {
                weight_coherent: rho.sqrt(),
                weight_uncorrelated: (1.0 - rho).sqrt(),
                coherent: Box::new(SourceState::build(coherent, dt, seed, stream)),
                uncorrelated: Box::new(SourceState::build(uncorrelated, dt, seed, splitmix64(stream ^ 0x5555))),
            },
            FieldModel::TwoMode {
                intensity,
                r_alpha,
                r_beta,
                detuning,
                coherence_time_alpha,
                coherence_time_beta,
            } => SourceState::TwoMode {
                weight_alpha: r_alpha.sqrt(),
                weight_beta: r_beta.sqrt(),
                detuning: *detuning,
                alpha: Box::new(SourceState::build(
                    &FieldModel::coherent(*intensity, *coherence_time_alpha),
                    dt,
                    seed,
                    stream,
                )),
                beta: Box::new(SourceState::build(
                    &FieldModel::coherent(*intensity, *coherence_time_beta),
                    dt,
                    seed,
                    splitmix64(stream ^ 0xAAAA),
                )),
            },
        }
    }

    fn step(&mut self, t: f64) -> Complex64 {
        match self {
            SourceState::Coherent {
                amplitude,
                phase,
                step_sd,
                rng,
            } => {
                let (sin, cos) = phase.sin_cos();
                let kick: f64 = rng.sample(StandardNormal);
                *phase += *step_sd * kick;
                // wrapping is only needed to keep sin/cos accurate
                if phase.abs() > PHASE_WRAP {
                    *phase = phase.rem_euclid(2.0 * PI);
                }
                Complex64::new(*amplitude * cos, *amplitude * sin)
            }
            SourceState::Chaotic {
                field,
                decay,
                kick_sd,
                rng,
            } => {
                let e = *field;
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                *field = *field * *decay + Complex64::new(re, im) * *kick_sd;
                e
            }
            SourceState::Mixture {
                weight_coherent,
                weight_uncorrelated,
                coherent,
                uncorrelated,
            } => {
                let c = coherent.step(t);
                let u = uncorrelated.step(t);
                c * *weight_coherent + u * *weight_uncorrelated
            }
            SourceState::TwoMode {
                weight_alpha,
                weight_beta,
                detuning,
                alpha,
                beta,
            } => {
                let a = alpha.step(t);
                let b = beta.step(t);
                let beat = Complex64::from_polar(1.0, 2.0 * PI * (*detuning * t).fract());
                a * *weight_alpha + b * beat * *weight_beta
            }
        }
    }
}

impl FieldGenerator {
    pub fn new(model: &FieldModel, dt: f64, seed: u64) -> Result<Self> {
        model.validate()?;
        check_resolution(model, dt)?;
        Ok(FieldGenerator {
            dt,
            index: 0,
            state: SourceState::build(model, dt, seed, 0),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn next_sample(&mut self) -> Complex64 {
        let t = self.index as f64 * self.dt;
        self.index += 1;
        self.state.step(t)
    }

    pub fn fill(&mut self, out: &mut [Complex64]) {
        for e in out {
            *e = self.next_sample();
        }
    }
}

impl Iterator for FieldGenerator {
    type Item = Complex64;

    fn next(&mut self) -> Option<Complex64> {
        Some(self.next_sample())
    }
}

/// First-order correlation `g1(τ)` of a primitive (coherent or chaotic) source.
pub fn analytic_g1(model: &FieldModel, tau: f64) -> Result<Complex64> {
    match model {
        FieldModel::Coherent { coherence_time, .. } | FieldModel::Chaotic { coherence_time, .. } => {
            Ok(Complex64::new((-tau.abs() / coherence_time).exp(), 0.0))
        }
        _ => Err(invalid("analytic g1 is only defined for coherent and chaotic sources")),
    }
}

fn lorentzian(coherence_time: f64, tau: f64) -> Complex64 {
    Complex64::new((-tau.abs() / coherence_time).exp(), 0.0)
}

/// `g1(τ) = <E*(t) E(t+τ)> / <|E|²>` for any model.
fn field_g1(model: &FieldModel, tau: f64) -> Complex64 {
    match model {
        FieldModel::Coherent { coherence_time, .. } | FieldModel::Chaotic { coherence_time, .. } => {
            lorentzian(*coherence_time, tau)
        }
        FieldModel::Mixture {
            rho,
            coherent,
            uncorrelated,
        } => field_g1(coherent, tau) * *rho + field_g1(uncorrelated, tau) * (1.0 - rho),
        FieldModel::TwoMode {
            r_alpha,
            r_beta,
            detuning,
            coherence_time_alpha,
            coherence_time_beta,
            ..
        } => {
            let beat = Complex64::from_polar(1.0, 2.0 * PI * detuning * tau);
            lorentzian(*coherence_time_alpha, tau) * *r_alpha + lorentzian(*coherence_time_beta, tau) * beat * *r_beta
        }
    }
}

/// Normalized intensity correlation `g2(τ)` for any model.
fn field_g2(model: &FieldModel, tau: f64) -> f64 {
    match model {
        FieldModel::Coherent { .. } => 1.0,
        FieldModel::Chaotic { coherence_time, .. } => 1.0 + lorentzian(*coherence_time, tau).norm_sqr(),
        FieldModel::Mixture {
            rho,
            coherent,
            uncorrelated,
        } => {
            let cross = (field_g1(coherent, tau) * field_g1(uncorrelated, tau).conj()).re;
            rho * rho * field_g2(coherent, tau)
                + (1.0 - rho).powi(2) * field_g2(uncorrelated, tau)
                + 2.0 * rho * (1.0 - rho) * (1.0 + cross)
        }
        FieldModel::TwoMode {
            r_alpha,
            r_beta,
            detuning,
            coherence_time_alpha,
            coherence_time_beta,
            ..
        } => {
            let beat = Complex64::from_polar(1.0, 2.0 * PI * detuning * tau);
            let cross =
                (lorentzian(*coherence_time_alpha, tau) * (lorentzian(*coherence_time_beta, tau) * beat).conj()).re;
            r_alpha * r_alpha + r_beta * r_beta + 2.0 * r_alpha * r_beta * (1.0 + cross)
        }
    }
}

/// Zero-delay g^(2X) of a mixture with coherent fraction `rho` whose
/// uncorrelated part has zero-delay correlation `g2_unc_zero`.
pub fn analytic_g2x_mixture_zero(rho: f64, g2_unc_zero: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(invalid(format!("rho must be in [0, 1], got {rho}")));
    }
    if !(g2_unc_zero >= 0.0 && g2_unc_zero.is_finite()) {
        return Err(invalid(format!("g2_unc(0) must be non-negative, got {g2_unc_zero}")));
    }
    Ok(2.0 * rho - 1.5 * rho * rho + 0.5 * (1.0 - rho).powi(2) * g2_unc_zero)
}

/// Evaluates g^(2X)(τ) behind an interferometer with delay `delta`.
///
/// Uses the six-term expansion of the cross-correlation. The two
/// interference terms reduce to `|g1(τ)|²` once `g1(Δ)` is negligible,
/// which the precondition `Δ > 10 τ_c` guarantees.
pub fn analytic_g2x_curve(model: &FieldModel, taus: &[f64], delta: f64) -> Result<Vec<f64>> {
    model.validate()?;
    let longest = model.longest_coherence_time();
    if !(delta > 10.0 * longest) {
        return Err(invalid(format!(
            "delay {delta:e} s must exceed ten coherence times ({:e} s)",
            10.0 * longest
        )));
    }
    Ok(taus
        .iter()
        .map(|&tau| {
            let bunching = 2.0 * field_g2(model, tau);
            let shifted = field_g2(model, tau + delta) + field_g2(model, tau - delta);
            let interference = 2.0 * field_g1(model, tau).norm_sqr();
            0.25 * (bunching + shifted - interference)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Mean and standard error from non-overlapping batches.
    fn batch_stats(values: &[f64], batches: usize) -> (f64, f64) {
        let size = values.len() / batches;
        let means: Vec<f64> = values
            .chunks_exact(size)
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect();
        let m = means.iter().sum::<f64>() / means.len() as f64;
        let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (means.len() - 1) as f64;
        (m, (var / means.len() as f64).sqrt())
    }

    #[test]
    fn coherent_modulus_is_constant() {
        let m = FieldModel::coherent(1e6, 300e-9);
        let tr = sample_trajectory(&m, 1e-3, 1e-9, 7).unwrap();
        let r0 = tr.samples[0].norm();
        assert!(tr.samples.iter().all(|e| (e.norm() - r0).abs() < 1e-12 * r0.max(1.0)));
        assert!((r0 - 1e3).abs() < 1e-9);
    }

    #[test]
    fn chaotic_zero_delay_g2_is_two() {
        let m = FieldModel::chaotic(1.0, 300e-9);
        let tr = sample_trajectory(&m, 20e-3, 10e-9, 11).unwrap();
        let i = tr.intensities();
        let mean = i.iter().sum::<f64>() / i.len() as f64;
        let sq: Vec<f64> = i.iter().map(|x| x * x / (mean * mean)).collect();
        let (g2, se) = batch_stats(&sq, 100);
        assert!((g2 - 2.0).abs() < 5.0 * se, "g2(0) = {g2} +- {se}");
    }

    #[test]
    fn siegert_relation_on_a_delay_grid() {
        let tau_c = 300e-9;
        let dt = 10e-9;
        let m = FieldModel::chaotic(1.0, tau_c);
        let tr = sample_trajectory(&m, 40e-3, dt, 3).unwrap();
        let i = tr.intensities();
        let mean = i.iter().sum::<f64>() / i.len() as f64;
        for lag in [0usize, 10, 30, 60, 150] {
            let prods: Vec<f64> = i[..i.len() - lag]
                .iter()
                .zip(&i[lag..])
                .map(|(a, b)| a * b / (mean * mean))
                .collect();
            let (g2, se) = batch_stats(&prods, 100);
            let expected = 1.0 + analytic_g1(&m, lag as f64 * dt).unwrap().norm_sqr();
            assert!(
                (g2 - expected).abs() < 5.0 * se,
                "lag {lag}: {g2} vs {expected} (se {se})"
            );
        }
    }

    #[test]
    fn coherent_g1_matches_numerical_autocorrelation() {
        let tau_c = 300e-9;
        let dt = 5e-9;
        let m = FieldModel::coherent(1.0, tau_c);
        let tr = sample_trajectory(&m, 20e-3, dt, 5).unwrap();
        let lag = 60;
        let prods: Vec<f64> = tr.samples[..tr.len() - lag]
            .iter()
            .zip(&tr.samples[lag..])
            .map(|(a, b)| (a.conj() * b).re)
            .collect();
        let (g1, se) = batch_stats(&prods, 100);
        let expected = analytic_g1(&m, tau_c).unwrap().re;
        assert!((expected - (-1.0f64).exp()).abs() < 1e-15);
        assert!((g1 - expected).abs() < 5.0 * se, "{g1} vs {expected} (se {se})");
    }

    #[test]
    fn mixture_at_rho_one_is_the_coherent_component() {
        let coh = FieldModel::coherent(2e5, 300e-9);
        let mix = FieldModel::mixture(1.0, coh.clone(), FieldModel::chaotic(2e5, 300e-9));
        let a = sample_trajectory(&coh, 50e-6, 5e-9, 99).unwrap();
        let b = sample_trajectory(&mix, 50e-6, 5e-9, 99).unwrap();
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn generation_is_deterministic() {
        let m = FieldModel::two_mode(1e5, 0.3, 20e6, 300e-9);
        let a = sample_trajectory(&m, 20e-6, 5e-9, 1234).unwrap();
        let b = sample_trajectory(&m, 20e-6, 5e-9, 1234).unwrap();
        let c = sample_trajectory(&m, 20e-6, 5e-9, 1235).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn mean_intensity_converges() {
        let m = FieldModel::mixture(0.4, FieldModel::coherent(3.0, 200e-9), FieldModel::chaotic(3.0, 200e-9));
        let tr = sample_trajectory(&m, 20e-3, 10e-9, 8).unwrap();
        let (mean, se) = batch_stats(&tr.intensities(), 100);
        assert!((mean - 3.0).abs() < 5.0 * se, "{mean} +- {se}");
    }

    #[test]
    fn time_step_resolves_the_mode_beat() {
        assert_eq!(FieldModel::coherent(1.0, 300e-9).max_time_step(), 15e-9);
        // a 20 MHz beat needs 4 samples per 50 ns period
        let m = FieldModel::two_mode(1.0, 0.5, 20e6, 300e-9);
        assert!((m.max_time_step() - 12.5e-9).abs() < 1e-21);
        assert!(check_resolution(&m, 12.5e-9).is_ok());
        assert!(check_resolution(&m, 15e-9).is_err());
        // slow beats leave the coherence limit in charge
        assert_eq!(FieldModel::two_mode(1.0, 0.5, 1e6, 300e-9).max_time_step(), 15e-9);
    }

    #[test]
    fn rejects_bad_sampling() {
        let m = FieldModel::coherent(1.0, 300e-9);
        assert!(sample_trajectory(&m, 1e-6, 20e-9, 0).is_err());
        assert!(sample_trajectory(&m, 0.0, 1e-9, 0).is_err());
        assert!(sample_trajectory(&m, 5e-9, 1e-9, 0).is_err());
        assert!(sample_trajectory(&m, 1e-6, -1e-9, 0).is_err());
    }

    #[test]
    fn rejects_invalid_models() {
        assert!(FieldModel::coherent(-1.0, 1e-7).validate().is_err());
        assert!(FieldModel::chaotic(1.0, 0.0).validate().is_err());
        let bad_rho = FieldModel::mixture(1.2, FieldModel::coherent(1.0, 1e-7), FieldModel::chaotic(1.0, 1e-7));
        assert!(bad_rho.validate().is_err());
        let unequal = FieldModel::mixture(0.5, FieldModel::coherent(1.0, 1e-7), FieldModel::chaotic(2.0, 1e-7));
        assert!(unequal.validate().is_err());
        let bad_sum = FieldModel::TwoMode {
            intensity: 1.0,
            r_alpha: 0.5,
            r_beta: 0.6,
            detuning: 0.0,
            coherence_time_alpha: 1e-7,
            coherence_time_beta: 1e-7,
        };
        assert!(bad_sum.validate().is_err());
        assert!(FieldModel::uncorrelated_with_g2(1.0, 2.5, 1e-7).is_err());
    }

    #[test]
    fn analytic_g1_limits() {
        let m = FieldModel::chaotic(1.0, 300e-9);
        assert_eq!(analytic_g1(&m, 0.0).unwrap(), Complex64::new(1.0, 0.0));
        assert!(analytic_g1(&m, 1.0).unwrap().norm() < 1e-300);
        let mix = FieldModel::mixture(0.5, FieldModel::coherent(1.0, 1e-7), FieldModel::chaotic(1.0, 1e-7));
        assert!(analytic_g1(&mix, 0.0).is_err());
    }

    #[test]
    fn mixture_zero_endpoints_and_value() {
        assert!((analytic_g2x_mixture_zero(0.7, 2.0).unwrap() - 0.755).abs() < 1e-12);
        assert_eq!(analytic_g2x_mixture_zero(0.0, 2.0).unwrap(), 1.0);
        for k in 0..=40 {
            let g = k as f64 * 0.1;
            assert!((analytic_g2x_mixture_zero(1.0, g).unwrap() - 0.5).abs() < 1e-15);
            assert!((analytic_g2x_mixture_zero(0.0, g).unwrap() - g / 2.0).abs() < 1e-15);
        }
        assert!(analytic_g2x_mixture_zero(-0.1, 1.0).is_err());
        assert!(analytic_g2x_mixture_zero(0.5, -1.0).is_err());
    }

    #[test]
    fn curve_reproduces_pure_source_limits() {
        let delta = 900e-9;
        let coh = FieldModel::coherent(1.0, 30e-9);
        let cha = FieldModel::chaotic(1.0, 30e-9);
        let c = analytic_g2x_curve(&coh, &[0.0, 2e-6], delta).unwrap();
        assert!((c[0] - 0.5).abs() < 1e-12);
        assert!((c[1] - 1.0).abs() < 1e-12);
        let h = analytic_g2x_curve(&cha, &[0.0, delta, -delta], delta).unwrap();
        assert!((h[0] - 1.0).abs() < 1e-12);
        assert!((h[1] - 1.25).abs() < 1e-12);
        assert!((h[2] - 1.25).abs() < 1e-12);
        assert!(analytic_g2x_curve(&cha, &[0.0], 200e-9).is_err());
    }

    #[test]
    fn curve_at_zero_matches_mixture_formula() {
        let delta = 900e-9;
        let tau = 20e-9;
        for &rho in &[0.0, 0.1, 0.35, 0.5, 0.8, 1.0] {
            for &g in &[1.0, 1.25, 1.5, 1.75, 2.0] {
                let unc = FieldModel::uncorrelated_with_g2(1.0, g, tau).unwrap();
                let m = FieldModel::mixture(rho, FieldModel::coherent(1.0, tau), unc);
                let curve = analytic_g2x_curve(&m, &[0.0], delta).unwrap()[0];
                let zero = analytic_g2x_mixture_zero(rho, g).unwrap();
                assert!((curve - zero).abs() < 1e-12, "rho {rho} g {g}: {curve} vs {zero}");
            }
        }
    }

    #[test]
    fn two_mode_dip_depends_only_on_power_fractions() {
        let delta = 900e-9;
        let m = FieldModel::two_mode(1.0, 0.5, 20e6, 20e-9);
        let c = analytic_g2x_curve(&m, &[0.0, 5e-9], delta).unwrap();
        assert!((c[0] - 0.75).abs() < 1e-12);
        let single = FieldModel::coherent(1.0, 20e-9);
        let s = analytic_g2x_curve(&single, &[5e-9], delta).unwrap();
        // 1 - A |g1|^2 with A = (r_a^2 + r_b^2) / 2 = 1/4 versus 1/2
        assert!(((1.0 - c[1]) - 0.5 * (1.0 - s[0])).abs() < 1e-12);
    }
}
