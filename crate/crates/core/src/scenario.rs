//! Scenario files and the commands behind the `g2x` binary.
//!
//! A scenario is a TOML document describing the source, the interferometer,
//! both detectors, the simulation length and the analysis settings. Every
//! key has a default taken from the reference apparatus (Δ = 900 ns, 2 ns
//! timestamps, 2 ns bins, ±2 µs window), so a minimal file only names the
//! source:
//!
//! ```toml
//! [source]
//! kind = "coherent"
//! rate = 2e5
//! ```

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::correlator::{cross_correlate, CorrelationHistogram};
use crate::error::{Error, Result};
use crate::inference::{
    delta_exclusions, fit_dip, propagate_bounds, unc_g2_region, BoundSummary, DipFit, FitOptions, Propagation,
    QUADRATURE_POINTS,
};
use crate::lightfield::{check_resolution, FieldModel};
use crate::optics::{simulate_streams, Channel, DetectorConfig, InterferometerConfig, TimestampStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    Coherent,
    Chaotic,
    Mixture,
    TwoMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub kind: SourceKind,
    /// Photon rate at the interferometer input (counts/s).
    pub rate: f64,
    #[serde(default = "default_coherence_time")]
    pub coherence_time: f64,
    /// Coherent fraction of a mixture.
    #[serde(default = "one")]
    pub rho: f64,
    /// Zero-delay g2 of the uncorrelated part of a mixture, in [1, 2].
    #[serde(default = "two")]
    pub unc_g2: f64,
    /// Defaults to `coherence_time`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unc_coherence_time: Option<f64>,
    /// Power fraction of mode α in a two-mode source.
    #[serde(default = "half")]
    pub r_alpha: f64,
    /// Frequency separation of the two modes (Hz).
    #[serde(default = "default_detuning")]
    pub detuning: f64,
    /// Defaults to `coherence_time`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coherence_time_beta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    /// Integration time T (s).
    pub duration: f64,
    /// Field sampling step (s); the coarsest step the source allows when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            duration: 10.0,
            dt: None,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrelatorConfig {
    pub bin_width: f64,
    pub window: f64,
}

impl Default for CorrelatorConfig {
    fn default() -> Self {
        CorrelatorConfig {
            bin_width: 2e-9,
            window: 2e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PropagationKind {
    Quadrature,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Largest |τ| used in the fit; the whole histogram when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<f64>,
    /// Exclude the bunching features at ±Δ.
    pub exclude_delta: bool,
    pub confidence: f64,
    pub propagation: PropagationKind,
    pub quadrature_points: usize,
    pub monte_carlo_samples: usize,
    pub monte_carlo_seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            window: None,
            exclude_delta: true,
            confidence: 0.9,
            propagation: PropagationKind::Quadrature,
            quadrature_points: QUADRATURE_POINTS,
            monte_carlo_samples: 1_000_000,
            monte_carlo_seed: 0,
        }
    }
}

impl FitConfig {
    pub fn propagation(&self) -> Propagation {
        match self.propagation {
            PropagationKind::Quadrature => Propagation::Quadrature {
                points: self.quadrature_points,
            },
            PropagationKind::MonteCarlo => Propagation::MonteCarlo {
                samples: self.monte_carlo_samples,
                seed: self.monte_carlo_seed,
            },
        }
    }
}

/// Detector settings as written in a scenario; the seed is derived from
/// the simulation seed unless given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub efficiency: f64,
    pub resolution: f64,
    pub dead_time: f64,
    pub dark_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for DetectorSection {
    fn default() -> Self {
        let d = DetectorConfig::default();
        DetectorSection {
            efficiency: d.efficiency,
            resolution: d.resolution,
            dead_time: d.dead_time,
            dark_rate: d.dark_rate,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Prefix of the files written by `simulate`.
    pub prefix: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            prefix: PathBuf::from("g2x"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub source: SourceConfig,
    #[serde(default)]
    pub interferometer: InterferometerConfig,
    #[serde(default)]
    pub detector_a: DetectorSection,
    #[serde(default)]
    pub detector_b: DetectorSection,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub correlator: CorrelatorConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_coherence_time() -> f64 {
    300e-9
}
fn default_detuning() -> f64 {
    20e6
}
fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn half() -> f64 {
    0.5
}

/// Line of `key` inside `[section]`, 1-based.
fn locate(src: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut header_line = None;
    for (i, line) in src.lines().enumerate() {
        let t = line.trim();
        if let Some(name) = t.strip_prefix('[').and_then(|r| r.split(']').next()) {
            current = name.trim().to_string();
            if current == section {
                header_line = Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some(rest) = t.strip_prefix(key) {
                if rest.trim_start().starts_with('=') {
                    return Some(i + 1);
                }
            }
        }
    }
    header_line
}

/// Attaches source locations to validation failures.
struct Validator<'a> {
    origin: &'a str,
    src: Option<&'a str>,
}

impl Validator<'_> {
    fn fail(&self, section: &str, key: &str, msg: impl std::fmt::Display) -> Error {
        let line = self.src.and_then(|s| locate(s, section, key));
        let at = match line {
            Some(l) => format!("{}:{l}", self.origin),
            None => self.origin.to_string(),
        };
        Error::InvalidParameter(format!("{at}: {section}.{key}: {msg}"))
    }

    fn wrap(&self, section: &str, key: &str, r: Result<()>) -> Result<()> {
        r.map_err(|e| match e {
            Error::InvalidParameter(m) => self.fail(section, key, m),
            other => other,
        })
    }
}

fn mix_seed(seed: u64, k: u64) -> u64 {
    let mut z = seed.wrapping_add(k.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl ScenarioConfig {
    /// Parses and validates a scenario; `origin` names the document in messages.
    pub fn from_toml_str(src: &str, origin: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(src)
            .map_err(|e| Error::InvalidParameter(format!("{origin}: {}", e.to_string().trim_end())))?;
        cfg.check(&Validator { origin, src: Some(src) })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)?;
        Self::from_toml_str(&src, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// A coherent-source scenario with all other settings at their defaults.
    pub fn coherent(rate: f64) -> Self {
        ScenarioConfig {
            source: SourceConfig {
                kind: SourceKind::Coherent,
                rate,
                coherence_time: default_coherence_time(),
                rho: 1.0,
                unc_g2: 2.0,
                unc_coherence_time: None,
                r_alpha: 0.5,
                detuning: default_detuning(),
                coherence_time_beta: None,
            },
            interferometer: InterferometerConfig::default(),
            detector_a: DetectorSection::default(),
            detector_b: DetectorSection::default(),
            simulation: SimulationConfig::default(),
            correlator: CorrelatorConfig::default(),
            fit: FitConfig::default(),
            output: OutputConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.check(&Validator {
            origin: "scenario",
            src: None,
        })
    }

    fn check(&self, v: &Validator) -> Result<()> {
        let s = &self.source;
        if !(s.rate.is_finite() && s.rate > 0.0) {
            return Err(v.fail("source", "rate", format!("must be positive, got {}", s.rate)));
        }
        if !(0.0..=1.0).contains(&s.rho) {
            return Err(v.fail("source", "rho", format!("must be in [0, 1], got {}", s.rho)));
        }
        if !(1.0..=2.0).contains(&s.unc_g2) {
            return Err(v.fail("source", "unc_g2", format!("must be in [1, 2], got {}", s.unc_g2)));
        }
        if !(0.0..=1.0).contains(&s.r_alpha) {
            return Err(v.fail("source", "r_alpha", format!("must be in [0, 1], got {}", s.r_alpha)));
        }
        for (key, value) in [
            ("coherence_time", Some(s.coherence_time)),
            ("unc_coherence_time", s.unc_coherence_time),
            ("coherence_time_beta", s.coherence_time_beta),
        ] {
            if let Some(t) = value {
                if !(t.is_finite() && t > 0.0) {
                    return Err(v.fail("source", key, format!("must be positive, got {t}")));
                }
            }
        }
        if !s.detuning.is_finite() {
            return Err(v.fail("source", "detuning", "must be finite"));
        }
        self.field_model()?.validate()?;

        let i = &self.interferometer;
        v.wrap("interferometer", "delay", i.validate())?;
        for (name, d) in [("detector_a", &self.detector_a), ("detector_b", &self.detector_b)] {
            let key = if !(d.efficiency > 0.0 && d.efficiency <= 1.0) {
                "efficiency"
            } else if !(d.resolution > 0.0) {
                "resolution"
            } else if !(d.dead_time >= 0.0) {
                "dead_time"
            } else {
                "dark_rate"
            };
            v.wrap(name, key, self.detector(Channel::A, d).validate())?;
        }
        if self.detector_a.resolution != self.detector_b.resolution {
            return Err(v.fail("detector_b", "resolution", "must equal detector_a.resolution"));
        }

        let sim = &self.simulation;
        if !(sim.duration.is_finite() && sim.duration > i.delay) {
            return Err(v.fail(
                "simulation",
                "duration",
                format!(
                    "must exceed the interferometer delay {:e} s, got {}",
                    i.delay, sim.duration
                ),
            ));
        }
        if let Some(dt) = sim.dt {
            if !(dt.is_finite() && dt > 0.0) {
                return Err(v.fail("simulation", "dt", format!("must be positive, got {dt}")));
            }
        }
        let dt = self.dt();
        if let Err(e) = check_resolution(&self.field_model()?, dt) {
            return Err(v.fail("simulation", "dt", e));
        }
        if sim.duration < 10.0 * dt {
            return Err(v.fail("simulation", "duration", "must cover at least ten samples"));
        }

        let c = &self.correlator;
        if !(c.bin_width >= self.detector_a.resolution * (1.0 - 1e-9)) {
            return Err(v.fail(
                "correlator",
                "bin_width",
                format!("must be at least the timestamp resolution, got {}", c.bin_width),
            ));
        }
        if !(c.window >= 10.0 * c.bin_width) {
            return Err(v.fail(
                "correlator",
                "window",
                format!("must be at least ten bin widths, got {}", c.window),
            ));
        }

        let f = &self.fit;
        if !(f.confidence > 0.0 && f.confidence < 1.0) {
            return Err(v.fail("fit", "confidence", format!("must be in (0, 1), got {}", f.confidence)));
        }
        if let Some(w) = f.window {
            if !(w > 0.0) {
                return Err(v.fail("fit", "window", format!("must be positive, got {w}")));
            }
        }
        if f.quadrature_points < 2 {
            return Err(v.fail("fit", "quadrature_points", "must be at least 2"));
        }
        if f.monte_carlo_samples < 2 {
            return Err(v.fail("fit", "monte_carlo_samples", "must be at least 2"));
        }
        Ok(())
    }

    /// The source as a field model; intensities are photon rates.
    pub fn field_model(&self) -> Result<FieldModel> {
        let s = &self.source;
        Ok(match s.kind {
            SourceKind::Coherent => FieldModel::coherent(s.rate, s.coherence_time),
            SourceKind::Chaotic => FieldModel::chaotic(s.rate, s.coherence_time),
            SourceKind::Mixture => {
                let tau_unc = s.unc_coherence_time.unwrap_or(s.coherence_time);
                let unc = if s.unc_g2 == 2.0 {
                    FieldModel::chaotic(s.rate, tau_unc)
                } else if s.unc_g2 == 1.0 {
                    FieldModel::coherent(s.rate, tau_unc)
                } else {
                    FieldModel::uncorrelated_with_g2(s.rate, s.unc_g2, tau_unc)?
                };
                FieldModel::mixture(s.rho, FieldModel::coherent(s.rate, s.coherence_time), unc)
            }
            SourceKind::TwoMode => FieldModel::TwoMode {
                intensity: s.rate,
                r_alpha: s.r_alpha,
                r_beta: 1.0 - s.r_alpha,
                detuning: s.detuning,
                coherence_time_alpha: s.coherence_time,
                coherence_time_beta: s.coherence_time_beta.unwrap_or(s.coherence_time),
            },
        })
    }

    pub fn dt(&self) -> f64 {
        self.simulation
            .dt
            .unwrap_or_else(|| self.field_model().map_or(f64::NAN, |m| m.max_time_step()))
    }

    fn detector(&self, channel: Channel, d: &DetectorSection) -> DetectorConfig {
        let k = match channel {
            Channel::A => 1,
            Channel::B => 2,
        };
        DetectorConfig {
            efficiency: d.efficiency,
            resolution: d.resolution,
            dead_time: d.dead_time,
            dark_rate: d.dark_rate,
            seed: d.seed.unwrap_or_else(|| mix_seed(self.simulation.seed, k)),
        }
    }

    pub fn detector_configs(&self) -> (DetectorConfig, DetectorConfig) {
        (
            self.detector(Channel::A, &self.detector_a),
            self.detector(Channel::B, &self.detector_b),
        )
    }

    pub fn analysis_options(&self) -> AnalysisOptions {
        AnalysisOptions {
            delta: self.fit.exclude_delta.then_some(self.interferometer.delay),
            confidence: self.fit.confidence,
            propagation: self.fit.propagation(),
            fit_window: self.fit.window,
        }
    }
}

/// Both detector streams of a simulated scenario.
pub fn simulate(cfg: &ScenarioConfig) -> Result<(TimestampStream, TimestampStream)> {
    cfg.validate()?;
    let (a, b) = cfg.detector_configs();
    simulate_streams(
        &cfg.field_model()?,
        &cfg.interferometer,
        &a,
        &b,
        cfg.simulation.duration,
        cfg.dt(),
        cfg.simulation.seed,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSummary {
    pub path_a: PathBuf,
    pub path_b: PathBuf,
    pub counts: [usize; 2],
    pub rates: [f64; 2],
}

impl std::fmt::Display for SimulationSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "channel A: {} events ({:.6e} /s) -> {}",
            self.counts[0],
            self.rates[0],
            self.path_a.display()
        )?;
        write!(
            f,
            "channel B: {} events ({:.6e} /s) -> {}",
            self.counts[1],
            self.rates[1],
            self.path_b.display()
        )
    }
}

/// Stream file names for a prefix: `<prefix>_A.pts` and `<prefix>_B.pts`.
pub fn stream_paths(prefix: &Path) -> (PathBuf, PathBuf) {
    let name = |c: &str| {
        let mut s = prefix.as_os_str().to_owned();
        s.push(format!("_{c}.pts"));
        PathBuf::from(s)
    };
    (name("A"), name("B"))
}

pub fn cmd_simulate(cfg: &ScenarioConfig, prefix: &Path) -> Result<SimulationSummary> {
    let (a, b) = simulate(cfg)?;
    let (path_a, path_b) = stream_paths(prefix);
    a.write_file(&path_a)?;
    b.write_file(&path_b)?;
    Ok(SimulationSummary {
        path_a,
        path_b,
        counts: [a.len(), b.len()],
        rates: [a.rate(), b.rate()],
    })
}

pub fn write_histogram(h: &CorrelationHistogram, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    h.write_text(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_histogram(path: &Path) -> Result<CorrelationHistogram> {
    CorrelationHistogram::read_text(BufReader::new(File::open(path)?))
}

pub fn cmd_correlate(
    path_a: &Path,
    path_b: &Path,
    bin_width: f64,
    window: f64,
    out: &Path,
) -> Result<CorrelationHistogram> {
    let a = TimestampStream::read_file(path_a, Channel::A)?;
    let b = TimestampStream::read_file(path_b, Channel::B)?;
    let h = cross_correlate(&a, &b, bin_width, window)?;
    write_histogram(&h, out)?;
    Ok(h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOptions {
    /// Interferometer delay whose bunching features are excluded.
    pub delta: Option<f64>,
    pub confidence: f64,
    pub propagation: Propagation,
    pub fit_window: Option<f64>,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            delta: Some(InterferometerConfig::default().delay),
            confidence: 0.9,
            propagation: Propagation::default(),
            fit_window: None,
        }
    }
}

/// Machine-readable outcome of one analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRecord {
    pub amplitude: f64,
    pub sigma_amplitude: f64,
    pub coherence_time: f64,
    pub sigma_coherence_time: f64,
    pub chi2_reduced: f64,
    pub g2x_zero: f64,
    pub confidence: f64,
    pub method: String,
    /// Grid points or Monte-Carlo samples.
    pub method_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub rho_upper: BoundSummary,
    pub rho_lower: BoundSummary,
}

impl AnalysisRecord {
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Fit, exclusions and the fit itself for plotting alongside a record.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub fit: DipFit,
    pub exclude: Vec<std::ops::Range<f64>>,
    pub record: AnalysisRecord,
}

pub fn analyze_histogram(h: &CorrelationHistogram, opts: &AnalysisOptions, seed: Option<u64>) -> Result<Analysis> {
    let exclude = match opts.delta {
        Some(delta) => delta_exclusions(h, delta)?,
        None => Vec::new(),
    };
    let fit = fit_dip(
        h,
        &FitOptions {
            window: opts.fit_window,
            exclude: exclude.clone(),
        },
    )?;
    let bounds = propagate_bounds(&fit, opts.confidence, opts.propagation)?;
    let (method, method_size, seed) = match opts.propagation {
        Propagation::Quadrature { points } => ("quadrature", points, seed),
        Propagation::MonteCarlo { samples, seed } => ("monte-carlo", samples, Some(seed)),
    };
    let record = AnalysisRecord {
        amplitude: fit.amplitude,
        sigma_amplitude: fit.sigma_amplitude,
        coherence_time: fit.coherence_time,
        sigma_coherence_time: fit.sigma_coherence_time,
        chi2_reduced: fit.chi2_reduced,
        g2x_zero: fit.g2x_zero(),
        confidence: opts.confidence,
        method: method.to_string(),
        method_size,
        seed,
        rho_upper: bounds.upper,
        rho_lower: bounds.lower,
    };
    Ok(Analysis { fit, exclude, record })
}

/// Plot data: one row per bin with the fitted curve and whether the bin
/// entered the fit.
pub fn write_plot_data<W: Write>(h: &CorrelationHistogram, a: &Analysis, mut w: W) -> Result<()> {
    writeln!(w, "# tau_s\tg\tsigma\tfit\tincluded")?;
    for i in 0..h.len() {
        let tau = h.centers[i];
        let inside = tau.abs() <= a.fit.window * (1.0 + 1e-12) && !a.exclude.iter().any(|r| r.contains(&tau));
        writeln!(
            w,
            "{:e}\t{:e}\t{:e}\t{:e}\t{}",
            tau,
            h.values[i],
            h.errors[i],
            a.fit.evaluate(tau),
            u8::from(inside)
        )?;
    }
    Ok(())
}

pub fn cmd_analyze(
    hist: &Path,
    opts: &AnalysisOptions,
    out: Option<&Path>,
    plot: Option<&Path>,
) -> Result<AnalysisRecord> {
    let h = read_histogram(hist)?;
    let a = analyze_histogram(&h, opts, None)?;
    if let Some(path) = out {
        std::fs::write(path, a.record.to_toml_string()?)?;
    }
    if let Some(path) = plot {
        let mut w = BufWriter::new(File::create(path)?);
        write_plot_data(&h, &a, &mut w)?;
        w.flush()?;
    }
    Ok(a.record)
}

/// Simulates, correlates and analyzes one scenario in memory.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<(CorrelationHistogram, Analysis)> {
    let (a, b) = simulate(cfg)?;
    let h = cross_correlate(&a, &b, cfg.correlator.bin_width, cfg.correlator.window)?;
    let analysis = analyze_histogram(&h, &cfg.analysis_options(), Some(cfg.simulation.seed))?;
    Ok((h, analysis))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Rho,
    RAlpha,
    TauC,
    Rate,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rho" => Ok(SweepAxis::Rho),
            "r_alpha" => Ok(SweepAxis::RAlpha),
            "tau_c" => Ok(SweepAxis::TauC),
            "rate" => Ok(SweepAxis::Rate),
            other => Err(Error::InvalidParameter(format!(
                "unknown sweep axis {other:?}; expected rho, r_alpha, tau_c or rate"
            ))),
        }
    }
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Rho => "rho",
            SweepAxis::RAlpha => "r_alpha",
            SweepAxis::TauC => "tau_c",
            SweepAxis::Rate => "rate",
        }
    }

    fn apply(self, cfg: &mut ScenarioConfig, value: f64) {
        match self {
            SweepAxis::Rho => cfg.source.rho = value,
            SweepAxis::RAlpha => cfg.source.r_alpha = value,
            SweepAxis::TauC => cfg.source.coherence_time = value,
            SweepAxis::Rate => cfg.source.rate = value,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub seed: u64,
    pub counts: [usize; 2],
    pub record: AnalysisRecord,
}

/// Runs the template once per axis value; point `i` uses seed `seed + i`.
pub fn cmd_sweep(template: &ScenarioConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::InvalidParameter("sweep needs at least one value".into()));
    }
    values
        .iter()
        .enumerate()
        .map(|(i, &value)| {
            let mut cfg = template.clone();
            axis.apply(&mut cfg, value);
            cfg.simulation.seed = template.simulation.seed.wrapping_add(i as u64);
            cfg.validate()
                .map_err(|e| Error::InvalidParameter(format!("sweep point {} = {value}: {e}", axis.name())))?;
            let (a, b) = simulate(&cfg)?;
            let h = cross_correlate(&a, &b, cfg.correlator.bin_width, cfg.correlator.window)?;
            let analysis = analyze_histogram(&h, &cfg.analysis_options(), Some(cfg.simulation.seed))?;
            Ok(SweepRow {
                value,
                seed: cfg.simulation.seed,
                counts: [a.len(), b.len()],
                record: analysis.record,
            })
        })
        .collect()
}

pub fn write_sweep_table<W: Write>(axis: SweepAxis, rows: &[SweepRow], mut w: W) -> Result<()> {
    writeln!(
        w,
        "# {}\tseed\tcounts_a\tcounts_b\tA\tsigma_A\ttau_c\tsigma_tau\tchi2_red\t\
         upper_mean\tupper_lo\tupper_hi\tlower_mean\tlower_lo\tlower_hi",
        axis.name()
    )?;
    for r in rows {
        let x = &r.record;
        writeln!(
            w,
            "{:e}\t{}\t{}\t{}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}",
            r.value,
            r.seed,
            r.counts[0],
            r.counts[1],
            x.amplitude,
            x.sigma_amplitude,
            x.coherence_time,
            x.sigma_coherence_time,
            x.chi2_reduced,
            x.rho_upper.mean,
            x.rho_upper.ci_lo,
            x.rho_upper.ci_hi,
            x.rho_lower.mean,
            x.rho_lower.ci_lo,
            x.rho_lower.ci_hi,
        )?;
    }
    Ok(())
}

/// Allowed-region boundaries of `g2_unc(0)` over `g2x(0) ∈ [0, max]`;
/// the upper column is `nan` where no upper bound exists.
pub fn region_table(points: usize, max: f64) -> Result<String> {
    if points < 2 || !(max > 0.0 && max.is_finite()) {
        return Err(Error::InvalidParameter(
            "region needs at least two points and a positive range".into(),
        ));
    }
    let mut out = String::from("# g2x0\tunc_g2_lower\tunc_g2_upper\n");
    for i in 0..points {
        let x = max * i as f64 / (points - 1) as f64;
        let (lo, hi) = unc_g2_region(x);
        let _ = writeln!(out, "{x:e}\t{lo:e}\t{:e}", hi.unwrap_or(f64::NAN));
    }
    Ok(out)
}
