//! Asymmetric Mach-Zehnder interferometer and photodetection.
//!
//! The interferometer maps an input field onto two output ports,
//! `E_A(t) = (E(t) + E(t+Δ))/√2` and `E_B(t) = (E(t) - E(t+Δ))/√2` for a
//! balanced splitter. Each output intensity drives a doubly stochastic
//! Poisson detector whose events are quantized to the timestamp resolution.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lightfield::{FieldGenerator, FieldModel, FieldTrajectory};

pub const PTS_MAGIC: &[u8; 4] = b"PTS1";
const PS_PER_S: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InterferometerConfig {
    /// Propagation delay between the two arms (s).
    pub delay: f64,
    /// Power splitting ratio of the beamsplitters.
    pub splitting_ratio: f64,
    pub visibility: f64,
}

impl Default for InterferometerConfig {
    fn default() -> Self {
        InterferometerConfig {
            delay: 900e-9,
            splitting_ratio: 0.5,
            visibility: 1.0,
        }
    }
}

impl InterferometerConfig {
    pub fn with_delay(delay: f64) -> Self {
        InterferometerConfig {
            delay,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delay.is_finite() && self.delay > 0.0) {
            return Err(invalid(format!(
                "interferometer delay must be positive, got {}",
                self.delay
            )));
        }
        if !(self.splitting_ratio > 0.0 && self.splitting_ratio < 1.0) {
            return Err(invalid(format!(
                "splitting ratio must be in (0, 1), got {}",
                self.splitting_ratio
            )));
        }
        if !(0.0..=1.0).contains(&self.visibility) {
            return Err(invalid(format!(
                "visibility must be in [0, 1], got {}",
                self.visibility
            )));
        }
        Ok(())
    }

    /// Delay in whole samples of `dt`, rounded to the nearest sample.
    pub fn delay_samples(&self, dt: f64) -> Result<usize> {
        let d = (self.delay / dt).round();
        if d < 1.0 {
            return Err(invalid(format!(
                "delay {:e} s is shorter than half a sample of {dt:e} s",
                self.delay
            )));
        }
        Ok(d as usize)
    }

    fn amplitudes(&self) -> (f64, f64) {
        (self.splitting_ratio.sqrt(), (1.0 - self.splitting_ratio).sqrt())
    }
}

/// Combines `E(t)` and `E(t+Δ)` into the two output amplitudes.
#[inline]
fn combine(early: Complex64, late: Complex64, a: f64, b: f64, visibility: f64) -> (Complex64, Complex64) {
    let late = late * visibility;
    (early * a + late * b, early * b - late * a)
}

/// Output fields of the interferometer over the overlap window of length
/// `duration - Δ`.
pub fn mzi_transform(
    input: &FieldTrajectory,
    cfg: &InterferometerConfig,
) -> Result<(FieldTrajectory, FieldTrajectory)> {
    cfg.validate()?;
    let d = cfg.delay_samples(input.dt)?;
    if input.len() <= d {
        return Err(invalid(format!(
            "trajectory of {:e} s is shorter than the delay {:e} s",
            input.duration(),
            cfg.delay
        )));
    }
    let (a, b) = cfg.amplitudes();
    let (out_a, out_b): (Vec<_>, Vec<_>) = input.samples[..input.len() - d]
        .iter()
        .zip(&input.samples[d..])
        .map(|(&e0, &e1)| combine(e0, e1, a, b, cfg.visibility))
        .unzip();
    let wrap = |samples| FieldTrajectory {
        dt: input.dt,
        start: input.start,
        samples,
        seed: input.seed,
    };
    Ok((wrap(out_a), wrap(out_b)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub efficiency: f64,
    /// Timestamp resolution (s).
    pub resolution: f64,
    /// Non-paralyzable dead time (s).
    pub dead_time: f64,
    /// Dark-count rate (counts/s).
    pub dark_rate: f64,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            efficiency: 1.0,
            resolution: 2e-9,
            dead_time: 0.0,
            dark_rate: 0.0,
            seed: 0,
        }
    }
}

impl DetectorConfig {
    pub fn with_seed(seed: u64) -> Self {
        DetectorConfig {
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(invalid(format!(
                "detector efficiency must be in (0, 1], got {}",
                self.efficiency
            )));
        }
        if !(self.resolution.is_finite() && self.resolution > 0.0) {
            return Err(invalid(format!(
                "timestamp resolution must be positive, got {}",
                self.resolution
            )));
        }
        if self.resolution_ps() == 0 {
            return Err(invalid("timestamp resolution must be at least one picosecond"));
        }
        if !(self.dead_time >= 0.0 && self.dead_time.is_finite()) {
            return Err(invalid(format!(
                "dead time must be non-negative, got {}",
                self.dead_time
            )));
        }
        if !(self.dark_rate >= 0.0 && self.dark_rate.is_finite()) {
            return Err(invalid(format!(
                "dark-count rate must be non-negative, got {}",
                self.dark_rate
            )));
        }
        Ok(())
    }

    pub fn resolution_ps(&self) -> u64 {
        (self.resolution * PS_PER_S).round() as u64
    }

    /// Dead time in whole ticks, rounded up.
    pub fn dead_ticks(&self) -> u64 {
        let res = self.resolution_ps() as f64 / PS_PER_S;
        (self.dead_time / res - 1e-9).ceil().max(0.0) as u64
    }
}

/// Sorted, quantized detection times of one channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimestampStream {
    pub channel: Channel,
    /// Event times in units of the resolution.
    pub ticks: Vec<u64>,
    pub resolution_ps: u64,
    pub integration_ps: u64,
}

impl TimestampStream {
    pub fn new(channel: Channel, ticks: Vec<u64>, resolution_ps: u64, integration_ps: u64) -> Result<Self> {
        let s = TimestampStream {
            channel,
            ticks,
            resolution_ps,
            integration_ps,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution_ps == 0 {
            return Err(Error::InvalidInput("timestamp resolution is zero".into()));
        }
        if self.ticks.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidInput("timestamps are not sorted".into()));
        }
        if let Some(&last) = self.ticks.last() {
            if last >= self.end_tick() {
                return Err(Error::InvalidInput(format!(
                    "timestamp {last} lies beyond the integration window of {} ticks",
                    self.end_tick()
                )));
            }
        }
        Ok(())
    }

    /// `ceil(T / resolution)`: first tick outside the record.
    pub fn end_tick(&self) -> u64 {
        self.integration_ps.div_ceil(self.resolution_ps)
    }

    pub fn resolution(&self) -> f64 {
        self.resolution_ps as f64 / PS_PER_S
    }

    pub fn integration_time(&self) -> f64 {
        self.integration_ps as f64 / PS_PER_S
    }

    pub fn len(&self) -> usize {
        self.ticks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ticks.is_empty()
    }

    /// Mean count rate (counts/s).
    pub fn rate(&self) -> f64 {
        self.ticks.len() as f64 / self.integration_time()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(PTS_MAGIC)?;
        w.write_all(&self.resolution_ps.to_le_bytes())?;
        w.write_all(&self.integration_ps.to_le_bytes())?;
        w.write_all(&(self.ticks.len() as u64).to_le_bytes())?;
        for t in &self.ticks {
            w.write_all(&t.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R, channel: Channel) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format("file too short for a PTS1 header".into()))?;
        if &magic != PTS_MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}, expected \"PTS1\"")));
        }
        let mut word = [0u8; 8];
        let mut next = |what: &str| -> Result<u64> {
            r.read_exact(&mut word)
                .map_err(|_| Error::Format(format!("truncated file while reading {what}")))?;
            Ok(u64::from_le_bytes(word))
        };
        let resolution_ps = next("resolution")?;
        let integration_ps = next("integration time")?;
        let count = next("event count")?;
        let mut ticks = Vec::with_capacity(count.min(1 << 28) as usize);
        for i in 0..count {
            ticks.push(next(&format!("event {i}"))?);
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after the last event".into()));
        }
        let s = TimestampStream {
            channel,
            ticks,
            resolution_ps,
            integration_ps,
        };
        s.validate().map_err(|e| Error::Format(e.to_string()))?;
        Ok(s)
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn read_file(path: &Path, channel: Channel) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?), channel)
    }
}

/// Below this mean, counts are drawn by sequential inversion, which costs
/// one uniform and one `exp` per sample.
const SMALL_POISSON_MEAN: f64 = 10.0;

/// Poisson variate by inversion of the CDF at `u`.
fn small_poisson(mean: f64, u: f64) -> usize {
    let mut p = (-mean).exp();
    let mut cdf = p;
    let mut k = 0;
    while u > cdf && p > 0.0 {
        k += 1;
        p *= mean / k as f64;
        cdf += p;
    }
    k
}

/// Incremental detector fed one intensity sample at a time.
///
/// Within a sample the rate is taken as constant: the number of photons is
/// Poisson with mean `(η |E|² + dark) dt`, and each photon lands uniformly
/// inside the sample before quantization and dead-time filtering.
pub struct Detector {
    channel: Channel,
    efficiency: f64,
    dark_rate: f64,
    dt: f64,
    resolution: f64,
    resolution_ps: u64,
    integration_ps: u64,
    end_time: f64,
    end_tick: u64,
    dead_ticks: u64,
    index: u64,
    last: Option<u64>,
    rng: ChaCha8Rng,
    ticks: Vec<u64>,
    offsets: Vec<f64>,
}

impl Detector {
    pub fn new(channel: Channel, cfg: &DetectorConfig, dt: f64, integration_time: f64) -> Result<Self> {
        cfg.validate()?;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(invalid(format!("sample period must be positive, got {dt}")));
        }
        if !(integration_time.is_finite() && integration_time > 0.0) {
            return Err(invalid(format!(
                "integration time must be positive, got {integration_time}"
            )));
        }
        let resolution_ps = cfg.resolution_ps();
        let integration_ps = (integration_time * PS_PER_S).round() as u64;
        Ok(Detector {
            channel,
            efficiency: cfg.efficiency,
            dark_rate: cfg.dark_rate,
            dt,
            resolution: resolution_ps as f64 / PS_PER_S,
            resolution_ps,
            integration_ps,
            end_time: integration_time,
            end_tick: integration_ps.div_ceil(resolution_ps),
            dead_ticks: cfg.dead_ticks(),
            index: 0,
            last: None,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            ticks: Vec::new(),
            offsets: Vec::new(),
        })
    }

    /// Whether every sample inside the integration window has been seen.
    pub fn is_done(&self) -> bool {
        self.index as f64 * self.dt >= self.end_time
    }

    pub fn push(&mut self, intensity: f64) -> Result<()> {
        if !(intensity >= 0.0) {
            return Err(invalid(format!(
                "negative intensity {intensity} at sample {}",
                self.index
            )));
        }
        let start = self.index as f64 * self.dt;
        self.index += 1;
        if start >= self.end_time {
            return Ok(());
        }
        let mean = (self.efficiency * intensity + self.dark_rate) * self.dt;
        if mean <= 0.0 {
            return Ok(());
        }
        let count = if mean < SMALL_POISSON_MEAN {
            small_poisson(mean, self.rng.random::<f64>())
        } else {
            Poisson::new(mean)
                .map_err(|e| invalid(format!("bad Poisson mean {mean}: {e}")))?
                .sample(&mut self.rng) as usize
        };
        if count == 0 {
            return Ok(());
        }
        self.offsets.clear();
        for _ in 0..count {
            self.offsets.push(self.rng.random::<f64>());
        }
        self.offsets.sort_by(f64::total_cmp);
        for &u in &self.offsets {
            let t = start + u * self.dt;
            if t >= self.end_time {
                break;
            }
            let tick = ((t / self.resolution).floor() as u64).min(self.end_tick - 1);
            if let Some(prev) = self.last {
                if tick - prev < self.dead_ticks {
                    continue;
                }
            }
            self.last = Some(tick);
            self.ticks.push(tick);
        }
        Ok(())
    }

    pub fn finish(self) -> TimestampStream {
        TimestampStream {
            channel: self.channel,
            ticks: self.ticks,
            resolution_ps: self.resolution_ps,
            integration_ps: self.integration_ps,
        }
    }
}

/// Photodetection of an intensity record `|E|²` sampled every `dt`.
pub fn detect(
    intensity: &[f64],
    dt: f64,
    cfg: &DetectorConfig,
    integration_time: f64,
    channel: Channel,
) -> Result<TimestampStream> {
    if integration_time > intensity.len() as f64 * dt * (1.0 + 1e-12) {
        return Err(invalid(format!(
            "integration time {integration_time:e} s exceeds the record of {:e} s",
            intensity.len() as f64 * dt
        )));
    }
    let mut det = Detector::new(channel, cfg, dt, integration_time)?;
    for &i in intensity {
        if det.is_done() {
            break;
        }
        det.push(i)?;
    }
    Ok(det.finish())
}

/// Source, interferometer and both detectors run sample by sample.
///
/// Equivalent to [`crate::lightfield::sample_trajectory`] followed by
/// [`mzi_transform`] and [`detect`] on each port, but memory use is bounded
/// by the interferometer delay instead of the record length.
pub fn simulate_streams(
    model: &FieldModel,
    interferometer: &InterferometerConfig,
    detector_a: &DetectorConfig,
    detector_b: &DetectorConfig,
    integration_time: f64,
    dt: f64,
    seed: u64,
) -> Result<(TimestampStream, TimestampStream)> {
    interferometer.validate()?;
    let mut source = FieldGenerator::new(model, dt, seed)?;
    let d = interferometer.delay_samples(dt)?;
    let mut det_a = Detector::new(Channel::A, detector_a, dt, integration_time)?;
    let mut det_b = Detector::new(Channel::B, detector_b, dt, integration_time)?;
    let (a, b) = interferometer.amplitudes();
    let mut delay_line: Vec<Complex64> = (0..d).map(|_| source.next_sample()).collect();
    let mut slot = 0;
    while !(det_a.is_done() && det_b.is_done()) {
        let late = source.next_sample();
        let early = std::mem::replace(&mut delay_line[slot], late);
        slot = (slot + 1) % d;
        let (ea, eb) = combine(early, late, a, b, interferometer.visibility);
        det_a.push(ea.norm_sqr())?;
        det_b.push(eb.norm_sqr())?;
    }
    Ok((det_a.finish(), det_b.finish()))
}

/// Homogeneous Poisson stream at `rate` counts/s, for baselines and benchmarks.
pub fn poisson_stream(
    channel: Channel,
    rate: f64,
    integration_time: f64,
    resolution: f64,
    seed: u64,
) -> Result<TimestampStream> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(invalid(format!("rate must be positive, got {rate}")));
    }
    let cfg = DetectorConfig {
        resolution,
        seed,
        ..Default::default()
    };
    cfg.validate()?;
    let resolution_ps = cfg.resolution_ps();
    let integration_ps = (integration_time * PS_PER_S).round() as u64;
    let res = resolution_ps as f64 / PS_PER_S;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaps = Exp::new(rate).map_err(|e| invalid(e.to_string()))?;
    let mut ticks = Vec::with_capacity((rate * integration_time * 1.01) as usize + 16);
    let mut t = 0.0;
    loop {
        t += gaps.sample(&mut rng);
        if t >= integration_time {
            break;
        }
        ticks.push((t / res).floor() as u64);
    }
    let end = integration_ps.div_ceil(resolution_ps);
    ticks.retain(|&k| k < end);
    Ok(TimestampStream {
        channel,
        ticks,
        resolution_ps,
        integration_ps,
    })
}
