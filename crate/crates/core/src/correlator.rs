//! Pair-time-difference histograms between two timestamp streams.
//!
//! Every ordered pair `(t1 ∈ A, t2 ∈ B)` whose difference rounds into one of
//! the `2K + 1` bins is counted. Bins are `w` wide and centered on `k·w` for
//! `k = -K..=K`, so the origin bin is centered on zero. A difference falling
//! exactly on an edge is rounded away from zero, which keeps
//! `cross(a, b)[+k] == cross(b, a)[-k]` exact.
//!
//! Counts are normalized by the stationary-rate factor `r_A r_B T w`.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::ops::Range;

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::optics::TimestampStream;

/// Events per segment below which the serial path is used.
const PARALLEL_THRESHOLD: usize = 200_000;

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationHistogram {
    /// Bin width (s).
    pub bin_width: f64,
    /// Center of the outermost bin (s); a whole number of bin widths.
    pub window: f64,
    pub centers: Vec<f64>,
    pub counts: Vec<u64>,
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
    pub rate_a: f64,
    pub rate_b: f64,
    pub integration_time: f64,
}

impl CorrelationHistogram {
    /// Builds a normalized histogram from raw counts over `2K + 1` bins.
    pub fn from_counts(
        counts: Vec<u64>,
        bin_width: f64,
        rate_a: f64,
        rate_b: f64,
        integration_time: f64,
    ) -> Result<Self> {
        if counts.len() % 2 != 1 {
            return Err(invalid(format!(
                "histogram needs an odd number of bins, got {}",
                counts.len()
            )));
        }
        let k = (counts.len() / 2) as i64;
        let norm = rate_a * rate_b * integration_time * bin_width;
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(invalid(format!(
                "normalization factor r_A r_B T w = {norm} is not positive"
            )));
        }
        let centers = (-k..=k).map(|i| i as f64 * bin_width).collect();
        let values = counts.iter().map(|&c| c as f64 / norm).collect();
        let errors = counts.iter().map(|&c| (c.max(1) as f64).sqrt() / norm).collect();
        Ok(CorrelationHistogram {
            bin_width,
            window: k as f64 * bin_width,
            centers,
            counts,
            values,
            errors,
            rate_a,
            rate_b,
            integration_time,
        })
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn bins_per_side(&self) -> usize {
        self.counts.len() / 2
    }

    /// `r_A r_B T w`, the expected count per bin for uncorrelated streams.
    pub fn normalization(&self) -> f64 {
        self.rate_a * self.rate_b * self.integration_time * self.bin_width
    }

    /// Index of the bin whose center is nearest to `tau`, if inside the window.
    pub fn bin_at(&self, tau: f64) -> Option<usize> {
        let k = (tau / self.bin_width).round() as i64 + self.bins_per_side() as i64;
        (0..self.len() as i64).contains(&k).then_some(k as usize)
    }

    /// Indices of bins whose centers lie in `range`.
    pub fn bins_in(&self, range: Range<f64>) -> impl Iterator<Item = usize> + '_ {
        self.centers
            .iter()
            .enumerate()
            .filter(move |(_, c)| range.contains(c))
            .map(|(i, _)| i)
    }

    /// Tab-separated text: a `#` header with the normalization inputs, then
    /// one `center count value error` row per bin.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        let mut out = String::with_capacity(64 * (self.len() + 2));
        writeln!(
            out,
            "# r_A={:e}\tr_B={:e}\tT={:e}\tw={:e}\tW={:e}",
            self.rate_a, self.rate_b, self.integration_time, self.bin_width, self.window
        )
        .unwrap();
        out.push_str("# tau_s\tcount\tg\tsigma\n");
        for i in 0..self.len() {
            writeln!(
                out,
                "{:e}\t{}\t{:e}\t{:e}",
                self.centers[i], self.counts[i], self.values[i], self.errors[i]
            )
            .unwrap();
        }
        w.write_all(out.as_bytes())?;
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut header: Option<[f64; 5]> = None;
        let mut counts = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let at = |msg: String| Error::Format(format!("line {}: {msg}", lineno + 1));
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if rest.contains('=') && header.is_none() {
                    let mut vals = [f64::NAN; 5];
                    for field in rest.split_whitespace() {
                        let (key, value) = field
                            .split_once('=')
                            .ok_or_else(|| at(format!("bad header field {field:?}")))?;
                        let slot = match key {
                            "r_A" => 0,
                            "r_B" => 1,
                            "T" => 2,
                            "w" => 3,
                            "W" => 4,
                            _ => return Err(at(format!("unknown header key {key:?}"))),
                        };
                        vals[slot] = value.parse().map_err(|_| at(format!("bad number {value:?}")))?;
                    }
                    if vals.iter().any(|v| v.is_nan()) {
                        return Err(at("header must define r_A, r_B, T, w and W".into()));
                    }
                    header = Some(vals);
                }
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(at(format!("expected 4 tab-separated columns, got {}", cols.len())));
            }
            counts.push(
                cols[1]
                    .parse::<u64>()
                    .map_err(|_| at(format!("bad count {:?}", cols[1])))?,
            );
        }
        let [ra, rb, t, w, big_w] = header.ok_or_else(|| Error::Format("missing histogram header".into()))?;
        let h = CorrelationHistogram::from_counts(counts, w, ra, rb, t).map_err(|e| Error::Format(e.to_string()))?;
        if (h.window - big_w).abs() > 1e-9 * big_w {
            return Err(Error::Format(format!(
                "header window {big_w:e} does not match {} bins of {w:e}",
                h.len()
            )));
        }
        Ok(h)
    }
}

/// Integer binning rule shared by the serial and segmented scans.
#[derive(Debug, Clone, Copy)]
struct Binning {
    resolution_ps: u64,
    width_ps: u64,
    per_side: u64,
    /// Largest |Δ tick| that still falls in a bin.
    max_lag: u64,
}

impl Binning {
    fn new(resolution_ps: u64, bin_width: f64, window: f64) -> Result<Self> {
        let width_ps = (bin_width * 1e12).round() as u64;
        if !(bin_width.is_finite() && width_ps >= resolution_ps) {
            return Err(invalid(format!(
                "bin width {bin_width:e} s is finer than the timestamp resolution {:e} s",
                resolution_ps as f64 * 1e-12
            )));
        }
        let per_side = (window / bin_width + 1e-9).floor();
        if !(per_side >= 10.0) {
            return Err(invalid(format!(
                "window {window:e} s must span at least 10 bins of {bin_width:e} s"
            )));
        }
        let per_side = per_side as u64;
        let max_lag = (width_ps * (2 * per_side + 1) - 1) / (2 * resolution_ps);
        Ok(Binning {
            resolution_ps,
            width_ps,
            per_side,
            max_lag,
        })
    }

    fn bins(&self) -> usize {
        (2 * self.per_side + 1) as usize
    }

    #[inline]
    fn index(&self, lag: i64) -> usize {
        let mag = lag.unsigned_abs();
        let k = if self.width_ps == self.resolution_ps {
            mag
        } else {
            (2 * mag * self.resolution_ps + self.width_ps) / (2 * self.width_ps)
        };
        if lag < 0 {
            (self.per_side - k) as usize
        } else {
            (self.per_side + k) as usize
        }
    }
}

fn check_streams(a: &TimestampStream, b: &TimestampStream) -> Result<()> {
    if a.resolution_ps != b.resolution_ps {
        return Err(Error::InvalidInput(format!(
            "streams have different resolutions ({} ps vs {} ps)",
            a.resolution_ps, b.resolution_ps
        )));
    }
    if a.integration_ps != b.integration_ps {
        return Err(Error::InvalidInput(format!(
            "streams have different integration times ({} ps vs {} ps)",
            a.integration_ps, b.integration_ps
        )));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("cannot correlate an empty stream".into()));
    }
    for s in [a, b] {
        if s.ticks.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidInput(format!("stream {:?} is not sorted", s.channel)));
        }
    }
    Ok(())
}

/// Counts pairs for the events `a[range]` against all of `b`.
///
/// With `skip_self`, `a` and `b` are the same slice and the pair of an event
/// with itself is not counted.
fn scan(a: &[u64], b: &[u64], range: Range<usize>, bin: &Binning, skip_self: bool) -> Vec<u64> {
    let mut hist = vec![0u64; bin.bins()];
    if range.is_empty() {
        return hist;
    }
    let mut lo = b.partition_point(|&t| t < a[range.start].saturating_sub(bin.max_lag));
    for i in range {
        let t = a[i];
        let first = t.saturating_sub(bin.max_lag);
        while lo < b.len() && b[lo] < first {
            lo += 1;
        }
        let last = t.saturating_add(bin.max_lag);
        let mut j = lo;
        while j < b.len() && b[j] <= last {
            if !(skip_self && j == i) {
                hist[bin.index(b[j] as i64 - t as i64)] += 1;
            }
            j += 1;
        }
    }
    hist
}

fn correlate(
    a: &TimestampStream,
    b: &TimestampStream,
    bin_width: f64,
    window: f64,
    segments: usize,
    skip_self: bool,
) -> Result<CorrelationHistogram> {
    check_streams(a, b)?;
    let bin = Binning::new(a.resolution_ps, bin_width, window)?;
    let n = a.len();
    let segments = segments.clamp(1, n);
    let counts = if segments == 1 {
        scan(&a.ticks, &b.ticks, 0..n, &bin, skip_self)
    } else {
        let step = n.div_ceil(segments);
        (0..segments)
            .into_par_iter()
            .map(|s| {
                scan(
                    &a.ticks,
                    &b.ticks,
                    (s * step).min(n)..((s + 1) * step).min(n),
                    &bin,
                    skip_self,
                )
            })
            .reduce(
                || vec![0u64; bin.bins()],
                |mut acc, part| {
                    acc.iter_mut().zip(part).for_each(|(x, y)| *x += y);
                    acc
                },
            )
    };
    let t = a.integration_time();
    let width = bin.width_ps as f64 * 1e-12;
    CorrelationHistogram::from_counts(counts, width, a.len() as f64 / t, b.len() as f64 / t, t)
}

fn default_segments(n: usize) -> usize {
    if n < PARALLEL_THRESHOLD {
        1
    } else {
        rayon::current_num_threads() * 4
    }
}

/// Normalized cross-correlation histogram g^(2X) of `b` relative to `a`.
pub fn cross_correlate(
    a: &TimestampStream,
    b: &TimestampStream,
    bin_width: f64,
    window: f64,
) -> Result<CorrelationHistogram> {
    correlate(a, b, bin_width, window, default_segments(a.len()), false)
}

/// [`cross_correlate`] with an explicit number of segments of `a`.
/// The result does not depend on `segments`.
pub fn cross_correlate_segmented(
    a: &TimestampStream,
    b: &TimestampStream,
    bin_width: f64,
    window: f64,
    segments: usize,
) -> Result<CorrelationHistogram> {
    correlate(a, b, bin_width, window, segments, false)
}

/// Hanbury-Brown-Twiss style g^(2) of one stream, excluding self-pairs.
pub fn autocorrelate(a: &TimestampStream, bin_width: f64, window: f64) -> Result<CorrelationHistogram> {
    correlate(a, a, bin_width, window, default_segments(a.len()), true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::{poisson_stream, Channel};
    use proptest::prelude::*;

    fn stream(ticks: Vec<u64>, res: u64, end: u64) -> TimestampStream {
        TimestampStream::new(Channel::A, ticks, res, end * res).unwrap()
    }

    #[test]
    fn single_pair_lands_in_expected_bin() {
        let a = stream(vec![100], 1000, 1000);
        let b = stream(vec![103], 1000, 1000);
        let h = cross_correlate(&a, &b, 1e-9, 20e-9).unwrap();
        assert_eq!(h.len(), 41);
        assert_eq!(h.counts[20 + 3], 1);
        assert_eq!(h.counts.iter().sum::<u64>(), 1);
        assert!((h.centers[23] - 3e-9).abs() < 1e-24);
    }

    #[test]
    fn edge_ties_round_away_from_zero() {
        // w = 2 ticks: lag +1 is a tie between bins 0 and +1
        let a = stream(vec![50], 1000, 1000);
        let b = stream(vec![49, 51], 1000, 1000);
        let h = cross_correlate(&a, &b, 2e-9, 40e-9).unwrap();
        assert_eq!(h.counts[19], 1);
        assert_eq!(h.counts[21], 1);
        assert_eq!(h.counts[20], 0);
    }

    #[test]
    fn normalization_and_errors() {
        let a = poisson_stream(Channel::A, 1e6, 0.01, 2e-9, 1).unwrap();
        let b = poisson_stream(Channel::B, 1e6, 0.01, 2e-9, 2).unwrap();
        let h = cross_correlate(&a, &b, 2e-9, 2e-6).unwrap();
        let norm = a.rate() * b.rate() * 0.01 * 2e-9;
        for i in 0..h.len() {
            assert!((h.values[i] - h.counts[i] as f64 / norm).abs() <= 1e-12 * h.values[i].max(1.0));
            let e = if h.counts[i] == 0 {
                1.0 / norm
            } else {
                (h.counts[i] as f64).sqrt() / norm
            };
            assert!((h.errors[i] - e).abs() <= 1e-12 * e);
        }
    }

    #[test]
    fn independent_poisson_streams_are_flat() {
        let a = poisson_stream(Channel::A, 2e6, 0.05, 2e-9, 5).unwrap();
        let b = poisson_stream(Channel::B, 2e6, 0.05, 2e-9, 6).unwrap();
        let h = cross_correlate(&a, &b, 2e-9, 2e-6).unwrap();
        let outliers = (0..h.len())
            .filter(|&i| (h.values[i] - 1.0).abs() > 5.0 * h.errors[i])
            .count();
        assert_eq!(outliers, 0);
        let mean = h.values.iter().sum::<f64>() / h.len() as f64;
        let se = (h.counts.iter().sum::<u64>() as f64).sqrt() / h.normalization() / h.len() as f64;
        assert!((mean - 1.0).abs() < 3.0 * se, "{mean} +- {se}");
    }

    #[test]
    fn poisson_autocorrelation_is_flat() {
        let a = poisson_stream(Channel::A, 2e6, 0.05, 2e-9, 9).unwrap();
        let h = autocorrelate(&a, 2e-9, 1e-6).unwrap();
        let zero = h.bin_at(0.0).unwrap();
        assert!((h.values[zero] - 1.0).abs() < 5.0 * h.errors[zero]);
        assert!((0..h.len()).all(|i| (h.values[i] - 1.0).abs() < 5.0 * h.errors[i]));
    }

    #[test]
    fn autocorrelation_skips_only_self_pairs() {
        let a = stream(vec![10, 10, 12], 1000, 100);
        let h = autocorrelate(&a, 1e-9, 10e-9).unwrap();
        // (10,10) twice across distinct events, (10,12) and reversed, twice each
        assert_eq!(h.counts[10], 2);
        assert_eq!(h.counts[12], 2);
        assert_eq!(h.counts[8], 2);
        assert_eq!(h.counts.iter().sum::<u64>(), 6);
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = stream(vec![1, 2, 3], 1000, 100);
        let b = stream(vec![1, 2, 3], 2000, 50);
        let empty = stream(vec![], 1000, 100);
        assert!(cross_correlate(&a, &b, 2e-9, 40e-9).is_err());
        assert!(cross_correlate(&a, &empty, 2e-9, 40e-9).is_err());
        assert!(cross_correlate(&a, &a, 0.5e-9, 40e-9).is_err());
        assert!(cross_correlate(&a, &a, 2e-9, 10e-9).is_err());
        let unsorted = TimestampStream {
            ticks: vec![5, 3],
            ..a.clone()
        };
        assert!(cross_correlate(&unsorted, &a, 2e-9, 40e-9).is_err());
    }

    #[test]
    fn text_round_trip() {
        let a = poisson_stream(Channel::A, 1e6, 0.002, 2e-9, 1).unwrap();
        let b = poisson_stream(Channel::B, 1e6, 0.002, 2e-9, 2).unwrap();
        let h = cross_correlate(&a, &b, 4e-9, 200e-9).unwrap();
        let mut buf = Vec::new();
        h.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# r_A="));
        let back = CorrelationHistogram::read_text(&buf[..]).unwrap();
        assert_eq!(back, h);
        assert!(CorrelationHistogram::read_text(&b"1\t2\t3\t4\n"[..]).is_err());
    }

    fn sorted_ticks(max: u64) -> impl Strategy<Value = Vec<u64>> {
        proptest::collection::vec(0..max, 1..400).prop_map(|mut v| {
            v.sort_unstable();
            v
        })
    }

    proptest! {
        #[test]
        fn time_reversal_is_exact(a in sorted_ticks(5000), b in sorted_ticks(5000), m in 1u64..4) {
            let (sa, sb) = (stream(a, 1000, 5000), stream(b, 1000, 5000));
            let w = m as f64 * 1e-9;
            let ab = cross_correlate(&sa, &sb, w, 30.0 * w).unwrap();
            let ba = cross_correlate(&sb, &sa, w, 30.0 * w).unwrap();
            let rev: Vec<u64> = ba.counts.iter().rev().copied().collect();
            prop_assert_eq!(ab.counts, rev);
        }

        #[test]
        fn segmentation_does_not_change_counts(a in sorted_ticks(3000), b in sorted_ticks(3000), segs in 2usize..17) {
            let (sa, sb) = (stream(a, 1000, 3000), stream(b, 1000, 3000));
            let serial = cross_correlate_segmented(&sa, &sb, 2e-9, 40e-9, 1).unwrap();
            let split = cross_correlate_segmented(&sa, &sb, 2e-9, 40e-9, segs).unwrap();
            prop_assert_eq!(serial, split);
        }
    }
}
