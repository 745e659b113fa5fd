//! Total harmonic distortion, sweep-derived frequency responses and the two
//! response degradation measures (shape correlation and mean squared dB
//! difference).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{FrameSpec, Recording, SpectrumAnalyzer, SILENCE_THRESHOLD_DBFS};
use crate::siggen::{instantaneous_frequency, SweepSpec};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("recording is not measurable (RMS {rms_dbfs:.1} dBFS below {threshold_dbfs} dBFS)")]
    Unmeasurable { rms_dbfs: f64, threshold_dbfs: f64 },
    #[error("harmonic {harmonic} of {fundamental_hz} Hz lies at or above Nyquist ({nyquist_hz} Hz)")]
    AboveNyquist {
        harmonic: usize,
        fundamental_hz: f64,
        nyquist_hz: f64,
    },
    #[error("no fundamental peak within ±5% of {nominal_hz} Hz (strongest component at {found_hz:.1} Hz)")]
    FundamentalNotFound { nominal_hz: f64, found_hz: f64 },
    #[error("recording of {len} samples is shorter than one {frame_len}-sample frame")]
    TooShort { len: usize, frame_len: usize },
    #[error("sample rate {recording} Hz does not match sweep sample rate {sweep} Hz")]
    SampleRateMismatch { recording: u32, sweep: u32 },
    #[error("frequency grids differ")]
    GridMismatch,
    #[error("{0} response has zero variance; correlation is undefined")]
    ZeroVariance(&'static str),
    #[error("invalid frequency grid: {0}")]
    InvalidGrid(String),
}

/// True iff the recording's RMS level reaches `threshold_dbfs`.
pub fn is_measurable(rec: &Recording, threshold_dbfs: f64) -> bool {
    rec.rms_dbfs() >= threshold_dbfs
}

fn require_measurable(rec: &Recording, threshold_dbfs: f64) -> Result<(), MetricsError> {
    if is_measurable(rec, threshold_dbfs) {
        Ok(())
    } else {
        Err(MetricsError::Unmeasurable {
            rms_dbfs: rec.rms_dbfs(),
            threshold_dbfs,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThdResult {
    pub thd_dbc: f64,
    pub fundamental_hz: f64,
    pub fundamental_power: f64,
    pub harmonic_powers: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThdOptions {
    pub fundamental_hz: f64,
    /// Number of distortion harmonics summed, starting at 2f.
    pub n_harmonics: usize,
    pub silence_threshold_dbfs: f64,
}

impl Default for ThdOptions {
    fn default() -> Self {
        Self {
            fundamental_hz: 1000.0,
            n_harmonics: 5,
            silence_threshold_dbfs: SILENCE_THRESHOLD_DBFS,
        }
    }
}

/// Half-width (bins) of the neighbourhood summed around each spectral peak.
const THD_LOBE_BINS: usize = 3;
/// Allowed deviation of the detected fundamental from the nominal frequency.
const FUNDAMENTAL_TOLERANCE: f64 = 0.05;
/// The fundamental must carry at least this fraction of the power of the
/// strongest spectral component.
const FUNDAMENTAL_MIN_REL_POWER: f64 = 1e-4;
/// Components below this are ignored when locating the fundamental.
const MIN_FUNDAMENTAL_SEARCH_HZ: f64 = 20.0;

pub fn thd(rec: &Recording, fundamental_hz: f64, n_harmonics: usize) -> Result<ThdResult, MetricsError> {
    thd_with(
        rec,
        &ThdOptions {
            fundamental_hz,
            n_harmonics,
            ..Default::default()
        },
    )
}

/// THD from one Hann-windowed spectrum of the whole recording.
pub fn thd_with(rec: &Recording, opts: &ThdOptions) -> Result<ThdResult, MetricsError> {
    require_measurable(rec, opts.silence_threshold_dbfs)?;
    let rate = rec.sample_rate_hz as f64;
    let nyquist_hz = rate / 2.0;
    let top = opts.n_harmonics + 1;
    if opts.fundamental_hz * top as f64 >= nyquist_hz {
        return Err(MetricsError::AboveNyquist {
            harmonic: top,
            fundamental_hz: opts.fundamental_hz,
            nyquist_hz,
        });
    }
    let n = rec.len();
    let df = rate / n as f64;
    let power = SpectrumAnalyzer::new(n, crate::audio::Window::Hann).power(&rec.samples);

    let first = (MIN_FUNDAMENTAL_SEARCH_HZ / df).ceil() as usize;
    let strongest = (first..power.len())
        .max_by(|&a, &b| power[a].total_cmp(&power[b]))
        .unwrap_or(0);
    let lo = ((1.0 - FUNDAMENTAL_TOLERANCE) * opts.fundamental_hz / df).ceil() as usize;
    let hi = (((1.0 + FUNDAMENTAL_TOLERANCE) * opts.fundamental_hz / df).floor() as usize).min(power.len() - 1);
    let peak = (lo.max(first)..=hi)
        .max_by(|&a, &b| power[a].total_cmp(&power[b]))
        .unwrap_or(strongest);
    let found = lobe_power(&power, peak) >= FUNDAMENTAL_MIN_REL_POWER * lobe_power(&power, strongest);
    if !found {
        return Err(MetricsError::FundamentalNotFound {
            nominal_hz: opts.fundamental_hz,
            found_hz: strongest as f64 * df,
        });
    }
    let fundamental_power = lobe_power(&power, peak);
    let fundamental_hz = lobe_centroid(&power, peak) * df;

    let harmonic_powers: Vec<f64> = (2..=top)
        .map(|h| {
            let nominal = (h as f64 * fundamental_hz / df).round() as usize;
            let lo = nominal.saturating_sub(THD_LOBE_BINS);
            let hi = (nominal + THD_LOBE_BINS).min(power.len() - 1);
            let local = (lo..=hi)
                .max_by(|&a, &b| power[a].total_cmp(&power[b]))
                .unwrap_or(nominal);
            lobe_power(&power, local)
        })
        .collect();
    let distortion: f64 = harmonic_powers.iter().sum();
    let thd_dbc = if distortion == 0.0 {
        f64::NEG_INFINITY
    } else {
        10.0 * (distortion / fundamental_power).log10()
    };
    Ok(ThdResult {
        thd_dbc,
        fundamental_hz,
        fundamental_power,
        harmonic_powers,
    })
}

fn lobe_range(len: usize, center: usize) -> std::ops::RangeInclusive<usize> {
    center.saturating_sub(THD_LOBE_BINS)..=(center + THD_LOBE_BINS).min(len - 1)
}

fn lobe_power(power: &[f64], center: usize) -> f64 {
    power[lobe_range(power.len(), center)].iter().sum()
}

fn lobe_centroid(power: &[f64], center: usize) -> f64 {
    let range = lobe_range(power.len(), center);
    let total: f64 = power[range.clone()].iter().sum();
    if total == 0.0 {
        return center as f64;
    }
    range.map(|k| k as f64 * power[k]).sum::<f64>() / total
}

/// Log-spaced analysis frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid(pub Vec<f64>);

pub const DEFAULT_GRID_POINTS: usize = 256;
pub const DEFAULT_BAND_HZ: (f64, f64) = (40.0, 16_000.0);

impl FrequencyGrid {
    pub fn log_spaced(points: usize, lo_hz: f64, hi_hz: f64) -> Result<Self, MetricsError> {
        if points < 2 {
            return Err(MetricsError::InvalidGrid(format!("{points} points; need at least 2")));
        }
        if !(lo_hz > 0.0 && lo_hz < hi_hz && hi_hz.is_finite()) {
            return Err(MetricsError::InvalidGrid(format!(
                "band {lo_hz}:{hi_hz} Hz must satisfy 0 < lo < hi"
            )));
        }
        let (a, b) = (lo_hz.ln(), hi_hz.ln());
        let step = (b - a) / (points - 1) as f64;
        let mut grid: Vec<f64> = (0..points).map(|i| (a + step * i as f64).exp()).collect();
        grid[0] = lo_hz;
        grid[points - 1] = hi_hz;
        Ok(Self(grid))
    }

    pub fn points(&self) -> &[f64] {
        &self.0
    }

    /// Index of the grid point closest to `freq_hz` in log frequency.
    pub fn nearest(&self, freq_hz: f64) -> usize {
        let target = freq_hz.ln();
        (0..self.0.len())
            .min_by(|&a, &b| {
                (self.0[a].ln() - target)
                    .abs()
                    .total_cmp(&(self.0[b].ln() - target).abs())
            })
            .unwrap_or(0)
    }
}

impl Default for FrequencyGrid {
    fn default() -> Self {
        Self::log_spaced(DEFAULT_GRID_POINTS, DEFAULT_BAND_HZ.0, DEFAULT_BAND_HZ.1)
            .expect("default grid is valid")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyResponse {
    pub grid_hz: Vec<f64>,
    pub magnitude_db: Vec<f64>,
}

/// Half-width (bins) of the neighbourhood around the sweep's instantaneous
/// frequency that is summed per frame.
const RESPONSE_NEIGHBOURHOOD_BINS: usize = 2;
const RESPONSE_FLOOR_DB: f64 = -300.0;

/// Magnitude response estimated from a time-aligned recording of the sweep.
///
/// Each STFT frame contributes one sample: the power within ±2 bins of the
/// sweep's instantaneous frequency at the frame centre, expressed in dB so
/// that a sinusoid of amplitude `A` reads `20·log10(A)`. Samples are then
/// interpolated linearly in log frequency onto the grid; grid points beyond
/// the first/last frame take the edge value.
pub fn frequency_response(
    rec: &Recording,
    spec: &SweepSpec,
    grid: &FrequencyGrid,
) -> Result<FrequencyResponse, MetricsError> {
    frequency_response_with(rec, spec, grid, SILENCE_THRESHOLD_DBFS)
}

pub fn frequency_response_with(
    rec: &Recording,
    spec: &SweepSpec,
    grid: &FrequencyGrid,
    silence_threshold_dbfs: f64,
) -> Result<FrequencyResponse, MetricsError> {
    if rec.sample_rate_hz != spec.sample_rate_hz {
        return Err(MetricsError::SampleRateMismatch {
            recording: rec.sample_rate_hz,
            sweep: spec.sample_rate_hz,
        });
    }
    let frames = FrameSpec::default();
    if rec.len() < frames.frame_len {
        return Err(MetricsError::TooShort {
            len: rec.len(),
            frame_len: frames.frame_len,
        });
    }
    require_measurable(rec, silence_threshold_dbfs)?;

    let rate = rec.sample_rate_hz as f64;
    let df = rate / frames.frame_len as f64;
    let mut analyzer = SpectrumAnalyzer::new(frames.frame_len, frames.window);
    let norm = analyzer.sine_power_norm();
    let mut samples: Vec<(f64, f64)> = Vec::new();
    for start in frames.frame_starts(rec.len()) {
        let t = (start + frames.frame_len / 2) as f64 / rate;
        let Ok(freq) = instantaneous_frequency(spec, t) else {
            break;
        };
        let power = analyzer.power(&rec.samples[start..start + frames.frame_len]);
        let center = (freq / df).round() as usize;
        let lo = center.saturating_sub(RESPONSE_NEIGHBOURHOOD_BINS);
        let hi = (center + RESPONSE_NEIGHBOURHOOD_BINS).min(power.len() - 1);
        let p: f64 = power[lo..=hi].iter().sum::<f64>() / norm;
        let db = (10.0 * p.log10()).max(RESPONSE_FLOOR_DB);
        samples.push((freq.ln(), db));
    }
    let magnitude_db = grid
        .points()
        .iter()
        .map(|&f| interpolate(&samples, f.ln()))
        .collect();
    Ok(FrequencyResponse {
        grid_hz: grid.points().to_vec(),
        magnitude_db,
    })
}

/// Piecewise-linear interpolation over ascending `(x, y)` knots with
/// constant extension past either end.
fn interpolate(knots: &[(f64, f64)], x: f64) -> f64 {
    let first = knots[0];
    let last = knots[knots.len() - 1];
    if x <= first.0 {
        return first.1;
    }
    if x >= last.0 {
        return last.1;
    }
    let i = knots.partition_point(|k| k.0 <= x);
    let (x0, y0) = knots[i - 1];
    let (x1, y1) = knots[i];
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

fn check_grids(a: &FrequencyResponse, b: &FrequencyResponse) -> Result<(), MetricsError> {
    let same = a.grid_hz.len() == b.grid_hz.len()
        && a.magnitude_db.len() == a.grid_hz.len()
        && b.magnitude_db.len() == b.grid_hz.len()
        && a
            .grid_hz
            .iter()
            .zip(&b.grid_hz)
            .all(|(x, y)| (x - y).abs() <= 1e-9 * x.abs().max(1.0));
    if same {
        Ok(())
    } else {
        Err(MetricsError::GridMismatch)
    }
}

/// Pearson correlation of the two dB magnitude vectors.
pub fn response_correlation(test: &FrequencyResponse, reference: &FrequencyResponse) -> Result<f64, MetricsError> {
    check_grids(test, reference)?;
    let n = test.magnitude_db.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
    let (mt, mr) = (mean(&test.magnitude_db), mean(&reference.magnitude_db));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in test.magnitude_db.iter().zip(&reference.magnitude_db) {
        let (dx, dy) = (x - mt, y - mr);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(MetricsError::ZeroVariance("test"));
    }
    if syy == 0.0 {
        return Err(MetricsError::ZeroVariance("reference"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Mean over the grid of the squared dB difference.
pub fn response_difference_mss(test: &FrequencyResponse, reference: &FrequencyResponse) -> Result<f64, MetricsError> {
    check_grids(test, reference)?;
    let n = test.magnitude_db.len() as f64;
    Ok(test
        .magnitude_db
        .iter()
        .zip(&reference.magnitude_db)
        .map(|(t, r)| (r - t).powi(2))
        .sum::<f64>()
        / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationMeasures {
    pub correlation: f64,
    pub difference_mss: f64,
}

impl DegradationMeasures {
    pub fn compute(test: &FrequencyResponse, reference: &FrequencyResponse) -> Result<Self, MetricsError> {
        Ok(Self {
            correlation: response_correlation(test, reference)?,
            difference_mss: response_difference_mss(test, reference)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::siggen::{gen_tone, ToneSpec};

    fn response(db: Vec<f64>) -> FrequencyResponse {
        let grid = FrequencyGrid::log_spaced(db.len(), 40.0, 16_000.0).unwrap();
        FrequencyResponse {
            grid_hz: grid.0,
            magnitude_db: db,
        }
    }

    fn shaped(n: usize) -> Vec<f64> {
        (0..n).map(|i| -14.0 + 3.0 * (i as f64 * 0.21).sin() - 0.01 * i as f64).collect()
    }

    #[test]
    fn measurability_gate() {
        let silent = Recording::new(vec![0.0; 1000], 44100, "z");
        assert!(!is_measurable(&silent, -60.0));
        let tone = gen_tone(&ToneSpec {
            duration_s: 1.0,
            ..Default::default()
        })
        .unwrap();
        assert!((tone.rms_dbfs() - (-17.01)).abs() < 0.02);
        assert!(is_measurable(&tone, -60.0));
        let quiet = gen_tone(&ToneSpec {
            duration_s: 1.0,
            level_dbfs: -70.0,
            ..Default::default()
        })
        .unwrap();
        assert!(!is_measurable(&quiet, -60.0));
    }

    #[test]
    fn thd_rejects_silence_and_wrong_stimulus() {
        let silent = Recording::new(vec![0.0; 44100], 44100, "z");
        assert!(matches!(thd(&silent, 1000.0, 5), Err(MetricsError::Unmeasurable { .. })));
        let tone = gen_tone(&ToneSpec {
            freq_hz: 1500.0,
            duration_s: 1.0,
            ..Default::default()
        })
        .unwrap();
        assert!(matches!(thd(&tone, 1000.0, 5), Err(MetricsError::FundamentalNotFound { .. })));
        assert!(matches!(thd(&tone, 4000.0, 5), Err(MetricsError::AboveNyquist { harmonic: 6, .. })));
    }

    #[test]
    fn thd_tolerates_small_clock_skew() {
        let tone = gen_tone(&ToneSpec {
            freq_hz: 1030.0,
            duration_s: 2.0,
            ..Default::default()
        })
        .unwrap();
        let r = thd(&tone, 1000.0, 5).unwrap();
        assert!((r.fundamental_hz - 1030.0).abs() < 1.0);
        assert_eq!(r.harmonic_powers.len(), 5);
    }

    #[test]
    fn correlation_semantics() {
        let base = response(shaped(256));
        assert!((response_correlation(&base, &base).unwrap() - 1.0).abs() < 1e-12);
        let shifted = response(base.magnitude_db.iter().map(|v| v - 6.0).collect());
        assert!((response_correlation(&shifted, &base).unwrap() - 1.0).abs() < 1e-12);
        let mean = base.magnitude_db.iter().sum::<f64>() / 256.0;
        let flipped = response(base.magnitude_db.iter().map(|v| -(v - mean) + mean).collect());
        assert!((response_correlation(&flipped, &base).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn correlation_errors() {
        let base = response(shaped(256));
        let flat = response(vec![-10.0; 256]);
        assert_eq!(response_correlation(&flat, &base), Err(MetricsError::ZeroVariance("test")));
        assert_eq!(response_correlation(&base, &flat), Err(MetricsError::ZeroVariance("reference")));
        let other = response(shaped(128));
        assert_eq!(response_correlation(&other, &base), Err(MetricsError::GridMismatch));
        assert_eq!(response_difference_mss(&other, &base), Err(MetricsError::GridMismatch));
    }

    #[test]
    fn mss_arithmetic() {
        let base = response(shaped(256));
        assert_eq!(response_difference_mss(&base, &base).unwrap(), 0.0);
        let down = response(base.magnitude_db.iter().map(|v| v - 6.0).collect());
        assert!((response_difference_mss(&down, &base).unwrap() - 36.0).abs() < 1e-9);
        let half = response(
            base.magnitude_db
                .iter()
                .enumerate()
                .map(|(i, v)| if i < 128 { v - 10.0 } else { *v })
                .collect(),
        );
        assert!((response_difference_mss(&half, &base).unwrap() - 50.0).abs() < 1e-9);
    }

    #[test]
    fn grid_construction() {
        let g = FrequencyGrid::default();
        assert_eq!(g.0.len(), 256);
        assert_eq!(g.0[0], 40.0);
        assert_eq!(g.0[255], 16_000.0);
        assert!(g.0.windows(2).all(|w| w[0] < w[1]));
        assert!(FrequencyGrid::log_spaced(1, 40.0, 100.0).is_err());
        assert!(FrequencyGrid::log_spaced(10, 100.0, 40.0).is_err());
        let k = g.nearest(1000.0);
        assert!((g.0[k] / 1000.0).ln().abs() < 0.02);
    }

    #[test]
    fn interpolation_is_linear_with_flat_ends() {
        let knots = [(0.0, 0.0), (1.0, 10.0), (2.0, 0.0)];
        assert_eq!(interpolate(&knots, -1.0), 0.0);
        assert_eq!(interpolate(&knots, 0.5), 5.0);
        assert_eq!(interpolate(&knots, 1.5), 5.0);
        assert_eq!(interpolate(&knots, 3.0), 0.0);
    }
}
