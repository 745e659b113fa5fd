//! RMS average noise loudness between a test and a reference recording.
//!
//! The ear model is a reduced form of the PEAQ basic-version front end:
//! outer/middle-ear weighting of an FFT power spectrum, grouping into
//! 0.25-Bark bands and an additive internal-noise floor. Spreading, temporal
//! smearing and masking offsets are left out. Specific loudness follows
//! Zwicker's 0.23-power law, and only loudness that the test adds on top of
//! the reference counts as noise.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{FrameSpec, Recording, SpectrumAnalyzer, SILENCE_THRESHOLD_DBFS};

/// Sample rate the band mapping is defined for.
pub const EAR_MODEL_RATE_HZ: u32 = 44_100;
/// Excitation reference; a full-scale sine lands near 120 dB above it.
pub const E0: f64 = 1e-12;
pub const BAND_STEP_BARK: f64 = 0.25;
pub const BAND_LO_HZ: f64 = 80.0;
pub const BAND_HI_HZ: f64 = 16_000.0;
const ZWICKER_EXPONENT: f64 = 0.23;
/// Largest relative length difference tolerated between test and reference.
const MAX_LENGTH_MISMATCH: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum LoudnessError {
    #[error("ear model requires {EAR_MODEL_RATE_HZ} Hz audio, got {0} Hz")]
    UnsupportedSampleRate(u32),
    #[error("{which} recording is not measurable (RMS {rms_dbfs:.1} dBFS)")]
    Unmeasurable { which: &'static str, rms_dbfs: f64 },
    #[error("recording of {0} samples is shorter than one analysis frame")]
    TooShort(usize),
    #[error("sample rate mismatch: test {test} Hz, reference {reference} Hz")]
    SampleRateMismatch { test: u32, reference: u32 },
    #[error("test ({test} samples) and reference ({reference} samples) differ in length by more than 5%")]
    LengthMismatch { test: usize, reference: usize },
}

/// Bark value of a frequency, `z(f) = 7·asinh(f/650)`.
pub fn hz_to_bark(freq_hz: f64) -> f64 {
    7.0 * (freq_hz / 650.0).asinh()
}

pub fn bark_to_hz(bark: f64) -> f64 {
    650.0 * (bark / 7.0).sinh()
}

/// Outer/middle-ear weighting in dB.
pub fn ear_weighting_db(freq_hz: f64) -> f64 {
    let khz = freq_hz / 1000.0;
    -0.6 * 3.64 * khz.powf(-0.8) + 6.5 * (-0.6 * (khz - 3.3).powi(2)).exp() - 1e-3 * khz.powf(3.6)
}

/// Internal-noise excitation for a band centred at `center_hz`.
pub fn internal_noise(center_hz: f64) -> f64 {
    10f64.powf(0.4 * 0.364 * (center_hz / 1000.0).powf(-0.8)) * E0
}

pub fn specific_loudness(excitation: f64) -> f64 {
    (excitation / E0).powf(ZWICKER_EXPONENT)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcitationPattern {
    pub band_centers_bark: Vec<f64>,
    /// One row per frame, one column per band.
    pub excitation: Vec<Vec<f64>>,
}

impl ExcitationPattern {
    pub fn band_centers_hz(&self) -> Vec<f64> {
        self.band_centers_bark.iter().map(|&z| bark_to_hz(z)).collect()
    }
}

/// Precomputed bin-to-band mapping for the fixed frame length.
struct EarModel {
    frames: FrameSpec,
    centers_bark: Vec<f64>,
    noise_floor: Vec<f64>,
    /// `(bin, band, linear weight)` for every bin inside the band range.
    bins: Vec<(usize, usize, f64)>,
}

impl EarModel {
    fn new() -> Self {
        let frames = FrameSpec::default();
        let z_lo = hz_to_bark(BAND_LO_HZ);
        let z_hi = hz_to_bark(BAND_HI_HZ);
        let n_bands = ((z_hi - z_lo) / BAND_STEP_BARK).ceil() as usize;
        let centers_bark: Vec<f64> = (0..n_bands)
            .map(|i| z_lo + (i as f64 + 0.5) * BAND_STEP_BARK)
            .collect();
        let noise_floor = centers_bark
            .iter()
            .map(|&z| internal_noise(bark_to_hz(z)))
            .collect();
        let df = EAR_MODEL_RATE_HZ as f64 / frames.frame_len as f64;
        let bins = (1..=frames.frame_len / 2)
            .filter_map(|k| {
                let f = k as f64 * df;
                if !(BAND_LO_HZ..BAND_HI_HZ).contains(&f) {
                    return None;
                }
                let band = ((hz_to_bark(f) - z_lo) / BAND_STEP_BARK).floor() as usize;
                let weight = 10f64.powf(ear_weighting_db(f) / 10.0);
                (band < n_bands).then_some((k, band, weight))
            })
            .collect();
        Self {
            frames,
            centers_bark,
            noise_floor,
            bins,
        }
    }

    fn excitation(&self, rec: &Recording) -> Result<ExcitationPattern, LoudnessError> {
        if rec.sample_rate_hz != EAR_MODEL_RATE_HZ {
            return Err(LoudnessError::UnsupportedSampleRate(rec.sample_rate_hz));
        }
        if rec.len() < self.frames.frame_len {
            return Err(LoudnessError::TooShort(rec.len()));
        }
        let mut analyzer = SpectrumAnalyzer::new(self.frames.frame_len, self.frames.window);
        let norm = analyzer.sine_power_norm();
        let excitation = self
            .frames
            .frame_starts(rec.len())
            .map(|start| {
                let power = analyzer.power(&rec.samples[start..start + self.frames.frame_len]);
                let mut bands = self.noise_floor.clone();
                for &(k, band, weight) in &self.bins {
                    bands[band] += power[k] / norm * weight;
                }
                bands
            })
            .collect();
        Ok(ExcitationPattern {
            band_centers_bark: self.centers_bark.clone(),
            excitation,
        })
    }
}

/// Per-frame band excitations of a measurable 44.1 kHz recording.
pub fn ear_model(rec: &Recording) -> Result<ExcitationPattern, LoudnessError> {
    if rec.sample_rate_hz != EAR_MODEL_RATE_HZ {
        return Err(LoudnessError::UnsupportedSampleRate(rec.sample_rate_hz));
    }
    check_measurable(rec, "input", SILENCE_THRESHOLD_DBFS)?;
    EarModel::new().excitation(rec)
}

fn check_measurable(rec: &Recording, which: &'static str, threshold_dbfs: f64) -> Result<(), LoudnessError> {
    let level = rec.rms_dbfs();
    if level >= threshold_dbfs {
        Ok(())
    } else {
        Err(LoudnessError::Unmeasurable {
            which,
            rms_dbfs: level,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseLoudnessResult {
    pub rms_noise_loudness: f64,
    pub per_frame: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseLoudnessOptions {
    /// Rescale the test to the reference RMS before comparing. Off by
    /// default, so level loss stays visible in the score.
    pub normalize_level: bool,
    pub silence_threshold_dbfs: f64,
}

impl Default for NoiseLoudnessOptions {
    fn default() -> Self {
        Self {
            normalize_level: false,
            silence_threshold_dbfs: SILENCE_THRESHOLD_DBFS,
        }
    }
}

pub fn rms_noise_loudness(test: &Recording, reference: &Recording) -> Result<NoiseLoudnessResult, LoudnessError> {
    rms_noise_loudness_with(test, reference, &NoiseLoudnessOptions::default())
}

pub fn rms_noise_loudness_with(
    test: &Recording,
    reference: &Recording,
    opts: &NoiseLoudnessOptions,
) -> Result<NoiseLoudnessResult, LoudnessError> {
    if test.sample_rate_hz != reference.sample_rate_hz {
        return Err(LoudnessError::SampleRateMismatch {
            test: test.sample_rate_hz,
            reference: reference.sample_rate_hz,
        });
    }
    let (lt, lr) = (test.len() as f64, reference.len() as f64);
    if (lt - lr).abs() > MAX_LENGTH_MISMATCH * lr {
        return Err(LoudnessError::LengthMismatch {
            test: test.len(),
            reference: reference.len(),
        });
    }
    if reference.sample_rate_hz != EAR_MODEL_RATE_HZ {
        return Err(LoudnessError::UnsupportedSampleRate(reference.sample_rate_hz));
    }
    check_measurable(reference, "reference", opts.silence_threshold_dbfs)?;

    let scaled;
    let test = if opts.normalize_level && test.rms_dbfs().is_finite() {
        let gain = (reference.rms_dbfs() - test.rms_dbfs()) / 20.0;
        let g = 10f64.powf(gain);
        scaled = test.map(|x| x * g);
        &scaled
    } else {
        test
    };

    let model = EarModel::new();
    let et = model.excitation(test)?;
    let er = model.excitation(reference)?;
    let per_frame: Vec<f64> = et
        .excitation
        .iter()
        .zip(&er.excitation)
        .map(|(t, r)| {
            let sum: f64 = t
                .iter()
                .zip(r)
                .map(|(&a, &b)| (specific_loudness(a) - specific_loudness(b)).max(0.0))
                .sum();
            sum / t.len() as f64
        })
        .collect();
    let rms = if per_frame.is_empty() {
        0.0
    } else {
        (per_frame.iter().map(|v| v * v).sum::<f64>() / per_frame.len() as f64).sqrt()
    };
    Ok(NoiseLoudnessResult {
        rms_noise_loudness: rms,
        per_frame,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::siggen::{gen_tone, ToneSpec};

    fn tone(seconds: f64) -> Recording {
        gen_tone(&ToneSpec {
            duration_s: seconds,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn bark_mapping_closed_form() {
        assert!((hz_to_bark(650.0) - 6.170).abs() < 1e-3);
        assert!((hz_to_bark(650.0) - 7.0 * 1f64.asinh()).abs() < 1e-12);
        assert!((bark_to_hz(hz_to_bark(3210.0)) - 3210.0).abs() < 1e-9);
    }

    #[test]
    fn weighting_and_floor_shapes() {
        // ear-canal resonance around 3.3 kHz
        assert!(ear_weighting_db(3300.0) > ear_weighting_db(1000.0));
        assert!(ear_weighting_db(100.0) < -10.0);
        assert!(internal_noise(100.0) > internal_noise(5000.0));
        assert!(internal_noise(5000.0) > E0);
    }

    #[test]
    fn band_layout() {
        let rec = tone(0.2);
        let pattern = ear_model(&rec).unwrap();
        let n = pattern.band_centers_bark.len();
        assert_eq!(n, ((hz_to_bark(16_000.0) - hz_to_bark(80.0)) / 0.25).ceil() as usize);
        assert!(pattern.band_centers_bark.windows(2).all(|w| (w[1] - w[0] - 0.25).abs() < 1e-12));
        assert!(pattern.excitation.iter().all(|row| row.len() == n && row.iter().all(|&e| e >= 0.0)));
        assert_eq!(pattern.excitation.len(), FrameSpec::default().frame_starts(rec.len()).count());
    }

    #[test]
    fn full_scale_sine_sits_near_120_db() {
        let rec = gen_tone(&ToneSpec {
            duration_s: 0.2,
            level_dbfs: 0.0,
            ..Default::default()
        })
        .unwrap();
        let pattern = ear_model(&rec).unwrap();
        let peak = pattern.excitation[2].iter().cloned().fold(0.0, f64::max);
        let db = 10.0 * (peak / E0).log10();
        assert!((110.0..125.0).contains(&db), "{db} dB");
    }

    #[test]
    fn ear_model_rejects_bad_input() {
        let silent = Recording::new(vec![0.0; 8192], 44_100, "z");
        assert!(matches!(ear_model(&silent), Err(LoudnessError::Unmeasurable { .. })));
        let rate = Recording::new(vec![0.1; 8192], 48_000, "r");
        assert_eq!(ear_model(&rate), Err(LoudnessError::UnsupportedSampleRate(48_000)));
    }

    #[test]
    fn noise_loudness_argument_checks() {
        let r = tone(1.0);
        let short = tone(0.9);
        assert!(matches!(
            rms_noise_loudness(&short, &r),
            Err(LoudnessError::LengthMismatch { .. })
        ));
        let near = tone(0.97);
        assert!(rms_noise_loudness(&near, &r).is_ok());
        let silent = Recording::new(vec![0.0; r.len()], 44_100, "z");
        assert!(matches!(
            rms_noise_loudness(&r, &silent),
            Err(LoudnessError::Unmeasurable { which: "reference", .. })
        ));
        // a silent test is legal: nothing exceeds the reference
        assert_eq!(rms_noise_loudness(&silent, &r).unwrap().rms_noise_loudness, 0.0);
    }

    #[test]
    fn normalization_removes_pure_gain_change() {
        let r = tone(0.5);
        let louder = r.map(|x| x * 2.0);
        let raw = rms_noise_loudness(&louder, &r).unwrap().rms_noise_loudness;
        assert!(raw > 0.0);
        let opts = NoiseLoudnessOptions {
            normalize_level: true,
            ..Default::default()
        };
        let norm = rms_noise_loudness_with(&louder, &r, &opts).unwrap().rms_noise_loudness;
        assert!(norm < 1e-3 * raw, "{norm} vs {raw}");
    }
}
