//! Test-signal synthesis: the 1 kHz tone and the linear 20 Hz–20 kHz sweep,
//! both 15 s long at −14 dBFS and 44.1 kHz by default.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::Recording;

#[derive(Debug, Error, PartialEq)]
pub enum SignalError {
    #[error("invalid signal spec: {0}")]
    InvalidSpec(String),
    #[error("time {t} s outside sweep duration [0, {duration}] s")]
    TimeOutOfRange { t: f64, duration: f64 },
}

/// Peak amplitude for a level in dBFS.
pub fn dbfs_to_amplitude(level_dbfs: f64) -> f64 {
    10f64.powf(level_dbfs / 20.0)
}

fn sample_count(duration_s: f64, sample_rate_hz: u32) -> usize {
    (duration_s * sample_rate_hz as f64).round() as usize
}

fn check_common(duration_s: f64, level_dbfs: f64, sample_rate_hz: u32) -> Result<(), SignalError> {
    if sample_rate_hz == 0 {
        return Err(SignalError::InvalidSpec("sample_rate_hz must be positive".into()));
    }
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(SignalError::InvalidSpec(format!(
            "duration_s ({duration_s}) must be positive"
        )));
    }
    if !(level_dbfs <= 0.0) {
        return Err(SignalError::InvalidSpec(format!(
            "level_dbfs ({level_dbfs}) must be <= 0"
        )));
    }
    if sample_count(duration_s, sample_rate_hz) == 0 {
        return Err(SignalError::InvalidSpec(
            "duration_s is shorter than one sample".into(),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub f0_hz: f64,
    pub f1_hz: f64,
    pub duration_s: f64,
    pub level_dbfs: f64,
    pub sample_rate_hz: u32,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            f0_hz: 20.0,
            f1_hz: 20_000.0,
            duration_s: 15.0,
            level_dbfs: -14.0,
            sample_rate_hz: 44_100,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), SignalError> {
        check_common(self.duration_s, self.level_dbfs, self.sample_rate_hz)?;
        let nyquist = self.sample_rate_hz as f64 / 2.0;
        if !(self.f0_hz > 0.0) {
            return Err(SignalError::InvalidSpec(format!(
                "f0_hz ({}) must be positive",
                self.f0_hz
            )));
        }
        if !(self.f0_hz < self.f1_hz) {
            return Err(SignalError::InvalidSpec(format!(
                "f0_hz ({}) must be below f1_hz ({})",
                self.f0_hz, self.f1_hz
            )));
        }
        if !(self.f1_hz < nyquist) {
            return Err(SignalError::InvalidSpec(format!(
                "f1_hz ({}) must be below Nyquist ({nyquist})",
                self.f1_hz
            )));
        }
        Ok(())
    }

    pub fn amplitude(&self) -> f64 {
        dbfs_to_amplitude(self.level_dbfs)
    }

    /// Sweep rate in Hz per second.
    pub fn rate_hz_per_s(&self) -> f64 {
        (self.f1_hz - self.f0_hz) / self.duration_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToneSpec {
    pub freq_hz: f64,
    pub duration_s: f64,
    pub level_dbfs: f64,
    pub sample_rate_hz: u32,
}

impl Default for ToneSpec {
    fn default() -> Self {
        Self {
            freq_hz: 1000.0,
            duration_s: 15.0,
            level_dbfs: -14.0,
            sample_rate_hz: 44_100,
        }
    }
}

impl ToneSpec {
    pub fn validate(&self) -> Result<(), SignalError> {
        check_common(self.duration_s, self.level_dbfs, self.sample_rate_hz)?;
        let nyquist = self.sample_rate_hz as f64 / 2.0;
        if !(self.freq_hz > 0.0 && self.freq_hz < nyquist) {
            return Err(SignalError::InvalidSpec(format!(
                "freq_hz ({}) must lie in (0, {nyquist})",
                self.freq_hz
            )));
        }
        Ok(())
    }
}

/// Generated samples are rounded to single precision so that the signal a
/// WAV file carries is exactly the signal that was generated.
fn quantize(x: f64) -> f64 {
    x as f32 as f64
}

/// Zero-phase sine at the requested level.
pub fn gen_tone(spec: &ToneSpec) -> Result<Recording, SignalError> {
    spec.validate()?;
    let amp = dbfs_to_amplitude(spec.level_dbfs);
    let rate = spec.sample_rate_hz as f64;
    let n = sample_count(spec.duration_s, spec.sample_rate_hz);
    let omega = std::f64::consts::TAU * spec.freq_hz / rate;
    let samples = (0..n).map(|i| quantize(amp * (omega * i as f64).sin())).collect();
    Ok(Recording::new(samples, spec.sample_rate_hz, "tone"))
}

/// Linear sweep `A·sin(2π(f0·t + (f1 − f0)·t²/(2T)))`.
pub fn gen_linear_sweep(spec: &SweepSpec) -> Result<Recording, SignalError> {
    spec.validate()?;
    let amp = spec.amplitude();
    let rate = spec.sample_rate_hz as f64;
    let n = sample_count(spec.duration_s, spec.sample_rate_hz);
    let k = spec.rate_hz_per_s() / 2.0;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / rate;
            // keep the phase argument small to hold precision late in the sweep
            let cycles = (spec.f0_hz * t + k * t * t).fract();
            quantize(amp * (std::f64::consts::TAU * cycles).sin())
        })
        .collect();
    Ok(Recording::new(samples, spec.sample_rate_hz, "sweep"))
}

/// Instantaneous frequency of the sweep at time `t`.
pub fn instantaneous_frequency(spec: &SweepSpec, t: f64) -> Result<f64, SignalError> {
    if !(0.0..=spec.duration_s).contains(&t) {
        return Err(SignalError::TimeOutOfRange {
            t,
            duration: spec.duration_s,
        });
    }
    Ok(spec.f0_hz + spec.rate_hz_per_s() * t)
}

/// Time at which the sweep passes `freq_hz`, if it lies within the sweep.
pub fn time_at_frequency(spec: &SweepSpec, freq_hz: f64) -> Option<f64> {
    (spec.f0_hz..=spec.f1_hz)
        .contains(&freq_hz)
        .then(|| (freq_hz - spec.f0_hz) / spec.rate_hz_per_s())
}

/// Default fade length for [`apply_ramp`].
pub const DEFAULT_RAMP_S: f64 = 0.010;

/// Raised-cosine fade-in and fade-out of `ramp_s` seconds each.
pub fn apply_ramp(rec: &Recording, ramp_s: f64) -> Recording {
    let n = rec.len();
    let ramp = ((ramp_s * rec.sample_rate_hz as f64).round() as usize).min(n / 2);
    let mut out = rec.clone();
    for i in 0..ramp {
        let g = 0.5 - 0.5 * (std::f64::consts::PI * i as f64 / ramp as f64).cos();
        out.samples[i] *= g;
        out.samples[n - 1 - i] *= g;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_tone_length_and_peak() {
        let rec = gen_tone(&ToneSpec::default()).unwrap();
        assert_eq!(rec.len(), 661_500);
        assert_eq!(rec.sample_rate_hz, 44_100);
        let peak = rec.samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!((peak - 0.199_526).abs() < 1e-4, "peak {peak}");
        assert_eq!(rec.samples[0], 0.0);
    }

    #[test]
    fn zero_dbfs_tone_has_unit_peak() {
        let spec = ToneSpec {
            level_dbfs: 0.0,
            freq_hz: 11_025.0,
            duration_s: 0.01,
            ..Default::default()
        };
        let rec = gen_tone(&spec).unwrap();
        let peak = rec.samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!((peak - 1.0).abs() < 1e-6);
    }

    #[test]
    fn default_sweep_length_and_peak() {
        let spec = SweepSpec::default();
        let rec = gen_linear_sweep(&spec).unwrap();
        assert_eq!(rec.len(), 661_500);
        let peak = rec.samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(peak <= spec.amplitude() * (1.0 + 1e-7));
        assert!((peak - 0.1995).abs() < 1e-3);
    }

    #[test]
    fn instantaneous_frequency_law() {
        let spec = SweepSpec::default();
        assert_eq!(instantaneous_frequency(&spec, 0.0).unwrap(), 20.0);
        assert!((instantaneous_frequency(&spec, 15.0).unwrap() - 20_000.0).abs() < 1e-9);
        assert!((instantaneous_frequency(&spec, 7.5).unwrap() - 10_010.0).abs() < 1e-9);
        let t = time_at_frequency(&spec, 1000.0).unwrap();
        assert!((t - 0.7357).abs() < 1e-4);
        assert!((instantaneous_frequency(&spec, t).unwrap() - 1000.0).abs() < 1e-9);
        assert!(matches!(
            instantaneous_frequency(&spec, 15.1),
            Err(SignalError::TimeOutOfRange { .. })
        ));
        assert!(instantaneous_frequency(&spec, -0.1).is_err());
    }

    #[test]
    fn invalid_specs_name_the_violation() {
        let bad = SweepSpec {
            f0_hz: 20_000.0,
            f1_hz: 20.0,
            ..Default::default()
        };
        let msg = bad.validate().unwrap_err().to_string();
        assert!(msg.contains("f0_hz") && msg.contains("f1_hz"), "{msg}");
        let hot = ToneSpec {
            level_dbfs: 3.0,
            ..Default::default()
        };
        assert!(hot.validate().unwrap_err().to_string().contains("level_dbfs"));
        let above = ToneSpec {
            freq_hz: 30_000.0,
            ..Default::default()
        };
        assert!(gen_tone(&above).is_err());
        let nyq = SweepSpec {
            f1_hz: 22_050.0,
            ..Default::default()
        };
        assert!(nyq.validate().is_err());
    }

    #[test]
    fn ramp_fades_ends_only() {
        let spec = ToneSpec {
            duration_s: 0.1,
            ..Default::default()
        };
        let rec = gen_tone(&spec).unwrap();
        let ramped = apply_ramp(&rec, DEFAULT_RAMP_S);
        assert_eq!(ramped.samples[0], 0.0);
        assert_eq!(*ramped.samples.last().unwrap(), 0.0);
        assert_eq!(ramped.samples[2205], rec.samples[2205]);
    }
}
