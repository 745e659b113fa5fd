//! Synthetic damage operators and the laundry-cycle trajectory simulator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::Recording;
use crate::session::{ManifestEntry, SessionManifest, SignalKind, Side, Source};
use crate::siggen::{SweepSpec, ToneSpec};

#[derive(Debug, Error, PartialEq)]
pub enum DegradeError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("input is silent; SNR is undefined")]
    SilentInput,
    #[error("invalid damage profile: {0}")]
    InvalidProfile(String),
    #[error("profile requests the music signal but no music recording was supplied")]
    MissingMusic,
}

fn scale(rec: &Recording, g: f64) -> Recording {
    rec.map(|x| x * g)
}

pub fn db_to_gain(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// Broadband level loss.
pub fn apply_attenuation(rec: &Recording, gain_db: f64) -> Result<Recording, DegradeError> {
    if !(gain_db <= 0.0) {
        return Err(DegradeError::InvalidParameter(format!(
            "attenuation gain_db ({gain_db}) must be <= 0"
        )));
    }
    if gain_db == 0.0 {
        return Ok(rec.clone());
    }
    Ok(scale(rec, db_to_gain(gain_db)))
}

/// Second-order peaking filter (RBJ cookbook form), normalized so `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakingBiquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl PeakingBiquad {
    pub fn new(center_hz: f64, q_factor: f64, gain_db: f64, sample_rate_hz: u32) -> Self {
        let amp = 10f64.powf(gain_db / 40.0);
        let w0 = std::f64::consts::TAU * center_hz / sample_rate_hz as f64;
        let alpha = w0.sin() / (2.0 * q_factor);
        let cos = w0.cos();
        let a0 = 1.0 + alpha / amp;
        Self {
            b: [
                (1.0 + alpha * amp) / a0,
                -2.0 * cos / a0,
                (1.0 - alpha * amp) / a0,
            ],
            a: [1.0, -2.0 * cos / a0, (1.0 - alpha / amp) / a0],
        }
    }

    pub fn process(&self, input: &[f64]) -> Vec<f64> {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        let (mut x1, mut x2, mut y1, mut y2) = (0.0f64, 0.0, 0.0, 0.0);
        input
            .iter()
            .map(|&x| {
                let y = b0 * x + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
                x2 = x1;
                x1 = x;
                y2 = y1;
                y1 = y;
                y
            })
            .collect()
    }
}

pub fn apply_notch(rec: &Recording, center_hz: f64, q_factor: f64, depth_db: f64) -> Result<Recording, DegradeError> {
    let nyquist = rec.sample_rate_hz as f64 / 2.0;
    if !(center_hz > 0.0 && center_hz < nyquist) {
        return Err(DegradeError::InvalidParameter(format!(
            "notch center_hz ({center_hz}) must lie in (0, {nyquist})"
        )));
    }
    if !(q_factor > 0.0 && q_factor.is_finite()) {
        return Err(DegradeError::InvalidParameter(format!(
            "notch q_factor ({q_factor}) must be positive"
        )));
    }
    if !(depth_db <= 0.0) {
        return Err(DegradeError::InvalidParameter(format!(
            "notch depth_db ({depth_db}) must be <= 0"
        )));
    }
    let filter = PeakingBiquad::new(center_hz, q_factor, depth_db, rec.sample_rate_hz);
    Ok(Recording {
        samples: filter.process(&rec.samples),
        sample_rate_hz: rec.sample_rate_hz,
        label: rec.label.clone(),
    })
}

/// Normalized soft clip `tanh(drive·x) / tanh(drive)`.
pub fn apply_clip_distortion(rec: &Recording, drive: f64) -> Result<Recording, DegradeError> {
    if !(drive >= 1.0 && drive.is_finite()) {
        return Err(DegradeError::InvalidParameter(format!(
            "clip drive ({drive}) must be >= 1"
        )));
    }
    let norm = drive.tanh();
    Ok(rec.map(|x| (drive * x).tanh() / norm))
}

/// Adds white Gaussian noise at the requested SNR relative to the input
/// power; the same seed always yields the same noise.
pub fn apply_noise(rec: &Recording, snr_db: f64, seed: u64) -> Result<Recording, DegradeError> {
    if !snr_db.is_finite() {
        return Err(DegradeError::InvalidParameter(format!("snr_db ({snr_db}) must be finite")));
    }
    let power = crate::audio::rms(&rec.samples).powi(2);
    if power == 0.0 {
        return Err(DegradeError::SilentInput);
    }
    let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = rec
        .samples
        .iter()
        .map(|&x| {
            let n: f64 = StandardNormal.sample(&mut rng);
            x + sigma * n
        })
        .collect();
    Ok(Recording::new(samples, rec.sample_rate_hz, rec.label.clone()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Notch {
    pub center_hz: f64,
    pub q_factor: f64,
    pub depth_db: f64,
}

/// Damage applied at one laundry cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CycleDamage {
    pub broadband_gain_db: f64,
    pub notches: Vec<Notch>,
    /// Soft-clip strength; exactly 1 disables the clipper.
    pub clip_drive: f64,
    pub additive_noise_snr_db: Option<f64>,
    pub failure: bool,
}

impl Default for CycleDamage {
    fn default() -> Self {
        Self {
            broadband_gain_db: 0.0,
            notches: Vec::new(),
            clip_drive: 1.0,
            additive_noise_snr_db: None,
            failure: false,
        }
    }
}

impl CycleDamage {
    pub fn is_identity(&self) -> bool {
        *self == CycleDamage::default()
    }

    fn validate(&self, cycle: usize) -> Result<(), DegradeError> {
        let bad = |field: &str, msg: String| {
            Err(DegradeError::InvalidProfile(format!("cycles[{cycle}].{field}: {msg}")))
        };
        if !(self.broadband_gain_db <= 0.0) {
            return bad("broadband_gain_db", format!("{} must be <= 0", self.broadband_gain_db));
        }
        if !(self.clip_drive >= 1.0 && self.clip_drive.is_finite()) {
            return bad("clip_drive", format!("{} must be >= 1", self.clip_drive));
        }
        if let Some(snr) = self.additive_noise_snr_db {
            if !snr.is_finite() {
                return bad("additive_noise_snr_db", format!("{snr} must be finite"));
            }
        }
        for (i, n) in self.notches.iter().enumerate() {
            if !(n.center_hz > 0.0) || !(n.q_factor > 0.0) || !(n.depth_db <= 0.0) {
                return bad(
                    &format!("notches[{i}]"),
                    format!(
                        "need center_hz > 0, q_factor > 0, depth_db <= 0 (got {}, {}, {})",
                        n.center_hz, n.q_factor, n.depth_db
                    ),
                );
            }
        }
        Ok(())
    }

    /// Damaged copy of a clean signal. The clipper runs at unity small-signal
    /// gain (its `tanh(d)/d` make-up is removed) so that level loss is
    /// governed by `broadband_gain_db` alone.
    pub fn apply(&self, clean: &Recording, noise_seed: u64) -> Result<Recording, DegradeError> {
        if self.failure {
            return Ok(Recording::new(
                vec![0.0; clean.len()],
                clean.sample_rate_hz,
                clean.label.clone(),
            ));
        }
        let mut rec = clean.clone();
        if self.clip_drive > 1.0 {
            rec = apply_clip_distortion(&rec, self.clip_drive)?;
            let makeup = self.clip_drive.tanh() / self.clip_drive;
            rec = scale(&rec, makeup);
        }
        for n in &self.notches {
            rec = apply_notch(&rec, n.center_hz, n.q_factor, n.depth_db)?;
        }
        rec = apply_attenuation(&rec, self.broadband_gain_db)?;
        if let Some(snr) = self.additive_noise_snr_db {
            rec = apply_noise(&rec, snr, noise_seed)?;
        }
        Ok(rec)
    }
}

/// Per-cycle damage schedule; entry `c` applies at laundry cycle `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DamageProfile {
    pub cycles: Vec<CycleDamage>,
}

impl DamageProfile {
    pub fn validate(&self) -> Result<(), DegradeError> {
        let first = self
            .cycles
            .first()
            .ok_or_else(|| DegradeError::InvalidProfile("cycles: schedule is empty".into()))?;
        if !first.is_identity() {
            return Err(DegradeError::InvalidProfile(
                "cycles[0]: cycle 0 must be the undamaged baseline".into(),
            ));
        }
        let mut failed = false;
        for (c, d) in self.cycles.iter().enumerate() {
            d.validate(c)?;
            if failed && !d.failure {
                return Err(DegradeError::InvalidProfile(format!(
                    "cycles[{c}].failure: a failed transducer cannot recover"
                )));
            }
            failed |= d.failure;
        }
        Ok(())
    }

    pub fn max_cycle(&self) -> u32 {
        self.cycles.len().saturating_sub(1) as u32
    }
}

/// Which recordings a simulated session contains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLayout {
    pub pairs: Vec<String>,
    pub sides: Vec<Side>,
    pub sources: Vec<Source>,
    pub runs: u32,
    pub signals: Vec<SignalKind>,
}

impl Default for SessionLayout {
    fn default() -> Self {
        Self {
            pairs: vec!["Alpha".into()],
            sides: vec![Side::Left, Side::Right],
            sources: vec![Source::Mic, Source::Phone],
            runs: 3,
            signals: vec![SignalKind::Sweep, SignalKind::Tone],
        }
    }
}

impl SessionLayout {
    fn validate(&self) -> Result<(), DegradeError> {
        let empty = |field: &str| Err(DegradeError::InvalidProfile(format!("{field}: must not be empty")));
        if self.pairs.is_empty() {
            return empty("pairs");
        }
        if self.sides.is_empty() {
            return empty("sides");
        }
        if self.sources.is_empty() {
            return empty("sources");
        }
        if self.signals.is_empty() {
            return empty("signals");
        }
        if self.runs == 0 {
            return Err(DegradeError::InvalidProfile("runs: must be at least 1".into()));
        }
        Ok(())
    }
}

/// Clean stimuli fed to the simulated transducers.
#[derive(Debug, Clone)]
pub struct TestSignals {
    pub sweep: Recording,
    pub tone: Recording,
    pub music: Option<Recording>,
    pub sweep_spec: SweepSpec,
    pub tone_spec: ToneSpec,
}

impl TestSignals {
    fn get(&self, kind: SignalKind) -> Result<&Recording, DegradeError> {
        match kind {
            SignalKind::Sweep => Ok(&self.sweep),
            SignalKind::Tone => Ok(&self.tone),
            SignalKind::Music => self.music.as_ref().ok_or(DegradeError::MissingMusic),
        }
    }
}

/// File names under which the clean reference signals are registered.
pub fn reference_file_name(kind: SignalKind) -> String {
    format!("reference_{kind}.wav")
}

/// Stable 64-bit FNV-1a over a byte string, mixed with the session seed.
fn entry_seed(seed: u64, key: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in key.bytes().chain(seed.to_le_bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Renders every (cycle, signal, pair, side, source, run) recording of a
/// session and hands it to `sink` in manifest order. Runs differ only
/// through their noise seeds.
pub fn simulate_trajectory<E>(
    profile: &DamageProfile,
    signals: &TestSignals,
    layout: &SessionLayout,
    seed: u64,
    mut sink: impl FnMut(&ManifestEntry, Recording) -> Result<(), E>,
) -> Result<SessionManifest, SimulationError<E>> {
    profile.validate()?;
    layout.validate()?;
    for &kind in &layout.signals {
        signals.get(kind)?;
    }
    let mut entries = Vec::new();
    for (cycle, damage) in profile.cycles.iter().enumerate() {
        for &signal in &layout.signals {
            let clean = signals.get(signal)?;
            for pair in &layout.pairs {
                for &side in &layout.sides {
                    for &source in &layout.sources {
                        for run in 1..=layout.runs {
                            let mut entry = ManifestEntry {
                                pair: pair.clone(),
                                side,
                                source,
                                signal,
                                cycle: cycle as u32,
                                run,
                                path: String::new(),
                            };
                            entry.path = entry.conventional_file_name();
                            let mut rec = damage.apply(clean, entry_seed(seed, &entry.path))?;
                            rec.label = entry.path.trim_end_matches(".wav").to_string();
                            sink(&entry, rec).map_err(SimulationError::Sink)?;
                            entries.push(entry);
                        }
                    }
                }
            }
        }
    }
    let references = layout
        .signals
        .iter()
        .map(|&k| (k, reference_file_name(k)))
        .collect();
    Ok(SessionManifest {
        baseline_cycle: 0,
        sweep: signals.sweep_spec,
        tone: signals.tone_spec,
        references,
        entries,
    })
}

#[derive(Debug, Error)]
pub enum SimulationError<E> {
    #[error(transparent)]
    Degrade(#[from] DegradeError),
    #[error("writing corpus failed: {0}")]
    Sink(E),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(samples: Vec<f64>) -> Recording {
        Recording::new(samples, 44_100, "t")
    }

    fn ramp(n: usize) -> Recording {
        rec((0..n).map(|i| ((i as f64) * 0.37).sin() * 0.3).collect())
    }

    #[test]
    fn attenuation_identity_and_halving() {
        let x = ramp(500);
        assert_eq!(apply_attenuation(&x, 0.0).unwrap(), x);
        let half = apply_attenuation(&x, -20.0 * 2f64.log10()).unwrap();
        for (a, b) in half.samples.iter().zip(&x.samples) {
            assert!((a - b * 0.5).abs() < 1e-12);
        }
        assert!(apply_attenuation(&x, 1.0).is_err());
    }

    #[test]
    fn zero_depth_notch_is_transparent() {
        let x = ramp(2000);
        let y = apply_notch(&x, 1000.0, 2.0, 0.0).unwrap();
        for (a, b) in y.samples.iter().zip(&x.samples) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(apply_notch(&x, 0.0, 2.0, -3.0).is_err());
        assert!(apply_notch(&x, 30_000.0, 2.0, -3.0).is_err());
        assert!(apply_notch(&x, 1000.0, 0.0, -3.0).is_err());
        assert!(apply_notch(&x, 1000.0, 2.0, 3.0).is_err());
    }

    #[test]
    fn clip_is_odd_and_bounded() {
        let x = ramp(1000);
        let neg = x.map(|v| -v);
        for drive in [1.0, 2.5, 8.0] {
            let y = apply_clip_distortion(&x, drive).unwrap();
            let yn = apply_clip_distortion(&neg, drive).unwrap();
            for (a, b) in y.samples.iter().zip(&yn.samples) {
                assert_eq!(*a, -*b);
            }
        }
        assert!(apply_clip_distortion(&x, 0.5).is_err());
    }

    #[test]
    fn noise_is_seeded() {
        let x = ramp(1000);
        let a = apply_noise(&x, 20.0, 7).unwrap();
        let b = apply_noise(&x, 20.0, 7).unwrap();
        let c = apply_noise(&x, 20.0, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let faint = apply_noise(&x, 200.0, 1).unwrap();
        for (p, q) in faint.samples.iter().zip(&x.samples) {
            assert!((p - q).abs() < 1e-8);
        }
        assert_eq!(apply_noise(&rec(vec![0.0; 10]), 10.0, 1), Err(DegradeError::SilentInput));
        assert!(apply_noise(&x, f64::INFINITY, 1).is_err());
    }

    #[test]
    fn profile_validation() {
        let ok = DamageProfile {
            cycles: vec![
                CycleDamage::default(),
                CycleDamage {
                    broadband_gain_db: -2.0,
                    clip_drive: 1.5,
                    ..Default::default()
                },
                CycleDamage {
                    failure: true,
                    ..Default::default()
                },
            ],
        };
        assert!(ok.validate().is_ok());
        assert_eq!(ok.max_cycle(), 2);

        let mut recovering = ok.clone();
        recovering.cycles.push(CycleDamage::default());
        assert!(recovering.validate().unwrap_err().to_string().contains("cycles[3].failure"));

        let mut damaged_baseline = ok.clone();
        damaged_baseline.cycles[0].broadband_gain_db = -1.0;
        assert!(damaged_baseline.validate().unwrap_err().to_string().contains("cycles[0]"));

        let mut boost = ok.clone();
        boost.cycles[1].broadband_gain_db = 3.0;
        assert!(boost
            .validate()
            .unwrap_err()
            .to_string()
            .contains("cycles[1].broadband_gain_db"));

        assert!(DamageProfile { cycles: vec![] }.validate().is_err());
    }

    #[test]
    fn failure_cycle_renders_silence() {
        let x = ramp(100);
        let dead = CycleDamage {
            failure: true,
            ..Default::default()
        };
        let y = dead.apply(&x, 0).unwrap();
        assert_eq!(y.len(), 100);
        assert!(y.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn entry_seeds_differ_per_key() {
        assert_ne!(entry_seed(1, "a"), entry_seed(1, "b"));
        assert_ne!(entry_seed(1, "a"), entry_seed(2, "a"));
        assert_eq!(entry_seed(5, "abc"), entry_seed(5, "abc"));
    }
}
