//! Simulation profile: session layout, stimuli and per-cycle damage in one
//! JSON document.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use budcheck_core::degrade::{CycleDamage, DamageProfile, SessionLayout};
use budcheck_core::session::{SignalKind, Side, Source};
use budcheck_core::siggen::{SweepSpec, ToneSpec};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationProfile {
    #[serde(default = "default_pairs")]
    pub pairs: Vec<String>,
    #[serde(default = "default_sides")]
    pub sides: Vec<Side>,
    #[serde(default = "default_sources")]
    pub sources: Vec<Source>,
    #[serde(default = "default_runs")]
    pub runs: u32,
    #[serde(default = "default_signals")]
    pub signals: Vec<SignalKind>,
    /// WAV registered as the music signal, relative to the profile file.
    #[serde(default)]
    pub music_path: Option<PathBuf>,
    #[serde(default)]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub tone: ToneSpec,
    pub cycles: Vec<CycleDamage>,
}

fn default_pairs() -> Vec<String> {
    SessionLayout::default().pairs
}
fn default_sides() -> Vec<Side> {
    SessionLayout::default().sides
}
fn default_sources() -> Vec<Source> {
    SessionLayout::default().sources
}
fn default_runs() -> u32 {
    SessionLayout::default().runs
}
fn default_signals() -> Vec<SignalKind> {
    SessionLayout::default().signals
}

impl SimulationProfile {
    /// Parses and validates a profile. Syntax errors report line and column;
    /// semantic errors name the offending field.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read profile {}", path.display()))?;
        let profile: Self =
            serde_json::from_str(&text).with_context(|| format!("malformed profile {}", path.display()))?;
        profile
            .validate()
            .with_context(|| format!("invalid profile {}", path.display()))?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        self.sweep.validate().context("sweep")?;
        self.tone.validate().context("tone")?;
        self.damage().validate()?;
        if self.signals.contains(&SignalKind::Music) && self.music_path.is_none() {
            bail!("music_path: required when signals include music");
        }
        Ok(())
    }

    pub fn layout(&self) -> SessionLayout {
        SessionLayout {
            pairs: self.pairs.clone(),
            sides: self.sides.clone(),
            sources: self.sources.clone(),
            runs: self.runs,
            signals: self.signals.clone(),
        }
    }

    pub fn damage(&self) -> DamageProfile {
        DamageProfile {
            cycles: self.cycles.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_profile_takes_defaults() {
        let p: SimulationProfile = serde_json::from_str(r#"{"cycles": [{}, {"failure": true}]}"#).unwrap();
        assert_eq!(p.layout(), SessionLayout::default());
        p.validate().unwrap();
    }

    #[test]
    fn unknown_field_is_rejected_with_position() {
        let err = serde_json::from_str::<SimulationProfile>("{\n  \"cycles\": [],\n  \"pears\": []\n}").unwrap_err();
        assert!(err.to_string().contains("pears"));
        assert_eq!(err.line(), 3);
    }

    #[test]
    fn music_needs_a_path() {
        let p: SimulationProfile =
            serde_json::from_str(r#"{"signals": ["music"], "cycles": [{}]}"#).unwrap();
        assert!(p.validate().unwrap_err().to_string().contains("music_path"));
    }
}
