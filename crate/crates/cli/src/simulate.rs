use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use budcheck_core::audio::{read_wav, write_wav};
use budcheck_core::degrade::{reference_file_name, simulate_trajectory, SimulationError, TestSignals};
use budcheck_core::session::SignalKind;
use budcheck_core::siggen::{gen_linear_sweep, gen_tone};

use crate::profile::SimulationProfile;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug)]
pub struct SimulateSummary {
    pub manifest_path: PathBuf,
    pub entries: usize,
    pub cycles: u32,
}

/// Renders the corpus described by the profile at `profile_path` into
/// `out_dir`, with the clean references and a manifest alongside.
pub fn run(profile_path: &Path, out_dir: &Path, seed: u64) -> Result<SimulateSummary> {
    let profile = SimulationProfile::load(profile_path)?;
    let music = match &profile.music_path {
        Some(p) if profile.signals.contains(&SignalKind::Music) => {
            let base = profile_path.parent().unwrap_or(Path::new("."));
            Some(read_wav(base.join(p)).context("music_path")?)
        }
        _ => None,
    };
    let signals = TestSignals {
        sweep: gen_linear_sweep(&profile.sweep)?,
        tone: gen_tone(&profile.tone)?,
        music,
        sweep_spec: profile.sweep,
        tone_spec: profile.tone,
    };
    std::fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;

    let manifest = simulate_trajectory(&profile.damage(), &signals, &profile.layout(), seed, |entry, rec| {
        write_wav(out_dir.join(&entry.path), &rec)
    })
    .map_err(|e| match e {
        SimulationError::Degrade(e) => anyhow::Error::new(e).context("invalid profile"),
        SimulationError::Sink(e) => anyhow::Error::new(e),
    })?;

    for kind in &profile.signals {
        let rec = match kind {
            SignalKind::Sweep => &signals.sweep,
            SignalKind::Tone => &signals.tone,
            SignalKind::Music => signals.music.as_ref().expect("music loaded"),
        };
        write_wav(out_dir.join(reference_file_name(*kind)), rec)?;
    }
    let manifest_path = out_dir.join(MANIFEST_FILE);
    std::fs::write(&manifest_path, manifest.to_json() + "\n")
        .with_context(|| format!("cannot write {}", manifest_path.display()))?;
    Ok(SimulateSummary {
        manifest_path,
        entries: manifest.entries.len(),
        cycles: profile.damage().max_cycle() + 1,
    })
}
