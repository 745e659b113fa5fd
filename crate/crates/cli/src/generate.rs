use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use budcheck_core::audio::write_wav;
use budcheck_core::siggen::{apply_ramp, gen_linear_sweep, gen_tone, SweepSpec, ToneSpec};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalSelection {
    All,
    Sweep,
    Tone,
}

#[derive(Debug, Clone)]
pub struct GenOptions {
    pub selection: SignalSelection,
    pub sweep: SweepSpec,
    pub tone: ToneSpec,
    /// Raised-cosine fade at both ends; `None` leaves the signals untouched.
    pub ramp_s: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct Generated {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tone: Option<ToneSpec>,
    pub files: Vec<PathBuf>,
}

/// Writes `sweep.wav` and/or `tone.wav` into `out_dir`.
pub fn run(out_dir: &Path, opts: &GenOptions) -> Result<Generated> {
    let want_sweep = opts.selection != SignalSelection::Tone;
    let want_tone = opts.selection != SignalSelection::Sweep;
    // validate everything before touching the filesystem
    let sweep = want_sweep
        .then(|| gen_linear_sweep(&opts.sweep).context("invalid sweep"))
        .transpose()?;
    let tone = want_tone
        .then(|| gen_tone(&opts.tone).context("invalid tone"))
        .transpose()?;
    std::fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;

    let mut files = Vec::new();
    for (name, rec) in [("sweep.wav", sweep), ("tone.wav", tone)] {
        let Some(mut rec) = rec else { continue };
        if let Some(ramp) = opts.ramp_s {
            rec = apply_ramp(&rec, ramp);
        }
        let path = out_dir.join(name);
        write_wav(&path, &rec)?;
        files.push(path);
    }
    Ok(Generated {
        sweep: want_sweep.then_some(opts.sweep),
        tone: want_tone.then_some(opts.tone),
        files,
    })
}
