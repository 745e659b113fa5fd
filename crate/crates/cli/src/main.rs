use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use budcheck::analyze::{self, AnalyzeOptions};
use budcheck::generate::{self, GenOptions, SignalSelection};
use budcheck::report::{self, ModelRequest};
use budcheck::simulate;
use budcheck_core::metrics::{FrequencyGrid, DEFAULT_GRID_POINTS};
use budcheck_core::session::BaselineRun;
use budcheck_core::siggen::{SweepSpec, ToneSpec};
use clap::{Parser, Subcommand, ValueEnum};

/// Earbud degradation measurement: test signals, synthetic laundering,
/// metric analysis and trajectory models.
#[derive(Debug, Parser)]
#[command(name = "budcheck", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SignalArg {
    All,
    Sweep,
    Tone,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the sweep and/or tone test signals as WAV files.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        signal: SignalArg,
        #[arg(long, default_value_t = SweepSpec::default().f0_hz)]
        f0_hz: f64,
        #[arg(long, default_value_t = SweepSpec::default().f1_hz)]
        f1_hz: f64,
        #[arg(long, default_value_t = ToneSpec::default().freq_hz)]
        tone_hz: f64,
        #[arg(long, default_value_t = 15.0)]
        duration_s: f64,
        #[arg(long, default_value_t = -14.0, allow_hyphen_values = true)]
        level_dbfs: f64,
        #[arg(long, default_value_t = 44_100)]
        sample_rate_hz: u32,
        /// Add raised-cosine fades; the bare flag uses 10 ms.
        #[arg(long, num_args = 0..=1, default_missing_value = "10")]
        ramp_ms: Option<f64>,
    },
    /// Render a synthetic degradation corpus and its manifest.
    Simulate {
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = "BUDCHECK_SEED", default_value_t = 0)]
        seed: u64,
    },
    /// Compute metrics for every manifest entry against its baseline.
    Analyze {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the manifest's baseline cycle.
        #[arg(long)]
        baseline_cycle: Option<u32>,
        /// `matching` (same run index) or a fixed run index.
        #[arg(long, default_value = "matching")]
        baseline_run: BaselineRun,
        #[arg(long, default_value_t = -60.0, allow_hyphen_values = true)]
        silence_threshold_dbfs: f64,
        #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
        grid_points: usize,
        /// Response band as `lo:hi` in Hz.
        #[arg(long, default_value = "40:16000", value_parser = parse_band)]
        band: (f64, f64),
        #[arg(long, default_value_t = 5)]
        harmonics: usize,
    },
    /// Plots and model summaries from analysis results.
    Report {
        /// results.json, results.csv or the directory holding them.
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Model formula, repeatable, e.g. "cycle ~ thd_dbc" or
        /// "cycle ~ rms_noise_loudness @music". Defaults to the standard set.
        #[arg(long = "model")]
        models: Vec<ModelRequest>,
    },
}

fn parse_band(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or("expected lo:hi")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("band low edge: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("band high edge: {e}"))?;
    Ok((lo, hi))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen {
            out,
            signal,
            f0_hz,
            f1_hz,
            tone_hz,
            duration_s,
            level_dbfs,
            sample_rate_hz,
            ramp_ms,
        } => {
            let opts = GenOptions {
                selection: match signal {
                    SignalArg::All => SignalSelection::All,
                    SignalArg::Sweep => SignalSelection::Sweep,
                    SignalArg::Tone => SignalSelection::Tone,
                },
                sweep: SweepSpec {
                    f0_hz,
                    f1_hz,
                    duration_s,
                    level_dbfs,
                    sample_rate_hz,
                },
                tone: ToneSpec {
                    freq_hz: tone_hz,
                    duration_s,
                    level_dbfs,
                    sample_rate_hz,
                },
                ramp_s: ramp_ms.map(|ms| ms / 1000.0),
            };
            let generated = generate::run(&out, &opts)?;
            println!("{}", serde_json::to_string_pretty(&generated)?);
        }
        Command::Simulate { profile, out, seed } => {
            let s = simulate::run(&profile, &out, seed)?;
            println!(
                "wrote {} recordings over {} cycles; manifest {}",
                s.entries,
                s.cycles,
                s.manifest_path.display()
            );
        }
        Command::Analyze {
            manifest,
            out,
            baseline_cycle,
            baseline_run,
            silence_threshold_dbfs,
            grid_points,
            band,
            harmonics,
        } => {
            let opts = AnalyzeOptions {
                baseline_cycle,
                baseline_run,
                silence_threshold_dbfs,
                grid: FrequencyGrid::log_spaced(grid_points, band.0, band.1).context("--grid-points/--band")?,
                harmonics,
            };
            let analysis = analyze::run(&manifest, &out, &opts)?;
            for row in analysis.rows.iter().filter(|r| r.error.is_some()) {
                eprintln!(
                    "warning: {}:{} {} {} LC{} run{}: {}",
                    row.pair,
                    row.side,
                    row.source,
                    row.signal,
                    row.cycle,
                    row.run,
                    row.error.as_deref().unwrap_or_default()
                );
            }
            let measurable = analysis.rows.iter().filter(|r| r.measurable).count();
            println!(
                "analyzed {} entries ({} measurable, {} with errors) into {}",
                analysis.rows.len(),
                measurable,
                analysis.failed_rows(),
                out.display()
            );
        }
        Command::Report { results, out, models } => {
            let models = if models.is_empty() { report::default_models() } else { models };
            let summary = report::run(&results, &out, &models)?;
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            println!("wrote {} files into {}", summary.files.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
