//! Batch analysis of a session corpus against its baseline cycle.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use budcheck_core::audio::{read_wav, Aligner, Recording, SILENCE_THRESHOLD_DBFS};
use budcheck_core::loudness::{rms_noise_loudness_with, NoiseLoudnessOptions};
use budcheck_core::metrics::{
    frequency_response_with, is_measurable, thd_with, DegradationMeasures, FrequencyGrid, FrequencyResponse,
    ThdOptions,
};
use budcheck_core::session::{BaselineRun, ManifestEntry, ResultRow, SessionManifest, Side, SignalKind, Source};
use budcheck_core::siggen::{gen_linear_sweep, gen_tone};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const RESULTS_CSV: &str = "results.csv";
pub const RESULTS_JSON: &str = "results.json";
pub const RESPONSES_JSON: &str = "responses.json";

#[derive(Debug, Clone)]
pub struct AnalyzeOptions {
    /// Overrides the manifest's baseline cycle.
    pub baseline_cycle: Option<u32>,
    pub baseline_run: BaselineRun,
    pub silence_threshold_dbfs: f64,
    pub grid: FrequencyGrid,
    pub harmonics: usize,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        Self {
            baseline_cycle: None,
            baseline_run: BaselineRun::Matching,
            silence_threshold_dbfs: SILENCE_THRESHOLD_DBFS,
            grid: FrequencyGrid::default(),
            harmonics: 5,
        }
    }
}

/// Sweep responses of every measurable sweep recording, for overlay plots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSet {
    pub grid_hz: Vec<f64>,
    pub responses: Vec<ResponseRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub pair: String,
    pub side: Side,
    pub source: Source,
    pub cycle: u32,
    pub run: u32,
    pub magnitude_db: Vec<f64>,
}

#[derive(Debug)]
pub struct Analysis {
    pub rows: Vec<ResultRow>,
    pub responses: ResponseSet,
}

impl Analysis {
    pub fn failed_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }
}

/// A recording after the measurability gate and alignment.
enum Prepared {
    Silent,
    Aligned(Recording),
}

struct Baseline {
    rec: Recording,
    response: Option<FrequencyResponse>,
}

struct Analyzer<'a> {
    manifest: &'a SessionManifest,
    base_dir: &'a Path,
    /// Ideal test signal per kind, with its aligner.
    references: BTreeMap<SignalKind, (Recording, Aligner)>,
    opts: &'a AnalyzeOptions,
}

impl Analyzer<'_> {
    fn prepare(&self, entry: &ManifestEntry) -> Result<Prepared, String> {
        let rec = read_wav(self.base_dir.join(&entry.path)).map_err(|e| e.to_string())?;
        if !is_measurable(&rec, self.opts.silence_threshold_dbfs) {
            return Ok(Prepared::Silent);
        }
        let (reference, aligner) = &self.references[&entry.signal];
        let lag = aligner.align(&rec).map_err(|e| format!("alignment failed: {e}"))?;
        Ok(Prepared::Aligned(rec.segment(lag, reference.len())))
    }

    fn response(&self, rec: &Recording) -> Result<FrequencyResponse, String> {
        frequency_response_with(rec, &self.manifest.sweep, &self.opts.grid, self.opts.silence_threshold_dbfs)
            .map_err(|e| e.to_string())
    }

    fn baseline(&self, entry: &ManifestEntry) -> Result<Baseline, String> {
        let rec = match self.prepare(entry)? {
            Prepared::Silent => return Err("baseline recording is not measurable".into()),
            Prepared::Aligned(rec) => rec,
        };
        let response = match entry.signal {
            SignalKind::Sweep => Some(self.response(&rec)?),
            _ => None,
        };
        Ok(Baseline { rec, response })
    }

    fn loudness(&self, rec: &Recording, baseline: &Baseline) -> Result<f64, String> {
        let opts = NoiseLoudnessOptions {
            silence_threshold_dbfs: self.opts.silence_threshold_dbfs,
            ..Default::default()
        };
        rms_noise_loudness_with(rec, &baseline.rec, &opts)
            .map(|r| r.rms_noise_loudness)
            .map_err(|e| format!("noise loudness: {e}"))
    }

    fn analyze_entry(
        &self,
        entry: &ManifestEntry,
        baseline: &Result<Baseline, String>,
    ) -> (ResultRow, Option<ResponseRecord>) {
        let mut row = ResultRow::blank(entry);
        let rec = match self.prepare(entry) {
            Err(e) => {
                row.error = Some(e);
                return (row, None);
            }
            Ok(Prepared::Silent) => return (row, None),
            Ok(Prepared::Aligned(rec)) => rec,
        };
        row.measurable = true;
        let baseline = match baseline {
            Ok(b) => b,
            Err(e) => {
                row.error = Some(format!("baseline: {e}"));
                return (row, None);
            }
        };
        let mut errors = Vec::new();
        let mut response = None;
        match entry.signal {
            SignalKind::Tone => {
                let opts = ThdOptions {
                    fundamental_hz: self.manifest.tone.freq_hz,
                    n_harmonics: self.opts.harmonics,
                    silence_threshold_dbfs: self.opts.silence_threshold_dbfs,
                };
                match thd_with(&rec, &opts) {
                    Ok(r) => row.thd_dbc = Some(r.thd_dbc),
                    Err(e) => errors.push(format!("thd: {e}")),
                }
                match self.loudness(&rec, baseline) {
                    Ok(v) => row.rms_noise_loudness = Some(v),
                    Err(e) => errors.push(e),
                }
            }
            SignalKind::Sweep => {
                let reference = baseline.response.as_ref().expect("sweep baselines carry a response");
                match self
                    .response(&rec)
                    .and_then(|r| DegradationMeasures::compute(&r, reference).map(|m| (r, m)).map_err(|e| e.to_string()))
                {
                    Ok((r, m)) => {
                        row.correlation = Some(m.correlation);
                        row.difference_mss = Some(m.difference_mss);
                        response = Some(ResponseRecord {
                            pair: entry.pair.clone(),
                            side: entry.side,
                            source: entry.source,
                            cycle: entry.cycle,
                            run: entry.run,
                            magnitude_db: r.magnitude_db,
                        });
                    }
                    Err(e) => errors.push(format!("response: {e}")),
                }
            }
            SignalKind::Music => match self.loudness(&rec, baseline) {
                Ok(v) => row.rms_noise_loudness = Some(v),
                Err(e) => errors.push(e),
            },
        }
        if !errors.is_empty() {
            row.error = Some(errors.join("; "));
        }
        (row, response)
    }
}

fn load_references(
    manifest: &SessionManifest,
    base_dir: &Path,
) -> Result<BTreeMap<SignalKind, (Recording, Aligner)>> {
    let kinds: BTreeSet<SignalKind> = manifest.entries.iter().map(|e| e.signal).collect();
    let mut out = BTreeMap::new();
    for kind in kinds {
        let rec = match (manifest.references.get(&kind), kind) {
            (Some(path), _) => read_wav(base_dir.join(path)).with_context(|| format!("reference for {kind}"))?,
            (None, SignalKind::Sweep) => gen_linear_sweep(&manifest.sweep)?,
            (None, SignalKind::Tone) => gen_tone(&manifest.tone)?,
            (None, SignalKind::Music) => bail!("references.music: music entries need a registered reference"),
        };
        let aligner = Aligner::new(&rec, rec.len()).with_context(|| format!("reference for {kind}"))?;
        out.insert(kind, (rec, aligner));
    }
    Ok(out)
}

/// Analyzes every manifest entry. Rows come back in manifest order; per-row
/// problems are recorded on the row rather than aborting the run.
pub fn analyze(manifest_path: &Path, opts: &AnalyzeOptions) -> Result<Analysis> {
    let mut manifest = SessionManifest::load(manifest_path)?;
    if let Some(c) = opts.baseline_cycle {
        manifest.baseline_cycle = c;
    }
    manifest.validate()?;
    let base_dir = manifest_path.parent().unwrap_or(Path::new("."));
    let ctx = Analyzer {
        references: load_references(&manifest, base_dir)?,
        manifest: &manifest,
        base_dir,
        opts,
    };

    let baseline_of: Vec<usize> = manifest
        .entries
        .iter()
        .map(|e| {
            let b = manifest.baseline_for(e, opts.baseline_run).expect("validated manifest");
            manifest.entries.iter().position(|x| std::ptr::eq(x, b)).unwrap()
        })
        .collect();
    let needed: Vec<usize> = baseline_of.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let baselines: BTreeMap<usize, Result<Baseline, String>> = needed
        .par_iter()
        .map(|&i| (i, ctx.baseline(&manifest.entries[i])))
        .collect();

    let results: Vec<(ResultRow, Option<ResponseRecord>)> = manifest
        .entries
        .par_iter()
        .zip(baseline_of.par_iter())
        .map(|(entry, b)| ctx.analyze_entry(entry, &baselines[b]))
        .collect();
    let (rows, responses): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(Analysis {
        rows,
        responses: ResponseSet {
            grid_hz: opts.grid.points().to_vec(),
            responses: responses.into_iter().flatten().collect(),
        },
    })
}

pub fn write_results_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// Writes the results table (CSV and JSON) and the response set into `out_dir`.
pub fn write_outputs(analysis: &Analysis, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
    let csv_path = out_dir.join(RESULTS_CSV);
    let json_path = out_dir.join(RESULTS_JSON);
    let resp_path = out_dir.join(RESPONSES_JSON);
    write_results_csv(&analysis.rows, &csv_path)?;
    write_json(&analysis.rows, &json_path)?;
    write_json(&analysis.responses, &resp_path)?;
    Ok(vec![csv_path, json_path, resp_path])
}

/// `analyze` followed by `write_outputs`; fails when no row could be analyzed.
pub fn run(manifest_path: &Path, out_dir: &Path, opts: &AnalyzeOptions) -> Result<Analysis> {
    let analysis = analyze(manifest_path, opts)?;
    write_outputs(&analysis, out_dir)?;
    if analysis.failed_rows() == analysis.rows.len() {
        bail!("all {} entries failed to analyze", analysis.rows.len());
    }
    Ok(analysis)
}

/// Reads a results table written by [`write_outputs`]: a JSON or CSV file,
/// or a directory holding `results.json`.
pub fn load_results(path: &Path) -> Result<Vec<ResultRow>> {
    let path = if path.is_dir() { path.join(RESULTS_JSON) } else { path.to_path_buf() };
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        let mut r = csv::Reader::from_path(&path).with_context(|| format!("cannot read {}", path.display()))?;
        r.deserialize()
            .collect::<Result<Vec<ResultRow>, _>>()
            .with_context(|| format!("malformed results {}", path.display()))
    } else {
        let text = std::fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("malformed results {}", path.display()))
    }
}
