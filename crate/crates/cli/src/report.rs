//! Plots and model summaries from an analysis results table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use budcheck_core::health::{fit, HealthError, ModelFit, ModelSpec, Observation, Term};
use budcheck_core::session::{ResultRow, Side, SignalKind, Source, METRIC_COLUMNS};
use serde::Serialize;

use crate::analyze::{load_results, ResponseSet, RESPONSES_JSON, RESULTS_JSON};
use crate::svg::{Band, Plot, Series, Style};

pub const DEFAULT_MODELS: [&str; 5] = [
    "cycle ~ rms_noise_loudness",
    "cycle ~ thd_dbc",
    "correlation ~ cycle + source",
    "difference_mss ~ cycle + source",
    "cycle ~ correlation * difference_mss",
];

pub const MODELS_JSON: &str = "models.json";
pub const MODELS_TXT: &str = "models.txt";

/// A formula, optionally restricted to rows of one signal with a trailing
/// `@signal`, e.g. `cycle ~ rms_noise_loudness @music`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRequest {
    pub spec: ModelSpec,
    pub signal: Option<SignalKind>,
}

impl FromStr for ModelRequest {
    type Err = HealthError;

    fn from_str(s: &str) -> Result<Self, HealthError> {
        let (formula, signal) = match s.rsplit_once('@') {
            Some((f, sig)) => {
                let kind = sig
                    .trim()
                    .parse::<SignalKind>()
                    .map_err(|e| HealthError::BadFormula(s.to_string(), e.to_string()))?;
                (f, Some(kind))
            }
            None => (s, None),
        };
        Ok(Self {
            spec: ModelSpec::parse(formula)?,
            signal,
        })
    }
}

impl std::fmt::Display for ModelRequest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.signal {
            Some(s) => write!(f, "{} @{s}", self.spec),
            None => write!(f, "{}", self.spec),
        }
    }
}

pub fn default_models() -> Vec<ModelRequest> {
    DEFAULT_MODELS.iter().map(|m| m.parse().expect("default models parse")).collect()
}

#[derive(Debug, Serialize)]
pub struct ModelSummary {
    pub model: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<ModelFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Default)]
pub struct ReportSummary {
    pub files: Vec<PathBuf>,
    pub models: Vec<ModelSummary>,
    /// Non-fatal problems: skipped fits, missing response data.
    pub warnings: Vec<String>,
}

fn slug(s: &str) -> String {
    let mut out = String::new();
    for c in s.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn write_file(path: PathBuf, text: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
    files.push(path);
    Ok(())
}

/// Metric against cycle: per-cycle run means as lines, runs as markers, one
/// colour per (transducer, source, signal).
fn metric_plot(rows: &[ResultRow], metric: &str) -> Option<Plot> {
    type Key = (String, Side, Source, SignalKind);
    let mut groups: BTreeMap<Key, BTreeMap<u32, Vec<f64>>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.measurable) {
        if let Some(&v) = r.metrics().get(metric) {
            groups
                .entry((r.pair.clone(), r.side, r.source, r.signal))
                .or_default()
                .entry(r.cycle)
                .or_default()
                .push(v);
        }
    }
    if groups.is_empty() {
        return None;
    }
    let mut series = Vec::new();
    for (color, ((pair, side, source, signal), by_cycle)) in groups.into_iter().enumerate() {
        let name = format!("{pair}:{side} {source} {signal}");
        series.push(Series {
            name: name.clone(),
            class: "mean".into(),
            style: Style::LineMarkers,
            points: by_cycle.iter().map(|(&c, v)| (c as f64, mean(v))).collect(),
            legend: true,
            color,
        });
        series.push(Series {
            name: format!("{name} runs"),
            class: "runs".into(),
            style: Style::Markers,
            points: by_cycle
                .iter()
                .flat_map(|(&c, v)| v.iter().map(move |&x| (c as f64, x)))
                .collect(),
            legend: false,
            color,
        });
    }
    Some(Plot {
        title: format!("{metric} by laundry cycle"),
        x_label: "cycle".into(),
        y_label: metric.into(),
        x_log: false,
        series,
        bands: Vec::new(),
    })
}

/// Observed response against the model's first variable, with the fitted
/// mean trend and a ±2·SE band; other variables are held at their means.
fn trend_plot(fit: &ModelFit, obs: &[Observation], label: &str) -> Option<Plot> {
    let Some(Term::Variable(x_var)) = fit.spec.terms.first() else {
        return None;
    };
    let vars: Vec<String> = fit
        .spec
        .terms
        .iter()
        .filter_map(|t| match t {
            Term::Variable(v) => Some(v.clone()),
            Term::Interaction(..) => None,
        })
        .collect();
    let used: Vec<&Observation> = obs
        .iter()
        .filter(|o| {
            o.value(&fit.response).is_some_and(f64::is_finite) && vars.iter().all(|v| o.value(v).is_some_and(f64::is_finite))
        })
        .collect();
    if used.is_empty() {
        return None;
    }
    let points: Vec<(f64, f64)> = used
        .iter()
        .map(|o| (o.value(x_var).unwrap(), o.value(&fit.response).unwrap()))
        .collect();
    let mut at: BTreeMap<String, f64> = vars
        .iter()
        .map(|v| (v.clone(), mean(&used.iter().map(|o| o.value(v).unwrap()).collect::<Vec<_>>())))
        .collect();
    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let n = 50;
    let (mut xs, mut fitted, mut lower, mut upper) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for i in 0..n {
        let x = if hi > lo { lo + (hi - lo) * i as f64 / (n - 1) as f64 } else { lo };
        at.insert(x_var.clone(), x);
        let (m, se) = fit.mean_prediction(&at).ok()?;
        xs.push(x);
        fitted.push((x, m));
        lower.push(m - 2.0 * se);
        upper.push(m + 2.0 * se);
    }
    Some(Plot {
        title: label.to_string(),
        x_label: x_var.clone(),
        y_label: fit.response.clone(),
        x_log: false,
        series: vec![
            Series {
                name: "observations".into(),
                class: "observations".into(),
                style: Style::Markers,
                points,
                legend: true,
                color: 0,
            },
            Series {
                name: "fitted mean".into(),
                class: "trend".into(),
                style: Style::Line,
                points: fitted,
                legend: true,
                color: 3,
            },
        ],
        bands: vec![Band {
            name: "±2 SE".into(),
            x: xs,
            lower,
            upper,
        }],
    })
}

/// One curve per measurable cycle (run-averaged dB) for each
/// (pair, side, source).
fn response_plots(set: &ResponseSet) -> Vec<((String, Side, Source), Plot)> {
    let mut groups: BTreeMap<(String, Side, Source), BTreeMap<u32, Vec<&[f64]>>> = BTreeMap::new();
    for r in &set.responses {
        groups
            .entry((r.pair.clone(), r.side, r.source))
            .or_default()
            .entry(r.cycle)
            .or_default()
            .push(&r.magnitude_db);
    }
    groups
        .into_iter()
        .map(|(key, by_cycle)| {
            let series = by_cycle
                .into_iter()
                .enumerate()
                .map(|(color, (cycle, curves))| {
                    let points = set
                        .grid_hz
                        .iter()
                        .enumerate()
                        .map(|(k, &f)| (f, mean(&curves.iter().map(|c| c[k]).collect::<Vec<_>>())))
                        .collect();
                    Series {
                        name: format!("LC{cycle}"),
                        class: "response".into(),
                        style: Style::Line,
                        points,
                        legend: true,
                        color,
                    }
                })
                .collect();
            let plot = Plot {
                title: format!("Frequency response {}:{} {}", key.0, key.1, key.2),
                x_label: "frequency (Hz)".into(),
                y_label: "magnitude (dB)".into(),
                x_log: true,
                series,
                bands: Vec::new(),
            };
            (key, plot)
        })
        .collect()
}

pub fn format_fit(fit: &ModelFit) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "n = {}, residual sd = {:.6}", fit.n_obs, fit.residual_sd);
    let _ = writeln!(s, "{:<32} {:>14} {:>14} {:>10}", "term", "estimate", "std.error", "t value");
    for c in &fit.terms {
        let _ = writeln!(s, "{:<32} {:>14.6} {:>14.6} {:>10.3}", c.name, c.estimate, c.std_error, c.t_value);
    }
    let _ = writeln!(s, "transducer intercepts:");
    for i in &fit.intercepts {
        let _ = writeln!(s, "  {:<30} {:>14.6} {:>14.6}", i.transducer.to_string(), i.estimate, i.std_error);
    }
    s
}

/// Locates `responses.json` next to a results file or inside a results
/// directory.
fn responses_path(results: &Path) -> PathBuf {
    if results.is_dir() {
        results.join(RESPONSES_JSON)
    } else {
        results.with_file_name(RESPONSES_JSON)
    }
}

pub fn run(results_path: &Path, out_dir: &Path, models: &[ModelRequest]) -> Result<ReportSummary> {
    let rows = load_results(results_path)?;
    if rows.is_empty() {
        let shown = if results_path.is_dir() { results_path.join(RESULTS_JSON) } else { results_path.to_path_buf() };
        bail!("results table {} has no rows", shown.display());
    }
    std::fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
    let mut summary = ReportSummary::default();

    for metric in METRIC_COLUMNS {
        if let Some(plot) = metric_plot(&rows, metric) {
            write_file(out_dir.join(format!("metric_{metric}.svg")), &plot.render(), &mut summary.files)?;
        }
    }

    let mut text = String::new();
    for (i, req) in models.iter().enumerate() {
        let label = req.to_string();
        let obs: Vec<Observation> = rows
            .iter()
            .filter(|r| req.signal.is_none_or(|s| r.signal == s))
            .filter_map(Observation::from_row)
            .collect();
        let _ = writeln!(text, "model: {label}");
        match fit(&obs, &req.spec) {
            Ok(f) => {
                text.push_str(&format_fit(&f));
                if let Some(plot) = trend_plot(&f, &obs, &label) {
                    let name = format!("fit_{}_{}.svg", i + 1, slug(&label));
                    write_file(out_dir.join(name), &plot.render(), &mut summary.files)?;
                }
                summary.models.push(ModelSummary {
                    model: label,
                    fit: Some(f),
                    error: None,
                });
            }
            Err(e) => {
                let _ = writeln!(text, "skipped: {e}");
                summary.warnings.push(format!("model '{label}' skipped: {e}"));
                summary.models.push(ModelSummary {
                    model: label,
                    fit: None,
                    error: Some(e.to_string()),
                });
            }
        }
        text.push('\n');
    }
    write_file(
        out_dir.join(MODELS_JSON),
        &(serde_json::to_string_pretty(&summary.models)? + "\n"),
        &mut summary.files,
    )?;
    write_file(out_dir.join(MODELS_TXT), &text, &mut summary.files)?;

    let resp_path = responses_path(results_path);
    match std::fs::read_to_string(&resp_path) {
        Ok(body) => {
            let set: ResponseSet =
                serde_json::from_str(&body).with_context(|| format!("malformed {}", resp_path.display()))?;
            for ((pair, side, source), plot) in response_plots(&set) {
                let name = format!("response_{}_{side}_{source}.svg", slug(&pair));
                write_file(out_dir.join(name), &plot.render(), &mut summary.files)?;
            }
        }
        Err(_) => summary.warnings.push(format!(
            "no response data at {}; overlay plots skipped",
            resp_path.display()
        )),
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_requests_parse_with_signal_filter() {
        let r: ModelRequest = "cycle ~ rms_noise_loudness @music".parse().unwrap();
        assert_eq!(r.signal, Some(SignalKind::Music));
        assert_eq!(r.to_string(), "cycle ~ rms_noise_loudness @music");
        assert!("cycle ~ thd_dbc @radio".parse::<ModelRequest>().is_err());
        assert_eq!(default_models().len(), 5);
    }

    #[test]
    fn slugs_are_file_safe() {
        assert_eq!(slug("cycle ~ correlation * difference_mss"), "cycle_correlation_difference_mss");
    }
}
