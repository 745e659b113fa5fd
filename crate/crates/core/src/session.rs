//! Session bookkeeping shared by the simulator, the analysis pipeline and
//! the regressions: transducer identities, the corpus manifest and the
//! per-recording results rows.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::siggen::{SweepSpec, ToneSpec};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("duplicate manifest entry {0}")]
    Duplicate(String),
    #[error("no baseline (cycle {cycle}) entry for {key}")]
    MissingBaseline { key: String, cycle: u32 },
    #[error("manifest has no entries")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Mic,
    Phone,
}

impl Source {
    /// Dummy coding used in regressions.
    pub fn indicator(self) -> f64 {
        match self {
            Source::Mic => 0.0,
            Source::Phone => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalKind {
    Sweep,
    Tone,
    Music,
}

macro_rules! lowercase_display {
    ($ty:ty { $($variant:ident => $name:literal),* }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$variant => $name),* })
            }
        }
        impl std::str::FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s.to_ascii_lowercase().as_str() {
                    $($name => Ok(Self::$variant),)*
                    other => Err(format!("unknown {} '{other}'", stringify!($ty).to_lowercase())),
                }
            }
        }
    };
}

lowercase_display!(Side { Left => "left", Right => "right" });
lowercase_display!(Source { Mic => "mic", Phone => "phone" });
lowercase_display!(SignalKind { Sweep => "sweep", Tone => "tone", Music => "music" });

/// One earbud driver: a pair × side combination.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TransducerKey {
    pub pair: String,
    pub side: Side,
}

impl TransducerKey {
    pub fn new(pair: impl Into<String>, side: Side) -> Self {
        Self {
            pair: pair.into(),
            side,
        }
    }
}

impl fmt::Display for TransducerKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.pair, self.side)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub pair: String,
    pub side: Side,
    pub source: Source,
    pub signal: SignalKind,
    pub cycle: u32,
    pub run: u32,
    pub path: String,
}

impl ManifestEntry {
    pub fn transducer(&self) -> TransducerKey {
        TransducerKey::new(self.pair.clone(), self.side)
    }

    /// `{pair}_{side}_{source}_{signal}_LC{cycle}_run{run}.wav`
    pub fn conventional_file_name(&self) -> String {
        format!(
            "{}_{}_{}_{}_LC{}_run{}.wav",
            self.pair, self.side, self.source, self.signal, self.cycle, self.run
        )
    }

    /// Identity of the series this entry belongs to, minus cycle and run.
    pub fn series(&self) -> SeriesKey {
        SeriesKey {
            pair: self.pair.clone(),
            side: self.side,
            source: self.source,
            signal: self.signal,
        }
    }

    fn unique_key(&self) -> (SeriesKey, u32, u32) {
        (self.series(), self.cycle, self.run)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SeriesKey {
    pub pair: String,
    pub side: Side,
    pub source: Source,
    pub signal: SignalKind,
}

impl fmt::Display for SeriesKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}/{}", self.pair, self.side, self.source, self.signal)
    }
}

/// A corpus of recordings and the ideal test signals they were made from.
///
/// Paths are resolved relative to the directory holding the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionManifest {
    #[serde(default)]
    pub baseline_cycle: u32,
    #[serde(default)]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub tone: ToneSpec,
    /// Ideal (unplayed) test signal per kind.
    #[serde(default)]
    pub references: BTreeMap<SignalKind, String>,
    pub entries: Vec<ManifestEntry>,
}

impl SessionManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SessionError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SessionError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| SessionError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// Checks entry uniqueness and that every series has a baseline entry.
    pub fn validate(&self) -> Result<(), SessionError> {
        if self.entries.is_empty() {
            return Err(SessionError::Empty);
        }
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.unique_key()) {
                return Err(SessionError::Duplicate(e.conventional_file_name()));
            }
        }
        let with_baseline: BTreeSet<SeriesKey> = self
            .entries
            .iter()
            .filter(|e| e.cycle == self.baseline_cycle)
            .map(ManifestEntry::series)
            .collect();
        for e in &self.entries {
            if !with_baseline.contains(&e.series()) {
                return Err(SessionError::MissingBaseline {
                    key: e.series().to_string(),
                    cycle: self.baseline_cycle,
                });
            }
        }
        Ok(())
    }

    /// Baseline entry for `entry`: same series at the baseline cycle, with the
    /// requested run (or the lowest run available when it is missing).
    pub fn baseline_for(&self, entry: &ManifestEntry, run: BaselineRun) -> Option<&ManifestEntry> {
        let wanted = match run {
            BaselineRun::Matching => entry.run,
            BaselineRun::Fixed(r) => r,
        };
        let series = entry.series();
        let candidates = || {
            self.entries
                .iter()
                .filter(|e| e.cycle == self.baseline_cycle && e.series() == series)
        };
        candidates()
            .find(|e| e.run == wanted)
            .or_else(|| candidates().min_by_key(|e| e.run))
    }
}

/// Which baseline-cycle run serves as the reference for a later recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BaselineRun {
    #[default]
    Matching,
    Fixed(u32),
}

impl std::str::FromStr for BaselineRun {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("matching") {
            return Ok(BaselineRun::Matching);
        }
        s.parse()
            .map(BaselineRun::Fixed)
            .map_err(|_| format!("baseline run must be 'matching' or a run index, got '{s}'"))
    }
}

/// One analyzed recording. Metric cells are `None` when the metric does not
/// apply to the signal or the recording was not measurable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub pair: String,
    pub side: Side,
    pub source: Source,
    pub signal: SignalKind,
    pub cycle: u32,
    pub run: u32,
    pub measurable: bool,
    pub thd_dbc: Option<f64>,
    pub rms_noise_loudness: Option<f64>,
    pub correlation: Option<f64>,
    pub difference_mss: Option<f64>,
    #[serde(default)]
    pub error: Option<String>,
}

impl ResultRow {
    pub fn blank(entry: &ManifestEntry) -> Self {
        Self {
            pair: entry.pair.clone(),
            side: entry.side,
            source: entry.source,
            signal: entry.signal,
            cycle: entry.cycle,
            run: entry.run,
            measurable: false,
            thd_dbc: None,
            rms_noise_loudness: None,
            correlation: None,
            difference_mss: None,
            error: None,
        }
    }

    pub fn transducer(&self) -> TransducerKey {
        TransducerKey::new(self.pair.clone(), self.side)
    }

    /// Metric values present on this row, keyed by column name.
    pub fn metrics(&self) -> BTreeMap<String, f64> {
        [
            ("thd_dbc", self.thd_dbc),
            ("rms_noise_loudness", self.rms_noise_loudness),
            ("correlation", self.correlation),
            ("difference_mss", self.difference_mss),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k.to_string(), v)))
        .collect()
    }
}

pub const METRIC_COLUMNS: [&str; 4] = ["thd_dbc", "rms_noise_loudness", "correlation", "difference_mss"];
