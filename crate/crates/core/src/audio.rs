//! Audio container, WAV I/O, framing/windowing, magnitude spectra and
//! matched-filter alignment of recordings against a reference signal.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

/// Recordings whose RMS level falls below this are treated as silence.
pub const SILENCE_THRESHOLD_DBFS: f64 = -60.0;

/// Shortest frame accepted by [`magnitude_spectrum`].
pub const MIN_FRAME_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} is not a RIFF/WAVE file: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("{path}: unsupported encoding ({reason})")]
    UnsupportedEncoding { path: PathBuf, reason: String },
    #[error("recording contains no samples")]
    Empty,
    #[error("cannot write {path}: {reason}")]
    Unwritable { path: PathBuf, reason: String },
    #[error("frame of {len} samples is too short (minimum {MIN_FRAME_LEN})")]
    FrameTooShort { len: usize },
    #[error("invalid frame spec: {0}")]
    InvalidFrameSpec(String),
    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    SampleRateMismatch(u32, u32),
    #[error("{0} is silent (RMS below {SILENCE_THRESHOLD_DBFS} dBFS); alignment is undefined")]
    Silent(&'static str),
}

/// A mono recording normalized to digital full scale.
///
/// Samples are held in double precision; WAV files carry 32-bit floats, so
/// anything read from disk (or produced by the generators) round-trips
/// exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
    pub label: String,
}

impl Recording {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32, label: impl Into<String>) -> Self {
        Self {
            samples,
            sample_rate_hz,
            label: label.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// RMS level in dBFS; `-inf` for an all-zero or empty recording.
    pub fn rms_dbfs(&self) -> f64 {
        rms_dbfs(&self.samples)
    }

    /// Same recording with every sample mapped through `f`.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Recording {
        Recording {
            samples: self.samples.iter().map(|&x| f(x)).collect(),
            sample_rate_hz: self.sample_rate_hz,
            label: self.label.clone(),
        }
    }

    /// `len` samples starting at `offset`, zero-filled where the window runs
    /// past either end. A negative offset means the recording starts late.
    pub fn segment(&self, offset: i64, len: usize) -> Recording {
        let samples = (0..len as i64)
            .map(|i| {
                let idx = offset + i;
                if idx >= 0 && (idx as usize) < self.samples.len() {
                    self.samples[idx as usize]
                } else {
                    0.0
                }
            })
            .collect();
        Recording {
            samples,
            sample_rate_hz: self.sample_rate_hz,
            label: self.label.clone(),
        }
    }
}

pub fn rms(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let sum: f64 = samples.iter().map(|&x| x * x).sum();
    (sum / samples.len() as f64).sqrt()
}

pub fn rms_dbfs(samples: &[f64]) -> f64 {
    20.0 * rms(samples).log10()
}

/// Reads a PCM (16/24/32-bit integer) or 32-bit float WAV file, downmixing
/// stereo by channel averaging.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Recording, AudioError> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(source) => AudioError::Unreadable {
            path: path.to_path_buf(),
            source,
        },
        other => AudioError::Malformed {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    })?;
    let spec = reader.spec();
    let unsupported = |reason: String| AudioError::UnsupportedEncoding {
        path: path.to_path_buf(),
        reason,
    };
    if spec.channels == 0 || spec.channels > 2 {
        return Err(unsupported(format!("{} channels", spec.channels)));
    }
    let decode_err = |e: hound::Error| AudioError::Malformed {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(decode_err)?,
        (hound::SampleFormat::Int, bits @ (16 | 24 | 32)) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<Result<_, _>>()
                .map_err(decode_err)?
        }
        (format, bits) => {
            return Err(unsupported(format!("{bits}-bit {format:?}")));
        }
    };
    let samples: Vec<f64> = if spec.channels == 2 {
        interleaved
            .chunks_exact(2)
            .map(|lr| (lr[0] + lr[1]) * 0.5)
            .collect()
    } else {
        interleaved
    };
    if samples.is_empty() {
        return Err(AudioError::Empty);
    }
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Recording::new(samples, spec.sample_rate, label))
}

/// Writes a mono 32-bit float WAV file; samples are rounded to single
/// precision.
pub fn write_wav(path: impl AsRef<Path>, rec: &Recording) -> Result<(), AudioError> {
    let path = path.as_ref();
    if rec.is_empty() {
        return Err(AudioError::Empty);
    }
    let unwritable = |e: hound::Error| AudioError::Unwritable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: rec.sample_rate_hz,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(unwritable)?;
    for &s in &rec.samples {
        writer.write_sample(s as f32).map_err(unwritable)?;
    }
    writer.finalize().map_err(unwritable)
}

/// Taper applied to each analysis frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Window {
    Rectangular,
    #[default]
    Hann,
}

impl Window {
    /// Periodic window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameSpec {
    pub frame_len: usize,
    pub hop: usize,
    pub window: Window,
}

impl Default for FrameSpec {
    fn default() -> Self {
        Self {
            frame_len: 2048,
            hop: 1024,
            window: Window::Hann,
        }
    }
}

impl FrameSpec {
    pub fn new(frame_len: usize, hop: usize, window: Window) -> Result<Self, AudioError> {
        if hop == 0 || hop > frame_len {
            return Err(AudioError::InvalidFrameSpec(format!(
                "hop {hop} must satisfy 0 < hop <= frame_len ({frame_len})"
            )));
        }
        Ok(Self {
            frame_len,
            hop,
            window,
        })
    }

    /// Start offsets of every full frame that fits in `n_samples`.
    pub fn frame_starts(&self, n_samples: usize) -> impl Iterator<Item = usize> {
        let last = n_samples.checked_sub(self.frame_len);
        let hop = self.hop;
        (0..).map(move |i| i * hop).take_while(move |&s| last.is_some_and(|l| s <= l))
    }
}

/// One-sided magnitude spectrum of a single frame.
///
/// Magnitudes are the raw DFT moduli `|X_k|` of the windowed frame (no
/// scaling), so the spectrum is homogeneous in the input and Parseval holds
/// in the form returned by [`Spectrum::energy`].
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub bin_freqs_hz: Vec<f64>,
    pub magnitudes: Vec<f64>,
    pub frame_len: usize,
}

impl Spectrum {
    /// Time-domain energy of the windowed frame recovered from the one-sided
    /// spectrum: `(|X_0|² + 2Σ|X_k|² + |X_{N/2}|²) / N`.
    pub fn energy(&self) -> f64 {
        let n = self.frame_len;
        let last = self.magnitudes.len() - 1;
        let sum: f64 = self
            .magnitudes
            .iter()
            .enumerate()
            .map(|(k, m)| {
                let edge = k == 0 || (n % 2 == 0 && k == last);
                if edge {
                    m * m
                } else {
                    2.0 * m * m
                }
            })
            .sum();
        sum / n as f64
    }
}

/// Reusable FFT plan and window for a fixed frame length.
pub struct SpectrumAnalyzer {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    buffer: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl SpectrumAnalyzer {
    pub fn new(frame_len: usize, window: Window) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(frame_len);
        let scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        Self {
            fft,
            window: window.coefficients(frame_len),
            buffer: vec![Complex64::default(); frame_len],
            scratch,
        }
    }

    pub fn frame_len(&self) -> usize {
        self.window.len()
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Power scale that maps a stationary sinusoid of amplitude `A` to a
    /// summed one-sided main-lobe power of `A²`.
    pub fn sine_power_norm(&self) -> f64 {
        let w2: f64 = self.window.iter().map(|w| w * w).sum();
        self.frame_len() as f64 * w2 / 4.0
    }

    /// One-sided `|X_k|²` for `k = 0..=N/2`.
    pub fn power<T: Copy + Into<f64>>(&mut self, frame: &[T]) -> Vec<f64> {
        assert_eq!(frame.len(), self.window.len(), "frame length mismatch");
        for ((b, &x), w) in self.buffer.iter_mut().zip(frame).zip(&self.window) {
            *b = Complex64::new(x.into() * w, 0.0);
        }
        self.fft
            .process_with_scratch(&mut self.buffer, &mut self.scratch);
        self.buffer[..=self.window.len() / 2]
            .iter()
            .map(|c| c.norm_sqr())
            .collect()
    }
}

pub fn magnitude_spectrum<T: Copy + Into<f64>>(
    frame: &[T],
    sample_rate_hz: u32,
    window: Window,
) -> Result<Spectrum, AudioError> {
    let n = frame.len();
    if n < MIN_FRAME_LEN {
        return Err(AudioError::FrameTooShort { len: n });
    }
    let mut analyzer = SpectrumAnalyzer::new(n, window);
    let magnitudes: Vec<f64> = analyzer.power(frame).into_iter().map(f64::sqrt).collect();
    let bin_freqs_hz = (0..magnitudes.len())
        .map(|k| k as f64 * sample_rate_hz as f64 / n as f64)
        .collect();
    Ok(Spectrum {
        bin_freqs_hz,
        magnitudes,
        frame_len: n,
    })
}

/// Lag (in samples) at which `rec` best matches `reference`: a positive value
/// means `rec` contains the reference starting that many samples late.
///
/// Full linear cross-correlation is computed by FFT and normalized by the
/// product of signal norms. Ties go to the smallest absolute lag.
pub fn align(rec: &Recording, reference: &Recording) -> Result<i64, AudioError> {
    if rec.sample_rate_hz != reference.sample_rate_hz {
        return Err(AudioError::SampleRateMismatch(
            rec.sample_rate_hz,
            reference.sample_rate_hz,
        ));
    }
    Aligner::new(reference, rec.len())?.align(rec)
}

/// [`align`] against a fixed reference, with the FFT plan and reference
/// spectrum computed once. Worth keeping around when many recordings are
/// aligned to the same test signal.
pub struct Aligner {
    sample_rate_hz: u32,
    plan: XcorrPlan,
}

impl Aligner {
    /// Prepares for recordings of up to `max_rec_len` samples; longer ones
    /// still work but are planned afresh.
    pub fn new(reference: &Recording, max_rec_len: usize) -> Result<Self, AudioError> {
        if reference.is_empty() {
            return Err(AudioError::Empty);
        }
        if reference.rms_dbfs() < SILENCE_THRESHOLD_DBFS {
            return Err(AudioError::Silent("reference"));
        }
        Ok(Self {
            sample_rate_hz: reference.sample_rate_hz,
            plan: XcorrPlan::new(&reference.samples, max_rec_len.max(1)),
        })
    }

    pub fn align(&self, rec: &Recording) -> Result<i64, AudioError> {
        if rec.sample_rate_hz != self.sample_rate_hz {
            return Err(AudioError::SampleRateMismatch(rec.sample_rate_hz, self.sample_rate_hz));
        }
        if rec.is_empty() {
            return Err(AudioError::Empty);
        }
        if rec.rms_dbfs() < SILENCE_THRESHOLD_DBFS {
            return Err(AudioError::Silent("recording"));
        }
        let corr = self.plan.correlate(&rec.samples);
        Ok(peak_lag(&corr, self.plan.ref_len))
    }
}

struct XcorrPlan {
    ref_len: usize,
    ref_norm: f64,
    max_rec_len: usize,
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
    /// Conjugated half spectrum of the zero-padded reference.
    ref_spectrum: Vec<Complex64>,
    reference: Vec<f64>,
}

impl XcorrPlan {
    fn new(reference: &[f64], max_rec_len: usize) -> Self {
        let n = (max_rec_len + reference.len() - 1).next_power_of_two().max(2);
        let mut planner = RealFftPlanner::<f64>::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let mut ref_spectrum = half_spectrum(forward.as_ref(), reference);
        ref_spectrum.iter_mut().for_each(|c| *c = c.conj());
        Self {
            ref_len: reference.len(),
            ref_norm: norm(reference),
            max_rec_len,
            forward,
            inverse,
            ref_spectrum,
            reference: reference.to_vec(),
        }
    }

    fn correlate(&self, rec: &[f64]) -> Vec<f64> {
        if rec.len() > self.max_rec_len {
            return XcorrPlan::new(&self.reference, rec.len()).correlate(rec);
        }
        let n = self.forward.len();
        let total = rec.len() + self.ref_len - 1;
        let mut spectrum = half_spectrum(self.forward.as_ref(), rec);
        for (x, y) in spectrum.iter_mut().zip(&self.ref_spectrum) {
            *x *= y;
        }
        // DC and Nyquist bins of a real signal's spectrum are real
        let last = spectrum.len() - 1;
        spectrum[0].im = 0.0;
        spectrum[last].im = 0.0;
        let mut out = self.inverse.make_output_vec();
        self.inverse
            .process(&mut spectrum, &mut out)
            .expect("buffer sizes come from the plan");
        let scale = 1.0 / (n as f64 * norm(rec) * self.ref_norm);
        let neg = self.ref_len - 1;
        // circular index of lag l is l mod n
        (0..total)
            .map(|i| {
                let lag = i as i64 - neg as i64;
                out[lag.rem_euclid(n as i64) as usize] * scale
            })
            .collect()
    }
}

fn half_spectrum(fft: &dyn RealToComplex<f64>, x: &[f64]) -> Vec<Complex64> {
    let mut input = fft.make_input_vec();
    input[..x.len()].copy_from_slice(x);
    let mut spectrum = fft.make_output_vec();
    fft.process(&mut input, &mut spectrum)
        .expect("buffer sizes come from the plan");
    spectrum
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|&v| v * v).sum::<f64>().sqrt()
}

/// Normalized cross-correlation `r[lag] = Σ rec[n + lag]·ref[n] / (‖rec‖‖ref‖)`
/// for `lag = -(ref_len - 1) ..= rec_len - 1`, stored at index `lag + ref_len - 1`.
pub fn normalized_xcorr(rec: &[f64], reference: &[f64]) -> Vec<f64> {
    XcorrPlan::new(reference, rec.len()).correlate(rec)
}

fn peak_lag(corr: &[f64], ref_len: usize) -> i64 {
    let neg = ref_len as i64 - 1;
    let peak = corr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-9 * peak.abs().max(f64::MIN_POSITIVE);
    corr.iter()
        .enumerate()
        .filter(|(_, &v)| v >= peak - tol)
        .map(|(i, _)| i as i64 - neg)
        .min_by_key(|lag| (lag.abs(), *lag))
        .expect("correlation is never empty")
}
