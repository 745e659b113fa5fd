//! Measurement and modelling core for tracking earbud degradation across
//! laundry cycles.
//!
//! * [`audio`]: recordings, WAV I/O, spectra and alignment
//! * [`siggen`]: the tone and linear-sweep test signals
//! * [`metrics`]: THD, sweep frequency response, response correlation/MSS
//! * [`loudness`]: RMS noise loudness against a baseline recording
//! * [`degrade`]: synthetic damage and trajectory simulation
//! * [`health`]: per-transducer regressions, cycle prediction, health index
//! * [`session`]: manifests and result rows shared by the above

pub mod audio;
pub mod degrade;
pub mod health;
pub mod loudness;
pub mod metrics;
pub mod session;
pub mod siggen;

pub use audio::{align, read_wav, write_wav, Aligner, Recording};
