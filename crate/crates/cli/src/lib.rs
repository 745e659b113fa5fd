//! Session orchestration for the `budcheck` command: test-signal generation,
//! corpus simulation, batch analysis and reporting.

pub mod analyze;
pub mod generate;
pub mod profile;
pub mod report;
pub mod simulate;
pub mod svg;
