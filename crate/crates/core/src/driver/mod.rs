//! Multi-stage runs: schedules, preset problems, reports and exports.

pub mod config;
pub mod export;
pub mod holder;
pub mod preset;
pub mod run;
pub mod schedule;
pub mod verify;

pub use config::RunConfig;
pub use export::{export_mesh, export_report};
pub use holder::{estimate_holder, HolderTable};
pub use preset::{make_preset, Preset, PresetSpec};
pub use run::{plan, run, RunOutcome, RunReport};
pub use schedule::{beta_exponent, Schedule};
