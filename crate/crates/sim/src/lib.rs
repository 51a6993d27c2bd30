//! Experiment front end for the key-exchange simulator: named scenario
//! presets, a seed-parallel runner, file outputs and analytic self-checks.

pub mod output;
pub mod presets;
pub mod runner;
pub mod verify;

pub use presets::{Arm, Experiment, ExperimentKind, PresetError};
pub use runner::{run_experiment, TrialResult};
