//! Protocol engine and deterministic discrete-event simulator for a
//! repetitive spatio-temporal key-exchange scheme with reputation-based
//! identity authentication.
//!
//! The crate is organised around the moving parts of the system:
//!
//! - [`crypto`] — key pairs, signatures, sealed envelopes, nonces, and the
//!   per-epoch incremental signature chain,
//! - [`identity`] — identity records, identity→key bindings, conflicting-key
//!   detection and revocation,
//! - [`protocol`] — the epoch state machine (dialing phase, connection
//!   phase, trusted-location and cloud-probe variants),
//! - [`reputation`] — the exponentially smoothed reputation score, its
//!   closed form, threshold policy and the authentication decision,
//! - [`scheduler`] — the on-device reputation manager (active list, quota,
//!   send-rate backoff),
//! - [`world`] — geography, mobility models, trusted-location endpoints and
//!   the interference field of fake base stations,
//! - [`simnet`] — the deterministic event queue and message transport,
//! - [`engine`] — device actors wired together into a runnable scenario.
//!
//! Everything in here is `no_std`-compatible (with `alloc`); IO, file
//! formats and the CLI live in the companion `smi-sim` crate. A simulation
//! run is a pure function of its configuration and seed: identical inputs
//! produce identical event traces and metrics.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod config;
pub mod crypto;
pub mod engine;
pub mod identity;
pub mod metrics;
pub mod protocol;
pub mod reputation;
pub mod rng;
pub mod scheduler;
pub mod simnet;
pub mod units;
pub mod wire;
pub mod world;

pub use config::ScenarioConfig;
pub use engine::Simulation;
pub use units::{Position, SimTime};
