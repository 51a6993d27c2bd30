//! Scenario configuration: everything a run needs besides the seed.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::protocol::{ChannelAvailability, ProtocolConfig};
use crate::reputation::{UniquenessMode, Weights};
use crate::units::Duration;
use crate::world::{GridConfig, MobilityModel, MobilityParams, Rect};

/// Who populates the grid and how they pair up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Population {
    /// `node_count` mobile nodes paired adjacently (0↔1, 2↔3, …), all
    /// moving under one model. The lower device id initiates.
    Pairs { model: MobilityModel },
    /// One group of pairs per listed model; used by the per-model exchange
    /// count experiment.
    ModelGroups { pairs_per_model: u32, models: Vec<MobilityModel> },
    /// One mobile subject exchanging with one stationary observer parked
    /// at an interference-free spot.
    SubjectObserver { subject_model: MobilityModel },
}

/// Where trusted-location endpoints are placed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EndpointLayout {
    None,
    /// The same number of endpoints scattered uniformly in every zone.
    PerZoneUniform { per_zone: u32 },
    /// Endpoints scattered uniformly inside the given rectangles.
    Clustered { cells: Vec<Rect>, count: u32 },
    /// Dense core rectangles over a sparse background.
    CoreAndBackground { core: Vec<Rect>, core_count: u32, background_per_zone: u32 },
}

/// Fake base-station deployment, materialized per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversaryLayout {
    /// Fraction of zones hosting one site each (capped at 1/2 by the
    /// tower-control bound).
    pub zone_fraction: f64,
    pub p_intercept: f64,
    pub always_on: bool,
    /// Force a site onto the subject's home zone (growth scenario).
    pub cover_home_zone: bool,
    /// Zones whose center falls here never host a site.
    pub exclude: Option<Rect>,
}

impl AdversaryLayout {
    pub fn none() -> Self {
        AdversaryLayout {
            zone_fraction: 0.0,
            p_intercept: 0.0,
            always_on: true,
            cover_home_zone: false,
            exclude: None,
        }
    }

    pub fn is_none(&self) -> bool {
        self.p_intercept == 0.0 || (self.zone_fraction == 0.0 && !self.cover_home_zone)
    }
}

/// Third-party identity verifier probing the subject and feeding proofs to
/// the observer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierConfig {
    /// Mean spacing of the randomized probe schedule.
    pub probe_interval: Duration,
    pub start_after: Duration,
}

/// Full description of one runnable scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub duration: Duration,
    pub node_count: u32,
    pub population: Population,
    pub grid: GridConfig,
    pub mobility: MobilityParams,
    pub mobility_tick: Duration,
    pub protocol: ProtocolConfig,
    pub weights: Weights,
    pub proof_unit: f64,
    /// Calibration target: average score increase per baseline epoch.
    pub per_epoch_increase: f64,
    /// Epochs of steady growth the threshold represents.
    pub epochs_to_threshold: u32,
    /// Baseline exchanges per epoch the calibration is pinned to.
    pub calibration_k: u32,
    /// Design interference level for the threshold policy.
    pub p_design: f64,
    pub epoch_len: Duration,
    /// Exchange slot spacing.
    pub slot_period: Duration,
    /// Fraction of each day's slots moved to seeded-random times.
    pub aperiodic_fraction: f64,
    pub uniqueness: UniquenessMode,
    pub channels: ChannelAvailability,
    pub quota_messages_per_day: u32,
    pub adversary: AdversaryLayout,
    /// Check interception at the sender's hop too, not just the
    /// recipient's last hop.
    pub sender_side_interception: bool,
    pub endpoints: EndpointLayout,
    /// Radius within which a node can synchronize with an endpoint.
    pub endpoint_radius_m: f64,
    /// Nodes spawn uniformly here instead of over the whole grid.
    pub spawn_area: Option<Rect>,
    pub verifier: Option<VerifierConfig>,
    /// Delay before an initiator re-dials after an abort.
    pub re_dial_delay: Duration,
    pub stop_when_converged: bool,
    /// Hard cap on events per simulated second.
    pub event_storm_cap: u64,
    pub trace: bool,
}

impl ScenarioConfig {
    /// A minimal clean-channel scenario; presets override from here.
    pub fn baseline(node_count: u32, days: u64) -> Self {
        ScenarioConfig {
            name: String::from("baseline"),
            duration: Duration::from_secs(days * crate::units::SECS_PER_DAY),
            node_count,
            population: Population::Pairs { model: MobilityModel::Composite },
            grid: GridConfig::default(),
            mobility: MobilityParams::default(),
            mobility_tick: Duration::from_secs(300),
            protocol: ProtocolConfig::default(),
            weights: Weights::default(),
            proof_unit: 100.0,
            per_epoch_increase: 1680.0,
            epochs_to_threshold: 3,
            calibration_k: 24,
            p_design: 0.28,
            epoch_len: Duration::from_secs(crate::units::SECS_PER_DAY),
            slot_period: Duration::from_secs(crate::units::SECS_PER_HOUR),
            aperiodic_fraction: 0.25,
            uniqueness: UniquenessMode::default(),
            channels: ChannelAvailability::default(),
            quota_messages_per_day: 100_000,
            adversary: AdversaryLayout::none(),
            sender_side_interception: false,
            endpoints: EndpointLayout::None,
            endpoint_radius_m: 30.0,
            spawn_area: None,
            verifier: None,
            re_dial_delay: Duration::from_secs(600),
            stop_when_converged: true,
            event_storm_cap: 100_000,
            trace: false,
        }
    }

    /// Exchanges per epoch implied by the slot spacing.
    pub fn k_per_epoch(&self) -> u32 {
        (self.epoch_len.as_millis() / self.slot_period.as_millis().max(1)) as u32
    }
}
