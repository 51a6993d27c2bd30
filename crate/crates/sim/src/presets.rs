//! Named scenario presets and the flat-key configuration format.
//!
//! A preset is a TOML file of dotted keys layered over the built-in
//! defaults; the experiment field decides how the resolved configuration
//! expands into arms (a clean/adversarial pair, an interference sweep, a
//! with/without-verifier pair, or a single convergence run).

use std::collections::BTreeMap;

use serde::Deserialize;

use smi_core::config::{
    AdversaryLayout, EndpointLayout, Population, ScenarioConfig, VerifierConfig,
};
use smi_core::reputation::{UniquenessMode, Weights};
use smi_core::units::{Duration, SECS_PER_DAY};
use smi_core::world::{MobilityModel, Rect};

#[derive(Debug, thiserror::Error)]
pub enum PresetError {
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("config file error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

pub const PRESET_NAMES: &[&str] = &[
    "baseline",
    "reduced-011",
    "reduced-028",
    "increased-039",
    "increased-054",
    "growth",
    "mobility-table",
    "bootstrap",
];

fn embedded(name: &str) -> Option<&'static str> {
    match name {
        "baseline" => Some(include_str!("../presets/baseline.toml")),
        "reduced-011" => Some(include_str!("../presets/reduced-011.toml")),
        "reduced-028" => Some(include_str!("../presets/reduced-028.toml")),
        "increased-039" => Some(include_str!("../presets/increased-039.toml")),
        "increased-054" => Some(include_str!("../presets/increased-054.toml")),
        "growth" => Some(include_str!("../presets/growth.toml")),
        "mobility-table" => Some(include_str!("../presets/mobility-table.toml")),
        "bootstrap" => Some(include_str!("../presets/bootstrap.toml")),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Convergence,
    Growth,
    MobilityTable,
    Bootstrap,
}

#[derive(Debug, Clone)]
pub struct Arm {
    pub label: String,
    pub cfg: ScenarioConfig,
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub name: String,
    pub kind: ExperimentKind,
    pub arms: Vec<Arm>,
}

/// The flat-key file schema. Every knob carries a default from
/// `ScenarioConfig::baseline`; a preset only states what it changes.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetFile {
    pub name: Option<String>,
    pub experiment: Option<String>,
    pub nodes: Option<u32>,
    pub days: Option<u64>,
    pub population: Option<String>,
    pub model: Option<String>,
    pub models: Option<Vec<String>>,
    pub pairs_per_model: Option<u32>,
    pub per_epoch_increase: Option<f64>,
    pub epochs_to_threshold: Option<u32>,
    pub calibration_k: Option<u32>,
    pub p_design: Option<f64>,
    pub slot_period_secs: Option<u64>,
    pub aperiodic_fraction: Option<f64>,
    pub epoch_len_secs: Option<u64>,
    pub uniqueness_window_days: Option<f64>,
    pub uniqueness_per_epoch: Option<bool>,
    pub proof_unit: Option<f64>,
    pub quota_messages_per_day: Option<u32>,
    pub mobility_tick_secs: Option<u64>,
    pub endpoint_radius_m: Option<f64>,
    pub speed_mps: Option<f64>,
    pub street_spacing_m: Option<f64>,
    pub prob_walk_turn: Option<f64>,
    pub manhattan_turn: Option<f64>,
    pub downtown_cells: Option<Vec<[f64; 4]>>,
    pub spawn_area: Option<[f64; 4]>,
    pub stop_when_converged: Option<bool>,
    pub trace: Option<bool>,
    pub freshness_secs: Option<u64>,
    pub trusted_ttl_secs: Option<u64>,
    pub bind_device_id: Option<bool>,
    pub re_dial_delay_secs: Option<u64>,
    pub sender_side_interception: Option<bool>,
    pub interference_arms: Option<Vec<f64>>,
    pub weights: Option<WeightsFile>,
    pub adversary: Option<AdversaryFile>,
    pub endpoints: Option<EndpointsFile>,
    pub verifier: Option<VerifierFile>,
    pub channels: Option<ChannelsFile>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsFile {
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub delta: Option<f64>,
    pub w_untrusted: Option<f64>,
    pub w_trusted: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversaryFile {
    pub zone_fraction: Option<f64>,
    pub p_intercept: Option<f64>,
    pub always_on: Option<bool>,
    pub cover_home_zone: Option<bool>,
    pub exclude: Option<[f64; 4]>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointsFile {
    pub kind: Option<String>,
    pub per_zone: Option<u32>,
    pub cells: Option<Vec<[f64; 4]>>,
    pub count: Option<u32>,
    pub core_cells: Option<Vec<[f64; 4]>>,
    pub core_count: Option<u32>,
    pub background_per_zone: Option<u32>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifierFile {
    pub probe_interval_secs: Option<u64>,
    pub start_after_secs: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelsFile {
    pub sms: Option<bool>,
    pub data: Option<bool>,
    pub bluetooth: Option<bool>,
}

fn rect(r: [f64; 4]) -> Rect {
    Rect { x0: r[0], y0: r[1], x1: r[2], y1: r[3] }
}

fn parse_model(s: &str) -> Result<MobilityModel, PresetError> {
    Ok(match s {
        "simple-traffic" => MobilityModel::SimpleTraffic,
        "random-walk" => MobilityModel::RandomWalk,
        "prob-random-walk" => MobilityModel::ProbRandomWalk,
        "manhattan" => MobilityModel::Manhattan,
        "downtown-manhattan" => MobilityModel::DowntownManhattan,
        "composite" => MobilityModel::Composite,
        other => return Err(PresetError::Invalid(format!("unknown mobility model `{other}`"))),
    })
}

/// Canonical label used in per-model breakdowns.
pub fn model_label(model: MobilityModel) -> &'static str {
    match model {
        MobilityModel::SimpleTraffic => "SimpleTraffic",
        MobilityModel::RandomWalk => "RandomWalk",
        MobilityModel::ProbRandomWalk => "ProbRandomWalk",
        MobilityModel::Manhattan => "Manhattan",
        MobilityModel::DowntownManhattan => "DowntownManhattan",
        MobilityModel::Composite => "Composite",
    }
}

impl PresetFile {
    pub fn parse(text: &str) -> Result<Self, PresetError> {
        Ok(toml::from_str(text)?)
    }

    /// Applies this file's keys onto a configuration.
    pub fn apply(&self, cfg: &mut ScenarioConfig) -> Result<(), PresetError> {
        if let Some(n) = &self.name {
            cfg.name = n.clone();
        }
        if let Some(n) = self.nodes {
            cfg.node_count = n;
        }
        if let Some(d) = self.days {
            cfg.duration = Duration::from_secs(d * SECS_PER_DAY);
        }
        let model = self
            .model
            .as_deref()
            .map(parse_model)
            .transpose()?
            .unwrap_or(MobilityModel::Composite);
        match self.population.as_deref() {
            None => {}
            Some("pairs") => cfg.population = Population::Pairs { model },
            Some("subject-observer") => {
                cfg.population = Population::SubjectObserver { subject_model: model };
                cfg.node_count = 2;
            }
            Some("model-groups") => {
                let models = self
                    .models
                    .as_ref()
                    .ok_or_else(|| PresetError::Invalid("model-groups needs `models`".into()))?
                    .iter()
                    .map(|s| parse_model(s))
                    .collect::<Result<Vec<_>, _>>()?;
                let pairs = self.pairs_per_model.unwrap_or(10);
                cfg.node_count = 2 * pairs * models.len() as u32;
                cfg.population = Population::ModelGroups { pairs_per_model: pairs, models };
            }
            Some(other) => {
                return Err(PresetError::Invalid(format!("unknown population `{other}`")))
            }
        }
        if let Some(v) = self.per_epoch_increase {
            cfg.per_epoch_increase = v;
        }
        if let Some(v) = self.epochs_to_threshold {
            cfg.epochs_to_threshold = v;
        }
        if let Some(v) = self.calibration_k {
            cfg.calibration_k = v;
        }
        if let Some(v) = self.p_design {
            cfg.p_design = v;
        }
        if let Some(v) = self.slot_period_secs {
            cfg.slot_period = Duration::from_secs(v);
        }
        if let Some(v) = self.aperiodic_fraction {
            cfg.aperiodic_fraction = v;
        }
        if let Some(v) = self.epoch_len_secs {
            cfg.epoch_len = Duration::from_secs(v);
        }
        if self.uniqueness_per_epoch == Some(true) {
            cfg.uniqueness = UniquenessMode::PerEpoch;
        } else if let Some(d) = self.uniqueness_window_days {
            cfg.uniqueness =
                UniquenessMode::Window(Duration::from_secs((d * SECS_PER_DAY as f64) as u64));
        }
        if let Some(v) = self.proof_unit {
            cfg.proof_unit = v;
        }
        if let Some(v) = self.quota_messages_per_day {
            cfg.quota_messages_per_day = v;
        }
        if let Some(v) = self.mobility_tick_secs {
            cfg.mobility_tick = Duration::from_secs(v);
        }
        if let Some(v) = self.endpoint_radius_m {
            cfg.endpoint_radius_m = v;
        }
        if let Some(v) = self.speed_mps {
            cfg.mobility.speed_mps = v;
        }
        if let Some(v) = self.street_spacing_m {
            cfg.mobility.street_spacing_m = v;
        }
        if let Some(v) = self.prob_walk_turn {
            cfg.mobility.prob_walk_turn = v;
        }
        if let Some(v) = self.manhattan_turn {
            cfg.mobility.manhattan_turn = v;
        }
        if let Some(cells) = &self.downtown_cells {
            cfg.mobility.downtown_cells = cells.iter().copied().map(rect).collect();
        }
        if let Some(area) = self.spawn_area {
            cfg.spawn_area = Some(rect(area));
        }
        if let Some(v) = self.stop_when_converged {
            cfg.stop_when_converged = v;
        }
        if let Some(v) = self.trace {
            cfg.trace = v;
        }
        if let Some(v) = self.freshness_secs {
            cfg.protocol.freshness = Duration::from_secs(v);
        }
        if let Some(v) = self.trusted_ttl_secs {
            cfg.protocol.trusted_ttl = Duration::from_secs(v);
        }
        if let Some(v) = self.bind_device_id {
            cfg.protocol.bind_device_id = v;
        }
        if let Some(v) = self.re_dial_delay_secs {
            cfg.re_dial_delay = Duration::from_secs(v);
        }
        if let Some(v) = self.sender_side_interception {
            cfg.sender_side_interception = v;
        }
        if let Some(w) = &self.weights {
            let base = cfg.weights;
            cfg.weights = Weights::new(
                w.alpha.unwrap_or(base.alpha),
                w.gamma.unwrap_or(base.gamma),
                w.delta.unwrap_or(base.delta),
                w.w_untrusted.unwrap_or(base.w_untrusted),
                w.w_trusted.unwrap_or(base.w_trusted),
            )
            .map_err(|e| PresetError::Invalid(e.to_string()))?;
        }
        if let Some(a) = &self.adversary {
            cfg.adversary = AdversaryLayout {
                zone_fraction: a.zone_fraction.unwrap_or(cfg.adversary.zone_fraction),
                p_intercept: a.p_intercept.unwrap_or(cfg.adversary.p_intercept),
                always_on: a.always_on.unwrap_or(cfg.adversary.always_on),
                cover_home_zone: a.cover_home_zone.unwrap_or(cfg.adversary.cover_home_zone),
                exclude: a.exclude.map(rect).or(cfg.adversary.exclude),
            };
        }
        if let Some(e) = &self.endpoints {
            cfg.endpoints = match e.kind.as_deref() {
                None | Some("none") => EndpointLayout::None,
                Some("per-zone") => EndpointLayout::PerZoneUniform {
                    per_zone: e.per_zone.unwrap_or(1),
                },
                Some("clustered") => EndpointLayout::Clustered {
                    cells: e.cells.clone().unwrap_or_default().into_iter().map(rect).collect(),
                    count: e.count.unwrap_or(0),
                },
                Some("core-and-background") => EndpointLayout::CoreAndBackground {
                    core: e
                        .core_cells
                        .clone()
                        .unwrap_or_default()
                        .into_iter()
                        .map(rect)
                        .collect(),
                    core_count: e.core_count.unwrap_or(0),
                    background_per_zone: e.background_per_zone.unwrap_or(0),
                },
                Some(other) => {
                    return Err(PresetError::Invalid(format!("unknown endpoint layout `{other}`")))
                }
            };
        }
        if let Some(v) = &self.verifier {
            cfg.verifier = Some(VerifierConfig {
                probe_interval: Duration::from_secs(v.probe_interval_secs.unwrap_or(480)),
                start_after: Duration::from_secs(v.start_after_secs.unwrap_or(300)),
            });
        }
        if let Some(c) = &self.channels {
            cfg.channels.sms = c.sms.unwrap_or(cfg.channels.sms);
            cfg.channels.data = c.data.unwrap_or(cfg.channels.data);
            cfg.channels.bluetooth = c.bluetooth.unwrap_or(cfg.channels.bluetooth);
        }
        Ok(())
    }

    /// Expands the file into a runnable experiment.
    pub fn build(&self) -> Result<Experiment, PresetError> {
        let mut cfg = ScenarioConfig::baseline(100, 5);
        self.apply(&mut cfg)?;
        let name = cfg.name.clone();
        let kind = match self.experiment.as_deref().unwrap_or("convergence") {
            "convergence" => ExperimentKind::Convergence,
            "growth" => ExperimentKind::Growth,
            "mobility-table" => ExperimentKind::MobilityTable,
            "bootstrap" => ExperimentKind::Bootstrap,
            other => return Err(PresetError::Invalid(format!("unknown experiment `{other}`"))),
        };
        let arms = match kind {
            ExperimentKind::Convergence => {
                vec![Arm { label: "main".into(), cfg }]
            }
            ExperimentKind::Growth => {
                let mut clean = cfg.clone();
                clean.adversary = AdversaryLayout::none();
                clean.endpoints = EndpointLayout::None;
                clean.verifier = None;
                vec![
                    Arm { label: "clean".into(), cfg: clean },
                    Arm { label: "adversarial".into(), cfg },
                ]
            }
            ExperimentKind::Bootstrap => {
                let mut plain = cfg.clone();
                plain.verifier = None;
                vec![
                    Arm { label: "plain".into(), cfg: plain },
                    Arm { label: "verifier".into(), cfg },
                ]
            }
            ExperimentKind::MobilityTable => {
                let arms_p = self.interference_arms.clone().unwrap_or_else(|| vec![0.0]);
                arms_p
                    .into_iter()
                    .map(|p| {
                        let mut c = cfg.clone();
                        if p == 0.0 {
                            c.adversary = AdversaryLayout::none();
                        } else {
                            c.adversary.p_intercept = p;
                        }
                        Arm { label: format!("p={p}"), cfg: c }
                    })
                    .collect()
            }
        };
        Ok(Experiment { name, kind, arms })
    }
}

/// Loads a named built-in preset.
pub fn load_preset(name: &str) -> Result<(Experiment, String), PresetError> {
    let text = embedded(name).ok_or_else(|| PresetError::UnknownPreset(name.to_string()))?;
    let file = PresetFile::parse(text)?;
    Ok((file.build()?, text.to_string()))
}

/// Loads a preset then layers a user configuration file over it.
pub fn load_with_config(
    preset: &str,
    config_path: Option<&std::path::Path>,
) -> Result<(Experiment, String), PresetError> {
    let base_text = embedded(preset)
        .ok_or_else(|| PresetError::UnknownPreset(preset.to_string()))?
        .to_string();
    let mut file = PresetFile::parse(&base_text)?;
    let mut raw = base_text;
    if let Some(path) = config_path {
        let user_text = std::fs::read_to_string(path)?;
        let user = PresetFile::parse(&user_text)?;
        merge(&mut file, user);
        raw.push_str("\n# --- user config ---\n");
        raw.push_str(&user_text);
    }
    Ok((file.build()?, raw))
}

/// Field-wise overlay: any key set in `over` wins; nested tables merge
/// key by key.
fn merge(base: &mut PresetFile, over: PresetFile) {
    macro_rules! take {
        ($($field:ident),* $(,)?) => {
            $(if over.$field.is_some() { base.$field = over.$field; })*
        };
    }
    take!(
        name, experiment, nodes, days, population, model, models, pairs_per_model,
        per_epoch_increase, epochs_to_threshold, calibration_k, p_design, slot_period_secs,
        aperiodic_fraction, epoch_len_secs, uniqueness_window_days, uniqueness_per_epoch,
        proof_unit, quota_messages_per_day, mobility_tick_secs, endpoint_radius_m, speed_mps,
        street_spacing_m, prob_walk_turn, manhattan_turn, downtown_cells, spawn_area,
        stop_when_converged, trace, freshness_secs, trusted_ttl_secs, bind_device_id,
        re_dial_delay_secs, sender_side_interception, interference_arms,
    );
    if let Some(w) = over.weights {
        let b = base.weights.get_or_insert_with(Default::default);
        macro_rules! sub {
            ($src:expr, $dst:expr, $($f:ident),*) => {
                $(if $src.$f.is_some() { $dst.$f = $src.$f; })*
            };
        }
        sub!(w, b, alpha, gamma, delta, w_untrusted, w_trusted);
    }
    if let Some(a) = over.adversary {
        let b = base.adversary.get_or_insert_with(Default::default);
        if a.zone_fraction.is_some() {
            b.zone_fraction = a.zone_fraction;
        }
        if a.p_intercept.is_some() {
            b.p_intercept = a.p_intercept;
        }
        if a.always_on.is_some() {
            b.always_on = a.always_on;
        }
        if a.cover_home_zone.is_some() {
            b.cover_home_zone = a.cover_home_zone;
        }
        if a.exclude.is_some() {
            b.exclude = a.exclude;
        }
    }
    if let Some(e) = over.endpoints {
        // Endpoint layouts swap wholesale: mixing two layouts' keys would
        // not mean anything.
        base.endpoints = Some(e);
    }
    if let Some(v) = over.verifier {
        base.verifier = Some(v);
    }
    if let Some(c) = over.channels {
        let b = base.channels.get_or_insert_with(Default::default);
        if c.sms.is_some() {
            b.sms = c.sms;
        }
        if c.data.is_some() {
            b.data = c.data;
        }
        if c.bluetooth.is_some() {
            b.bluetooth = c.bluetooth;
        }
    }
}

/// Stable fingerprint of the resolved experiment configuration.
pub fn experiment_hash(exp: &Experiment) -> String {
    let mut payload = Vec::new();
    for arm in &exp.arms {
        payload.extend_from_slice(arm.label.as_bytes());
        payload.extend_from_slice(
            serde_json::to_string(&arm.cfg).expect("config serializes").as_bytes(),
        );
    }
    smi_core::rng::fingerprint(&payload)
}

/// Per-model mean exchange counts, used by the mobility-table output.
pub fn noe_by_model(metrics: &smi_core::metrics::RunMetrics) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for model in [
        MobilityModel::SimpleTraffic,
        MobilityModel::RandomWalk,
        MobilityModel::ProbRandomWalk,
        MobilityModel::Manhattan,
        MobilityModel::DowntownManhattan,
    ] {
        let label = model_label(model);
        if let Some(v) = metrics.mean_noe_for_model(&format!("{model:?}")) {
            out.insert(label.to_string(), v);
        }
    }
    out
}
