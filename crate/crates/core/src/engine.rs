//! Device actors wired into a runnable scenario.
//!
//! One `Simulation` owns the world (grid, endpoints, interference sites),
//! the population of devices with their protocol machines, ledgers,
//! scheduler state, and the event queue. Runs are single-threaded and a
//! pure function of `(config, seed)`: all randomness flows through labelled
//! streams derived from the seed, every map iterated is ordered, and the
//! queue breaks ties by insertion sequence.
//!
//! Scoring epochs are wall-clock days closed for every ledger at the day
//! boundary; protocol epochs are handshake instances that normally align
//! with days but may drift across a boundary after interference-driven
//! aborts and re-dials.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::config::{EndpointLayout, Population, ScenarioConfig, VerifierConfig};
use crate::crypto::{generate_keypair_from, KeyPair};
use crate::identity::{BindingStatus, BindingStore, PrincipalIdentity, PrincipalKind};
use crate::metrics::{ConvergenceRecord, Counters, RunMetrics, ScoreSample, TranscriptLine};
use crate::protocol::{
    answer_cloud_probe, issue_identity_proof, make_cloud_probe, plan_channels,
    trusted_location_handshake, validate_identity_proof, validate_probe_response, AbortReason,
    ChannelPlan, Effect, EndpointDevice, EpochMachine, LocationReport, MessageBody, PeerContext,
    PendingProbe, Phase, ProtocolConfig, ProtocolMessage, Role, StepOutput,
};
use crate::reputation::{
    compute_threshold, is_authenticated, ReputationLedger, Scoring, ThresholdPolicy,
};
use crate::rng::SimRng;
use crate::scheduler::{
    build_active_list, trusted_boost_eligible, ContactEntry, Quota, SchedulerConfig,
};
use crate::simnet::{ChannelKind, EventQueue, SendOutcome, Transport};
use crate::units::{Duration, Position, SimTime};
use crate::world::{
    step_node, AdversaryField, FbtsSite, Grid, MobilityModel, NodeState,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("world setup failed: {0}")]
    World(#[from] crate::world::WorldError),
    #[error("scoring setup failed: {0}")]
    Reputation(#[from] crate::reputation::ReputationError),
    #[error("protocol setup failed: {0}")]
    Protocol(#[from] crate::protocol::ProtocolError),
    #[error("event storm: more than {0} events in one simulated second")]
    EventStorm(u64),
    #[error("event queue rejected an event: {0}")]
    Queue(#[from] crate::simnet::QueueError),
}

/// Reserved actor index for the identity verifier.
const VERIFIER_IX: u32 = u32::MAX - 1;

#[derive(Debug)]
enum Event {
    Deliver { to: u32, msg: ProtocolMessage },
    Slot { initiator: u32, peer: u32 },
    Retry { owner: u32, peer: u32, token: u64 },
    ReDial { initiator: u32, peer: u32 },
    DayBoundary { day: u64 },
    MobilityTick,
    VerifierProbe,
}

#[derive(Debug)]
struct MachineSlot {
    machine: EpochMachine,
    /// Progress marker; pending retries are cancelled by a bump.
    token: u64,
    retries: u32,
    /// Fire the first connection exchange as soon as dialing finishes.
    pending_first_exchange: bool,
}

#[derive(Debug, Default, Clone)]
struct PairProgress {
    converged_at: Option<SimTime>,
    noe: u32,
    attempts: u32,
}

#[derive(Debug)]
struct Device {
    identity: PrincipalIdentity,
    keys: KeyPair,
    contacts: Vec<ContactEntry>,
    quota: Quota,
    ledgers: BTreeMap<u32, ReputationLedger>,
    bindings: BindingStore,
    slots: BTreeMap<u32, MachineSlot>,
    epoch_counters: BTreeMap<u32, u32>,
    progress: BTreeMap<u32, PairProgress>,
    active: BTreeSet<u32>,
}

#[derive(Debug)]
struct VerifierActor {
    identity: PrincipalIdentity,
    keys: KeyPair,
    position: Position,
    subject: u32,
    observer: u32,
    pending: Option<PendingProbe>,
    next_probe_id: u64,
    ledger: ReputationLedger,
    cfg: VerifierConfig,
}

/// One deterministic simulation run.
pub struct Simulation {
    cfg: ScenarioConfig,
    seed: u64,
    scoring: Scoring,
    policy: ThresholdPolicy,
    protocol_cfg: ProtocolConfig,
    sched_cfg: SchedulerConfig,
    plan: ChannelPlan,
    grid: Grid,
    transport: Transport,
    endpoint_devices: Vec<EndpointDevice>,
    nodes: Vec<NodeState>,
    static_nodes: BTreeSet<u32>,
    models: Vec<MobilityModel>,
    devices: Vec<Device>,
    pairs: Vec<(u32, u32)>,
    verifier: Option<VerifierActor>,
    queue: EventQueue<Event>,
    metrics: RunMetrics,
    device_rngs: Vec<SimRng>,
    mobility_rngs: Vec<SimRng>,
    transport_rng: SimRng,
    verifier_rng: SimRng,
    end: SimTime,
}

impl Simulation {
    pub fn new(cfg: ScenarioConfig, seed: u64) -> Result<Self, SimError> {
        let scoring = Scoring::calibrated(
            cfg.weights,
            cfg.proof_unit,
            cfg.per_epoch_increase,
            cfg.calibration_k,
            cfg.epochs_to_threshold,
        );
        let policy = compute_threshold(
            cfg.p_design,
            cfg.epochs_to_threshold,
            cfg.calibration_k,
            cfg.per_epoch_increase,
        )?;
        let plan = plan_channels(&cfg.channels)?;

        // Population layout.
        let (node_count, models) = population_models(&cfg);
        let mut spawn_rng = SimRng::derive(seed, "spawn", 0);
        let spawn = cfg.spawn_area.unwrap_or(crate::world::Rect {
            x0: 0.0,
            y0: 0.0,
            x1: cfg.grid.side_m,
            y1: cfg.grid.side_m,
        });
        let mut homes: Vec<Position> = (0..node_count)
            .map(|_| {
                Position::new(
                    spawn_rng.uniform(spawn.x0, spawn.x1),
                    spawn_rng.uniform(spawn.y0, spawn.y1),
                )
            })
            .collect();

        // Interference sites: one per selected zone, sized to blanket it.
        let mut adversary_sites: Vec<FbtsSite> = Vec::new();
        let mut covered_zones: Vec<u32> = Vec::new();
        if !cfg.adversary.is_none() {
            let zones = cfg.grid.zone_count();
            let mut order: Vec<u32> = (0..zones)
                .filter(|&z| match &cfg.adversary.exclude {
                    Some(r) => !r.contains(&cfg.grid.zone_center(z)),
                    None => true,
                })
                .collect();
            SimRng::derive(seed, "adversary", 0).shuffle(&mut order);
            let want = libm::round(cfg.adversary.zone_fraction * zones as f64) as usize;
            covered_zones = order.into_iter().take(want).collect();
            if cfg.adversary.cover_home_zone {
                let home_zone = cfg.grid.zone_of(&homes[0]);
                if !covered_zones.contains(&home_zone) {
                    if covered_zones.is_empty() {
                        covered_zones.push(home_zone);
                    } else {
                        covered_zones[0] = home_zone;
                    }
                }
            }
            covered_zones.sort_unstable();
            let radius = cfg.grid.zone_side_m / core::f64::consts::SQRT_2 + 1.0;
            adversary_sites = covered_zones
                .iter()
                .map(|&z| FbtsSite {
                    position: cfg.grid.zone_center(z),
                    radius_m: radius,
                    p_intercept: cfg.adversary.p_intercept,
                    always_on: cfg.adversary.always_on,
                })
                .collect();
        }
        let field = AdversaryField::new(adversary_sites, covered_zones.len() as u32, &cfg.grid)?;
        let mut transport = Transport::new(field);
        transport.sender_side_interception = cfg.sender_side_interception;

        // The subject/observer layout parks the observer at an
        // interference-free zone center.
        let mut static_nodes = BTreeSet::new();
        if matches!(cfg.population, Population::SubjectObserver { .. }) {
            let covered: BTreeSet<u32> = covered_zones.iter().copied().collect();
            let safe = (0..cfg.grid.zone_count())
                .find(|z| !covered.contains(z))
                .unwrap_or(0);
            homes[1] = cfg.grid.zone_center(safe);
            static_nodes.insert(1);
            if cfg.adversary.cover_home_zone && !covered_zones.is_empty() {
                homes[0] = cfg.grid.zone_center(covered_zones[0]);
            }
        }

        // Trusted endpoints and their device actors.
        let mut grid = Grid::new(cfg.grid)?;
        let mut ep_rng = SimRng::derive(seed, "endpoints", 0);
        match &cfg.endpoints {
            EndpointLayout::None => {}
            EndpointLayout::PerZoneUniform { per_zone } => {
                let per = alloc::vec![*per_zone; cfg.grid.zone_count() as usize];
                grid.place_endpoints_per_zone(&per, &mut ep_rng)?;
            }
            EndpointLayout::Clustered { cells, count } => {
                grid.place_endpoints_in_rects(cells, *count, &mut ep_rng);
            }
            EndpointLayout::CoreAndBackground { core, core_count, background_per_zone } => {
                grid.place_endpoints_in_rects(core, *core_count, &mut ep_rng);
                let per = alloc::vec![*background_per_zone; cfg.grid.zone_count() as usize];
                grid.place_endpoints_per_zone(&per, &mut ep_rng)?;
            }
        }
        let root = generate_keypair_from(&mut SimRng::derive(seed, "root", 0), &cfg.protocol.security, SimTime::ZERO);
        let mut endpoint_devices = Vec::with_capacity(grid.endpoints().len());
        let mut ep_key_rng = SimRng::derive(seed, "endpoint-keys", 0);
        for ep in grid.endpoints() {
            let identity = PrincipalIdentity {
                user_id: format!("endpoint-{}", ep.id),
                device_id: format!("ep-{:05}", ep.id),
                kind: PrincipalKind::TrustedLocationEndpoint,
            };
            let keys = generate_keypair_from(&mut ep_key_rng, &cfg.protocol.security, SimTime::ZERO);
            endpoint_devices.push(EndpointDevice::new(
                ep.id,
                identity,
                keys,
                &root.private_key,
                ep.position,
            ));
        }

        // Protocol configuration: k follows the slot cadence, the trust
        // root is this world's, and endpoint proximity follows the preset.
        let mut protocol_cfg = cfg.protocol.clone();
        protocol_cfg.k = cfg.k_per_epoch();
        protocol_cfg.trust_root = Some(root.public_key.clone());
        protocol_cfg.proximity_radius_m = cfg.endpoint_radius_m;

        // Node kinematics.
        let mut nodes = Vec::with_capacity(node_count as usize);
        let mut mobility_rngs = Vec::with_capacity(node_count as usize);
        for ix in 0..node_count {
            let mut rng = SimRng::derive(seed, "mobility", ix as u64);
            nodes.push(NodeState::new(homes[ix as usize], models[ix as usize], &mut rng));
            mobility_rngs.push(rng);
        }

        // Devices, keys, mutual bindings and ledgers.
        let pairs: Vec<(u32, u32)> = (0..node_count / 2).map(|i| (2 * i, 2 * i + 1)).collect();
        let mut devices = Vec::with_capacity(node_count as usize);
        let mut device_rngs = Vec::with_capacity(node_count as usize);
        let mut key_rng = SimRng::derive(seed, "keys", 0);
        let keys: Vec<KeyPair> = (0..node_count)
            .map(|_| generate_keypair_from(&mut key_rng, &cfg.protocol.security, SimTime::ZERO))
            .collect();
        for ix in 0..node_count {
            let identity = PrincipalIdentity::mobile(&format!("user-{ix}"), &format!("d-{ix:05}"));
            devices.push(Device {
                identity,
                keys: keys[ix as usize].clone(),
                contacts: Vec::new(),
                quota: Quota::new(cfg.quota_messages_per_day, cfg.epoch_len),
                ledgers: BTreeMap::new(),
                bindings: BindingStore::new(),
                slots: BTreeMap::new(),
                epoch_counters: BTreeMap::new(),
                progress: BTreeMap::new(),
                active: BTreeSet::new(),
            });
            device_rngs.push(SimRng::derive(seed, "device", ix as u64));
        }
        for &(a, b) in &pairs {
            for (me, peer) in [(a, b), (b, a)] {
                let peer_identity = devices[peer as usize].identity.clone();
                let peer_key = devices[peer as usize].keys.public_key.clone();
                let me_dev = &mut devices[me as usize];
                me_dev
                    .bindings
                    .register_binding(&peer_identity, &peer_key, SimTime::ZERO)
                    .expect("fresh binding");
                me_dev.contacts.push(
                    ContactEntry::new(peer_identity, 1, 0).expect("valid priority"),
                );
                me_dev.ledgers.insert(
                    peer,
                    ReputationLedger::new(cfg.epoch_len, cfg.uniqueness, SimTime::ZERO),
                );
                me_dev.progress.insert(peer, PairProgress::default());
                me_dev.active.insert(peer);
            }
        }

        // Optional identity verifier, parked like the observer.
        let verifier = cfg.verifier.clone().map(|vcfg| {
            let covered: BTreeSet<u32> = covered_zones.iter().copied().collect();
            let safe = (0..cfg.grid.zone_count())
                .rev()
                .find(|z| !covered.contains(z))
                .unwrap_or(0);
            let mut vkey_rng = SimRng::derive(seed, "verifier", 0);
            VerifierActor {
                identity: PrincipalIdentity {
                    user_id: String::from("verifier-0"),
                    device_id: String::from("v-00000"),
                    kind: PrincipalKind::ThirdPartyVerifier,
                },
                keys: generate_keypair_from(&mut vkey_rng, &cfg.protocol.security, SimTime::ZERO),
                position: cfg.grid.zone_center(safe),
                subject: 0,
                observer: 1,
                pending: None,
                next_probe_id: 0,
                ledger: ReputationLedger::new(cfg.epoch_len, cfg.uniqueness, SimTime::ZERO),
                cfg: vcfg,
            }
        });

        let end = SimTime::ZERO + cfg.duration;
        let metrics = RunMetrics {
            seed,
            horizon: end,
            node_count,
            threshold: policy.delta_threshold,
            convergence: Vec::new(),
            scores: Vec::new(),
            counters: Counters::default(),
            lambda: 0.0,
            mean_convergence_hours: 0.0,
            mean_noe: 0.0,
            transcript: Vec::new(),
        };

        let mut sim = Simulation {
            sched_cfg: SchedulerConfig {
                rotation_period: cfg.epoch_len,
                boost_cap_period: cfg.epoch_len,
                messages_per_epoch: 2 * cfg.k_per_epoch() + 4,
            },
            transport_rng: SimRng::derive(seed, "transport", 0),
            verifier_rng: SimRng::derive(seed, "verifier-probe", 0),
            queue: EventQueue::new(),
            cfg,
            seed,
            scoring,
            policy,
            protocol_cfg,
            plan,
            grid,
            transport,
            endpoint_devices,
            nodes,
            static_nodes,
            models,
            devices,
            pairs,
            verifier,
            metrics,
            device_rngs,
            mobility_rngs,
            end,
        };
        sim.schedule_day(0)?;
        sim.queue.push(SimTime::ZERO + sim.cfg.mobility_tick, Event::MobilityTick)?;
        if sim.end >= SimTime::from_days(1) {
            sim.queue.push(SimTime::from_days(1), Event::DayBoundary { day: 1 })?;
        }
        if let Some(v) = &sim.verifier {
            let at = SimTime::ZERO + v.cfg.start_after;
            sim.queue.push(at, Event::VerifierProbe)?;
        }
        Ok(sim)
    }

    pub fn threshold(&self) -> f64 {
        self.policy.delta_threshold
    }

    /// Runs to the configured horizon and reports.
    pub fn run(mut self) -> Result<RunMetrics, SimError> {
        let mut sec = u64::MAX;
        let mut in_sec = 0u64;
        while let Some((at, event)) = self.queue.pop_until(self.end) {
            self.metrics.counters.events_processed += 1;
            let s = at.as_secs();
            if s == sec {
                in_sec += 1;
                if in_sec > self.cfg.event_storm_cap {
                    return Err(SimError::EventStorm(self.cfg.event_storm_cap));
                }
            } else {
                sec = s;
                in_sec = 1;
            }
            self.dispatch(at, event)?;
        }
        self.finish();
        Ok(self.metrics)
    }

    fn dispatch(&mut self, now: SimTime, event: Event) -> Result<(), SimError> {
        match event {
            Event::Deliver { to, msg } => self.on_deliver(to, msg, now)?,
            Event::Slot { initiator, peer } => self.on_slot(initiator, peer, now)?,
            Event::Retry { owner, peer, token } => self.on_retry(owner, peer, token, now)?,
            Event::ReDial { initiator, peer } => self.try_start_epoch(initiator, peer, now)?,
            Event::DayBoundary { day } => self.on_day_boundary(day, now)?,
            Event::MobilityTick => {
                for ix in 0..self.nodes.len() {
                    if self.static_nodes.contains(&(ix as u32)) {
                        continue;
                    }
                    step_node(
                        &mut self.nodes[ix],
                        now,
                        self.cfg.mobility_tick,
                        &self.cfg.grid,
                        &self.cfg.mobility,
                        &mut self.mobility_rngs[ix],
                        self.seed,
                        ix as u64,
                    );
                }
                let next = now + self.cfg.mobility_tick;
                if next <= self.end {
                    self.queue.push(next, Event::MobilityTick)?;
                }
            }
            Event::VerifierProbe => self.on_verifier_probe(now)?,
        }
        Ok(())
    }

    // -- scheduling ---------------------------------------------------

    fn schedule_day(&mut self, day: u64) -> Result<(), SimError> {
        let day_start = SimTime::from_days(day);
        let k = self.cfg.k_per_epoch() as u64;
        let aperiodic = libm::round(self.cfg.aperiodic_fraction * k as f64) as u64;
        for (pair_ix, &(initiator, peer)) in self.pairs.clone().iter().enumerate() {
            if self.pair_done(initiator, peer) {
                continue;
            }
            let mut slot_rng =
                SimRng::derive(self.seed, "slots", day * 65_536 + pair_ix as u64);
            // A subset of the fixed-interval slots fires at a seeded-random
            // offset inside its interval instead; the schedule mixes
            // periodic and aperiodic probes without opening silence gaps.
            let mut indices: Vec<u64> = (0..k).collect();
            slot_rng.shuffle(&mut indices);
            let random_slots: BTreeSet<u64> = indices.into_iter().take(aperiodic as usize).collect();
            let mut times: Vec<SimTime> = (0..k)
                .map(|j| {
                    let base = day_start + Duration::from_millis(j * self.cfg.slot_period.as_millis());
                    if random_slots.contains(&j) {
                        base + Duration::from_millis(
                            (slot_rng.uniform01() * self.cfg.slot_period.as_millis() as f64) as u64,
                        )
                    } else {
                        base
                    }
                })
                .collect();
            times.sort_unstable();
            for t in times {
                if t <= self.end {
                    self.queue.push(t, Event::Slot { initiator, peer })?;
                }
            }
        }
        Ok(())
    }

    fn pair_done(&self, a: u32, b: u32) -> bool {
        if !self.cfg.stop_when_converged {
            return false;
        }
        let fwd = self.devices[a as usize].progress.get(&b);
        let bwd = self.devices[b as usize].progress.get(&a);
        matches!(
            (fwd, bwd),
            (Some(f), Some(g)) if f.converged_at.is_some() && g.converged_at.is_some()
        )
    }

    fn on_day_boundary(&mut self, day: u64, now: SimTime) -> Result<(), SimError> {
        let weights = self.scoring.weights;
        for ix in 0..self.devices.len() {
            let observer_id = self.devices[ix].identity.device_id.clone();
            let peers: Vec<u32> = self.devices[ix].ledgers.keys().copied().collect();
            for peer in peers {
                let peer_id = self.device_id(peer);
                let scoring = self.scoring;
                let ledger = self.devices[ix].ledgers.get_mut(&peer).expect("ledger");
                ledger.close_epoch(&weights, now);
                let sample = ScoreSample {
                    observer: observer_id.clone(),
                    peer: peer_id,
                    at: now,
                    score: ledger.score(&scoring),
                    f1: ledger.f1_value,
                    f2: ledger.f2_value(&scoring),
                    epoch_index: ledger.epoch_index,
                };
                self.metrics.scores.push(sample);
            }
            self.devices[ix].quota.reset();
            let device = &mut self.devices[ix];
            let list = build_active_list(&device.contacts, &device.quota, now, &self.sched_cfg);
            device.active = list
                .iter()
                .filter_map(|id| {
                    id.device_id.strip_prefix("d-").and_then(|s| s.parse::<u32>().ok())
                })
                .collect();
        }
        if let Some(v) = &mut self.verifier {
            v.ledger.close_epoch(&weights, now);
        }
        self.schedule_day(day)?;
        let next = SimTime::from_days(day + 1);
        if next <= self.end {
            self.queue.push(next, Event::DayBoundary { day: day + 1 })?;
        }
        Ok(())
    }

    // -- identity and context helpers ----------------------------------

    fn device_id(&self, ix: u32) -> String {
        if ix == VERIFIER_IX {
            return self
                .verifier
                .as_ref()
                .map(|v| v.identity.device_id.clone())
                .unwrap_or_else(|| String::from("v-?"));
        }
        self.devices[ix as usize].identity.device_id.clone()
    }

    fn position_of(&self, ix: u32) -> Position {
        if ix == VERIFIER_IX {
            return self.verifier.as_ref().map(|v| v.position).unwrap_or_default();
        }
        self.nodes[ix as usize].position
    }

    fn ctx(&self, me: u32, peer: u32) -> PeerContext {
        let peer_identity;
        let peer_key;
        if peer == VERIFIER_IX {
            let v = self.verifier.as_ref().expect("verifier exists");
            peer_identity = v.identity.clone();
            peer_key = v.keys.public_key.clone();
        } else {
            peer_identity = self.devices[peer as usize].identity.clone();
            peer_key = self.devices[peer as usize].keys.public_key.clone();
        }
        let d = &self.devices[me as usize];
        PeerContext {
            me: d.identity.clone(),
            my_keys: d.keys.clone(),
            peer: peer_identity,
            peer_key,
        }
    }

    /// Builds the location report a device presents right now: a trusted
    /// stamp when an endpoint is in range and the boost cap admits the
    /// peer's priority, a self-declaration otherwise.
    fn build_report(&mut self, ix: u32, peer: u32, now: SimTime) -> LocationReport {
        let pos = self.position_of(ix);
        let endpoint = self
            .grid
            .trusted_endpoint_near(&pos, self.cfg.endpoint_radius_m)
            .map(|ep| ep.id);
        if let Some(ep_id) = endpoint {
            let priority = self.devices[ix as usize]
                .contacts
                .iter()
                .find(|c| peer != VERIFIER_IX && c.peer == self.devices[peer as usize].identity)
                .map(|c| c.priority)
                .unwrap_or(1);
            if trusted_boost_eligible(priority, now, &self.sched_cfg) {
                let endpoint_device = &self.endpoint_devices[ep_id as usize];
                let device = &self.devices[ix as usize];
                let ctx = PeerContext {
                    me: device.identity.clone(),
                    my_keys: device.keys.clone(),
                    peer: endpoint_device.identity.clone(),
                    peer_key: endpoint_device.keys.public_key.clone(),
                };
                let result = trusted_location_handshake(
                    &ctx,
                    &pos,
                    endpoint_device,
                    &self.protocol_cfg,
                    now,
                    &mut self.device_rngs[ix as usize],
                );
                if let Ok((report, _)) = result {
                    return report;
                }
            }
        }
        LocationReport::untrusted(pos, now)
    }

    // -- protocol driving ----------------------------------------------

    fn try_start_epoch(&mut self, initiator: u32, peer: u32, now: SimTime) -> Result<(), SimError> {
        if self.pair_done(initiator, peer) {
            return Ok(());
        }
        {
            let device = &self.devices[initiator as usize];
            if !device.active.contains(&peer) || !device.quota.has_headroom() {
                return Ok(());
            }
            if EpochMachine::can_start_new(device.slots.get(&peer).map(|s| &s.machine)).is_err() {
                return Ok(());
            }
        }
        let location = self.build_report(initiator, peer, now);
        let ctx = self.ctx(initiator, peer);
        let epoch_index = {
            let device = &mut self.devices[initiator as usize];
            let counter = device.epoch_counters.entry(peer).or_insert(0);
            *counter += 1;
            *counter
        };
        let (machine, d1) = EpochMachine::initiate(
            ctx,
            self.protocol_cfg.clone(),
            self.plan,
            epoch_index,
            now,
            &location,
            &mut self.device_rngs[initiator as usize],
        );
        self.devices[initiator as usize].slots.insert(
            peer,
            MachineSlot { machine, token: 1, retries: 0, pending_first_exchange: true },
        );
        self.send_message(initiator, peer, d1, now, true)?;
        Ok(())
    }

    fn on_slot(&mut self, initiator: u32, peer: u32, now: SimTime) -> Result<(), SimError> {
        if self.pair_done(initiator, peer) {
            return Ok(());
        }
        let state = self.devices[initiator as usize]
            .slots
            .get(&peer)
            .map(|s| (s.machine.phase, s.machine.awaiting_reply()));
        match state {
            None | Some((Phase::Completed, _)) | Some((Phase::Aborted, _)) => {
                self.try_start_epoch(initiator, peer, now)?;
            }
            Some((Phase::Connection, awaiting)) => {
                if awaiting {
                    // The previous link's reply is still in flight (or being
                    // retransmitted); revisit shortly rather than burning
                    // this slot on a duplicate.
                    let at = now + Duration::from_secs(60);
                    if at <= self.end {
                        self.queue.push(at, Event::Slot { initiator, peer })?;
                    }
                    return Ok(());
                }
                let location = self.build_report(initiator, peer, now);
                let msg = {
                    let slot = self.devices[initiator as usize]
                        .slots
                        .get_mut(&peer)
                        .expect("checked above");
                    match slot.machine.next_exchange(now, &location) {
                        Ok(m) => m,
                        Err(_) => return Ok(()),
                    }
                };
                {
                    let progress = self.devices[initiator as usize]
                        .progress
                        .get_mut(&peer)
                        .expect("progress");
                    progress.attempts += 1;
                }
                self.send_message(initiator, peer, msg, now, true)?;
            }
            Some((Phase::Dialing, _)) => {
                // Retransmission timers drive the dialing phase.
            }
        }
        Ok(())
    }

    fn on_retry(&mut self, owner: u32, peer: u32, token: u64, now: SimTime) -> Result<(), SimError> {
        let (stale, exhausted, resend) = {
            let device = &mut self.devices[owner as usize];
            match device.slots.get_mut(&peer) {
                None => (true, false, None),
                Some(slot) => {
                    if slot.token != token
                        || matches!(slot.machine.phase, Phase::Completed | Phase::Aborted)
                    {
                        (true, false, None)
                    } else if slot.retries >= slot.machine.max_retries() {
                        (false, true, None)
                    } else {
                        slot.retries += 1;
                        (false, false, slot.machine.last_outbound().cloned())
                    }
                }
            }
        };
        if stale {
            return Ok(());
        }
        if exhausted {
            let out = {
                let device = &mut self.devices[owner as usize];
                let slot = device.slots.get_mut(&peer).expect("checked above");
                slot.machine.abort(AbortReason::RetriesExhausted)
            };
            self.process_output(owner, peer, out, now)?;
            return Ok(());
        }
        if let Some(msg) = resend {
            self.send_message(owner, peer, msg, now, true)?;
        }
        Ok(())
    }

    fn on_deliver(&mut self, to: u32, msg: ProtocolMessage, now: SimTime) -> Result<(), SimError> {
        self.metrics.counters.messages_delivered += 1;
        if to == VERIFIER_IX {
            return self.on_verifier_message(msg, now);
        }
        let from = match self.index_of_sender(&msg.sender) {
            Some(ix) => ix,
            None => {
                self.metrics.counters.audits += 1;
                return Ok(());
            }
        };
        match &msg.body {
            MessageBody::Dialing1 { .. } => self.on_dialing1(to, from, msg, now),
            MessageBody::IdentityProof(proof) => {
                let proof = proof.clone();
                let valid = self
                    .verifier
                    .as_ref()
                    .map(|v| validate_identity_proof(&proof, &v.keys.public_key).is_ok())
                    .unwrap_or(false);
                let subject_ix = self.index_of_sender(&proof.subject);
                match (valid, subject_ix) {
                    (true, Some(subject)) => {
                        let device = &mut self.devices[to as usize];
                        if let Some(ledger) = device.ledgers.get_mut(&subject) {
                            ledger.add_identity_proof(now);
                            self.check_convergence(to, subject, now);
                        }
                    }
                    _ => self.metrics.counters.audits += 1,
                }
                Ok(())
            }
            MessageBody::CloudProbe { .. } => {
                let device_ctx = self.ctx(to, VERIFIER_IX);
                let location = self.build_report(to, VERIFIER_IX, now);
                match answer_cloud_probe(&device_ctx, &msg, &location, now) {
                    Ok(response) => {
                        self.metrics.counters.probes_answered += 1;
                        self.send_message(to, VERIFIER_IX, response, now, false)
                    }
                    Err(_) => {
                        self.metrics.counters.audits += 1;
                        Ok(())
                    }
                }
            }
            _ => {
                let out = {
                    let location = self.build_report(to, from, now);
                    let device = &mut self.devices[to as usize];
                    match device.slots.get_mut(&from) {
                        None => {
                            self.metrics.counters.audits += 1;
                            return Ok(());
                        }
                        Some(slot) => {
                            let out = slot.machine.handle_message(&msg, now, &location);
                            slot.token += 1;
                            slot.retries = 0;
                            out
                        }
                    }
                };
                self.process_output(to, from, out, now)
            }
        }
    }

    fn on_dialing1(
        &mut self,
        to: u32,
        from: u32,
        msg: ProtocolMessage,
        now: SimTime,
    ) -> Result<(), SimError> {
        let live = self.devices[to as usize]
            .slots
            .get(&from)
            .map(|s| !matches!(s.machine.phase, Phase::Completed | Phase::Aborted))
            .unwrap_or(false);
        if live {
            // A fresh dialing attempt against a live epoch supersedes it
            // but is itself refused; the initiator's retry lands cleanly.
            let out = {
                let device = &mut self.devices[to as usize];
                let slot = device.slots.get_mut(&from).expect("live slot");
                slot.machine.abort(AbortReason::Superseded)
            };
            self.metrics.counters.audits += 1;
            return self.process_output(to, from, out, now);
        }
        let location = self.build_report(to, from, now);
        let ctx = self.ctx(to, from);
        let epoch_index = {
            let device = &mut self.devices[to as usize];
            let counter = device.epoch_counters.entry(from).or_insert(0);
            *counter += 1;
            *counter
        };
        let (machine, out) = EpochMachine::accept(
            ctx,
            self.protocol_cfg.clone(),
            self.plan,
            epoch_index,
            &msg,
            now,
            &location,
            &mut self.device_rngs[to as usize],
        );
        match machine {
            Some(m) => {
                self.devices[to as usize].slots.insert(
                    from,
                    MachineSlot { machine: m, token: 1, retries: 0, pending_first_exchange: false },
                );
                self.process_output(to, from, out, now)
            }
            None => {
                self.metrics.counters.audits += 1;
                Ok(())
            }
        }
    }

    fn process_output(
        &mut self,
        me: u32,
        peer: u32,
        out: StepOutput,
        now: SimTime,
    ) -> Result<(), SimError> {
        for effect in &out.effects {
            match effect {
                Effect::InteractionVerified { record, .. } => {
                    let device = &mut self.devices[me as usize];
                    if let Some(ledger) = device.ledgers.get_mut(&peer) {
                        ledger.record_interaction(record.observation, now);
                    }
                    if let Some(progress) = device.progress.get_mut(&peer) {
                        if progress.converged_at.is_none() {
                            progress.noe += 1;
                        }
                    }
                    self.check_convergence(me, peer, now);
                }
                Effect::IncreaseRep { .. } => {
                    // Epoch summary; per-interaction crediting already done.
                }
                Effect::EpochCompleted { .. } => {
                    self.metrics.counters.epochs_completed += 1;
                }
                Effect::EpochAborted { .. } => {
                    self.metrics.counters.epochs_aborted += 1;
                    if self.is_pair_initiator(me, peer) {
                        let at = now + self.cfg.re_dial_delay;
                        if at <= self.end {
                            self.queue.push(at, Event::ReDial { initiator: me, peer })?;
                        }
                    }
                }
                Effect::EndTagReceived { .. } => {}
                Effect::AuditDrop { .. } => {
                    self.metrics.counters.audits += 1;
                }
            }
        }
        let entered_connection = {
            let device = &self.devices[me as usize];
            device
                .slots
                .get(&peer)
                .map(|s| {
                    s.pending_first_exchange
                        && s.machine.phase == Phase::Connection
                        && s.machine.role == Role::Initiator
                })
                .unwrap_or(false)
        };
        for msg in out.outbound {
            let with_retry = matches!(
                msg.body,
                MessageBody::Dialing1 { .. } | MessageBody::ConnInitiator { .. }
            );
            self.send_message(me, peer, msg, now, with_retry)?;
        }
        if entered_connection {
            let device = &mut self.devices[me as usize];
            if let Some(slot) = device.slots.get_mut(&peer) {
                slot.pending_first_exchange = false;
            }
            let location = self.build_report(me, peer, now);
            let msg = {
                let slot = self.devices[me as usize].slots.get_mut(&peer).expect("slot");
                slot.machine.next_exchange(now, &location)
            };
            if let Ok(msg) = msg {
                let progress = self.devices[me as usize].progress.get_mut(&peer).expect("progress");
                progress.attempts += 1;
                self.send_message(me, peer, msg, now, true)?;
            }
        }
        Ok(())
    }

    fn check_convergence(&mut self, observer: u32, peer: u32, now: SimTime) {
        let device = &self.devices[observer as usize];
        let ledger = match device.ledgers.get(&peer) {
            Some(l) => l,
            None => return,
        };
        let status = device
            .bindings
            .status(&self.peer_identity(peer))
            .unwrap_or(BindingStatus::Active);
        if is_authenticated(ledger, &self.policy, &self.scoring, status, now) {
            let progress = self.devices[observer as usize]
                .progress
                .get_mut(&peer)
                .expect("progress exists");
            if progress.converged_at.is_none() {
                progress.converged_at = Some(now);
            }
        }
    }

    fn peer_identity(&self, ix: u32) -> PrincipalIdentity {
        if ix == VERIFIER_IX {
            return self.verifier.as_ref().expect("verifier").identity.clone();
        }
        self.devices[ix as usize].identity.clone()
    }

    fn is_pair_initiator(&self, me: u32, peer: u32) -> bool {
        self.pairs.iter().any(|&(a, b)| a == me && b == peer)
    }

    fn index_of_sender(&self, sender: &PrincipalIdentity) -> Option<u32> {
        if let Some(v) = &self.verifier {
            if v.identity == *sender {
                return Some(VERIFIER_IX);
            }
        }
        // Device ids encode their index.
        sender
            .device_id
            .strip_prefix("d-")
            .and_then(|s| s.parse::<u32>().ok())
            .filter(|&ix| (ix as usize) < self.devices.len())
    }

    fn send_message(
        &mut self,
        from: u32,
        to: u32,
        msg: ProtocolMessage,
        now: SimTime,
        with_retry: bool,
    ) -> Result<(), SimError> {
        self.metrics.counters.messages_sent += 1;
        self.metrics.counters.sms_segments_sent += msg.sms_cost() as u64;
        if from != VERIFIER_IX {
            // Quota accounting; breaching the hard cap drops the send.
            let cost = msg.sms_cost();
            if cost > 0 && self.devices[from as usize].quota.record_send(cost).is_err() {
                self.metrics.counters.messages_failed += 1;
                return Ok(());
            }
        }
        // Control parts ride SMS; data-only payloads ride the data channel.
        let kind = match (&msg.body, msg.channel) {
            (MessageBody::IdentityProof(_), _) => ChannelKind::Data,
            (_, ChannelKind::Sms | ChannelKind::Data) => ChannelKind::Sms,
            (_, other) => other,
        };
        let sender_pos = self.position_of(from);
        let recipient_pos = self.position_of(to);
        let outcome = self.transport.send(
            self.seed,
            kind,
            msg.sms_segments,
            (from as u64, &sender_pos),
            (to as u64, &recipient_pos),
            now,
            &mut self.transport_rng,
        );
        if self.cfg.trace {
            self.metrics.transcript.push(TranscriptLine {
                at_ms: now.as_millis(),
                from: self.device_id(from),
                to: self.device_id(to),
                variant: msg.body.variant_name().to_string(),
                channel: format!("{:?}", msg.channel),
                sms_segments: msg.sms_segments,
                outcome: match outcome {
                    SendOutcome::Deliver { .. } => "deliver".to_string(),
                    SendOutcome::Intercepted { .. } => "intercepted".to_string(),
                    SendOutcome::Failed { .. } => "failed".to_string(),
                },
            });
        }
        match outcome {
            SendOutcome::Deliver { at } => {
                self.queue.push(at, Event::Deliver { to, msg })?;
            }
            SendOutcome::Intercepted { .. } => {
                self.metrics.counters.messages_intercepted += 1;
            }
            SendOutcome::Failed { .. } => {
                self.metrics.counters.messages_failed += 1;
            }
        }
        if with_retry && from != VERIFIER_IX {
            let (token, retries, timeout) = {
                let slot = self.devices[from as usize].slots.get(&to).expect("slot exists");
                (slot.token, slot.retries, slot.machine.retry_timeout())
            };
            let backoff = Duration::from_millis(timeout.as_millis() << retries);
            let at = now + backoff;
            if at <= self.end {
                self.queue.push(at, Event::Retry { owner: from, peer: to, token })?;
            }
        }
        Ok(())
    }

    // -- verifier ------------------------------------------------------

    fn on_verifier_probe(&mut self, now: SimTime) -> Result<(), SimError> {
        let (probe, msg, subject) = {
            let v = match &mut self.verifier {
                Some(v) => v,
                None => return Ok(()),
            };
            let ctx = PeerContext {
                me: v.identity.clone(),
                my_keys: v.keys.clone(),
                peer: self.devices[v.subject as usize].identity.clone(),
                peer_key: self.devices[v.subject as usize].keys.public_key.clone(),
            };
            v.next_probe_id += 1;
            let (pending, msg) =
                make_cloud_probe(&ctx, v.next_probe_id, now, &self.protocol_cfg, &mut self.verifier_rng);
            v.pending = Some(pending.clone());
            (pending, msg, v.subject)
        };
        let _ = probe;
        self.metrics.counters.probes_sent += 1;
        self.send_message(VERIFIER_IX, subject, msg, now, false)?;
        // Aperiodic schedule: the next probe lands in [0.5, 1.5) of the
        // mean interval.
        let (interval, next_ok) = {
            let v = self.verifier.as_ref().expect("verifier exists");
            let jitter = 0.5 + self.verifier_rng.uniform01();
            let interval = v.cfg.probe_interval.mul_f64(jitter);
            (interval, true)
        };
        let _ = next_ok;
        let at = now + interval;
        if at <= self.end {
            self.queue.push(at, Event::VerifierProbe)?;
        }
        Ok(())
    }

    fn on_verifier_message(&mut self, msg: ProtocolMessage, now: SimTime) -> Result<(), SimError> {
        let (record, subject, observer) = {
            let v = match &mut self.verifier {
                Some(v) => v,
                None => return Ok(()),
            };
            let pending = match &v.pending {
                Some(p) => p.clone(),
                None => {
                    self.metrics.counters.audits += 1;
                    return Ok(());
                }
            };
            let ctx = PeerContext {
                me: v.identity.clone(),
                my_keys: v.keys.clone(),
                peer: self.devices[v.subject as usize].identity.clone(),
                peer_key: self.devices[v.subject as usize].keys.public_key.clone(),
            };
            match validate_probe_response(&ctx, &pending, &msg, &self.protocol_cfg, now) {
                Ok(record) => {
                    v.pending = None;
                    v.ledger.record_interaction(record.observation, now);
                    (record, v.subject, v.observer)
                }
                Err(_) => {
                    self.metrics.counters.audits += 1;
                    return Ok(());
                }
            }
        };
        let _ = record;
        // Each verified probe mints one identity proof for the observer.
        let proof = {
            let v = self.verifier.as_ref().expect("verifier exists");
            issue_identity_proof(
                &v.identity,
                &v.keys,
                &self.devices[subject as usize].identity,
                now,
            )
        };
        self.metrics.counters.proofs_issued += 1;
        let msg = ProtocolMessage {
            sender: self.verifier.as_ref().expect("verifier").identity.clone(),
            recipient: self.devices[observer as usize].identity.clone(),
            body: MessageBody::IdentityProof(proof),
            channel: ChannelKind::Data,
            sms_segments: 1,
        };
        self.send_message(VERIFIER_IX, observer, msg, now, false)?;
        Ok(())
    }

    // -- wrap-up ---------------------------------------------------------

    fn finish(&mut self) {
        let mut records = Vec::new();
        for (ix, device) in self.devices.iter().enumerate() {
            for (&peer, progress) in &device.progress {
                let peer_model = if self.static_nodes.contains(&peer) {
                    String::from("static")
                } else {
                    format!("{:?}", self.models[peer as usize])
                };
                records.push(ConvergenceRecord {
                    observer: device.identity.device_id.clone(),
                    peer: self.device_id(peer),
                    converged_at: progress.converged_at,
                    noe: progress.noe,
                    exchanges_attempted: progress.attempts,
                    peer_model,
                });
            }
            let _ = ix;
        }
        self.metrics.convergence = records;
        self.metrics.finalize();
    }
}

fn population_models(cfg: &ScenarioConfig) -> (u32, Vec<MobilityModel>) {
    match &cfg.population {
        Population::Pairs { model } => {
            let n = cfg.node_count.max(2) / 2 * 2;
            (n, alloc::vec![*model; n as usize])
        }
        Population::ModelGroups { pairs_per_model, models } => {
            let n = 2 * pairs_per_model * models.len() as u32;
            let mut out = Vec::with_capacity(n as usize);
            for model in models {
                for _ in 0..(2 * pairs_per_model) {
                    out.push(*model);
                }
            }
            (n, out)
        }
        Population::SubjectObserver { subject_model } => {
            (2, alloc::vec![*subject_model, MobilityModel::SimpleTraffic])
        }
    }
}
