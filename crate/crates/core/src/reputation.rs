//! Reputation scoring, decay, threshold policy and the authentication
//! decision.
//!
//! Per observed peer, one ledger counts this epoch's successful
//! interactions: `m1` for untrusted locations, `m2` for unique trusted
//! locations. At epoch close the weighted sum `m = w_u·m1 + w_t·m2` is
//! folded into an exponential smoothing accumulator
//! `f1 ← α·m + (1−α)·f1`, so an empty epoch shrinks `f1` by `(1−α)` — that
//! shrinkage is the decay mechanism. Third-party identity proofs accumulate
//! separately in `f2` and never decay.
//!
//! The live score is `scale·(γ·f1(t) + δ·f2)` with the current epoch's
//! counters included. After `q` closed epochs it equals the closed form
//! `scale·(α·γ·Σ_{i=1..q} (1−α)^{q−i}·m_i + δ·f2)`, which the test suite
//! holds to 1e-9 relative against the recursion.
//!
//! `scale` is a calibration constant computed at startup, not hardcoded: it
//! is chosen so that a baseline epoch of `k` untrusted successes yields the
//! configured average per-epoch increase over the first `L` epochs, which
//! ties the score units to the threshold arithmetic
//! `Δ = L × per-epoch increase`.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::identity::BindingStatus;
use crate::units::{Duration, SimTime};

/// Relative slack used when comparing scores against thresholds; absorbs
/// float fold-order noise between the recursive and calibrated paths.
pub const SCORE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReputationError {
    #[error("smoothing factor must lie in (0.5, 1)")]
    AlphaOutOfRange,
    #[error("location weights must satisfy w_trusted > w_untrusted > 1")]
    WeightOrder,
    #[error("score constants must satisfy delta > gamma > 0")]
    ConstantOrder,
    #[error("interference probability must lie in [0, 1)")]
    InterferenceOutOfRange,
    #[error("threshold policy violates the design inequality")]
    PolicyInfeasible,
    #[error("identity proof rejected")]
    ProofRejected,
}

/// The five scoring constants with their ordering constraints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub alpha: f64,
    pub gamma: f64,
    pub delta: f64,
    pub w_untrusted: f64,
    pub w_trusted: f64,
}

impl Weights {
    pub fn new(
        alpha: f64,
        gamma: f64,
        delta: f64,
        w_untrusted: f64,
        w_trusted: f64,
    ) -> Result<Self, ReputationError> {
        if !(alpha > 0.5 && alpha < 1.0) {
            return Err(ReputationError::AlphaOutOfRange);
        }
        if !(w_trusted > w_untrusted && w_untrusted > 1.0) {
            return Err(ReputationError::WeightOrder);
        }
        if !(delta > gamma && gamma > 0.0) {
            return Err(ReputationError::ConstantOrder);
        }
        Ok(Weights { alpha, gamma, delta, w_untrusted, w_trusted })
    }
}

impl Default for Weights {
    fn default() -> Self {
        Weights::new(0.8, 1.0, 10.0, 2.0, 5.0).expect("default weights are valid")
    }
}

/// Scoring configuration: weights, the linear proof unit for `f2`, and the
/// calibration scale applied to the whole score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scoring {
    pub weights: Weights,
    /// Score contribution of one identity proof before `delta` weighting.
    pub proof_unit: f64,
    pub scale: f64,
}

impl Scoring {
    /// Uncalibrated scoring (scale 1); used by unit tests and oracles.
    pub fn unit(weights: Weights) -> Self {
        Scoring { weights, proof_unit: 100.0, scale: 1.0 }
    }

    /// Calibrates `scale` so that a baseline of `k` untrusted successes per
    /// epoch yields `target_increase` per epoch on average over the first
    /// `epochs` epochs. Evaluated numerically with the same recursion the
    /// ledger uses.
    pub fn calibrated(
        weights: Weights,
        proof_unit: f64,
        target_increase: f64,
        k: u32,
        epochs: u32,
    ) -> Self {
        let m_epoch = weights.w_untrusted * k as f64;
        let mut f1 = 0.0_f64;
        for _ in 0..epochs {
            f1 = weights.alpha * m_epoch + (1.0 - weights.alpha) * f1;
        }
        let raw = weights.gamma * f1;
        let scale = target_increase * epochs as f64 / raw;
        Scoring { weights, proof_unit, scale }
    }

    /// Average per-epoch score increase of the calibrated baseline.
    pub fn per_epoch_increase(&self, k: u32, epochs: u32) -> f64 {
        let m_epoch = self.weights.w_untrusted * k as f64;
        let mut f1 = 0.0_f64;
        for _ in 0..epochs {
            f1 = self.weights.alpha * m_epoch + (1.0 - self.weights.alpha) * f1;
        }
        self.scale * self.weights.gamma * f1 / epochs as f64
    }
}

/// How `m2` uniqueness is judged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UniquenessMode {
    /// A trusted endpoint earns `m2` again only after this much time.
    Window(Duration),
    /// A trusted endpoint earns `m2` at most once per epoch.
    PerEpoch,
}

impl Default for UniquenessMode {
    fn default() -> Self {
        UniquenessMode::Window(Duration::from_secs(2 * crate::units::SECS_PER_DAY))
    }
}

/// What the protocol layer observed about the peer's location in one
/// verified interaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservedLocation {
    pub trust: ObservedTrust,
    /// Appendix-style asymmetry flag: false when the location was
    /// self-declared by the party that initiated the exchange.
    pub credible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObservedTrust {
    Untrusted,
    Trusted { endpoint: u64 },
}

/// Per-peer reputation state held by one observer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReputationLedger {
    /// Completed (folded) epochs.
    pub epoch_index: u32,
    /// Smoothed accumulator over closed epochs.
    pub f1_value: f64,
    pub m1_current: u32,
    pub m2_current: u32,
    /// Weighted `m` value of each closed epoch, oldest first.
    pub m_history: Vec<f64>,
    /// Third-party identity proof count (cumulative, never reset).
    pub f2_proofs: u32,
    pub last_activity: Option<SimTime>,
    epoch_len: Duration,
    uniqueness: UniquenessMode,
    /// Last time each trusted endpoint was credited as unique.
    trusted_seen: BTreeMap<u64, SimTime>,
    /// Endpoints credited as unique within the current epoch.
    trusted_seen_epoch: BTreeMap<u64, u32>,
    epoch_started: SimTime,
    prev_event: SimTime,
    max_gap: Duration,
}

impl ReputationLedger {
    pub fn new(epoch_len: Duration, uniqueness: UniquenessMode, now: SimTime) -> Self {
        ReputationLedger {
            epoch_index: 0,
            f1_value: 0.0,
            m1_current: 0,
            m2_current: 0,
            m_history: Vec::new(),
            f2_proofs: 0,
            last_activity: None,
            epoch_len,
            uniqueness,
            trusted_seen: BTreeMap::new(),
            trusted_seen_epoch: BTreeMap::new(),
            epoch_started: now,
            prev_event: now,
            max_gap: Duration::ZERO,
        }
    }

    /// Records one successful interaction. Untrusted locations bump `m1`;
    /// trusted locations bump `m2` the first time an endpoint is seen
    /// within the uniqueness window and `m1` on repeats.
    pub fn record_interaction(&mut self, location: ObservedLocation, now: SimTime) {
        let gap = now.saturating_sub(self.prev_event);
        if gap > self.max_gap {
            self.max_gap = gap;
        }
        self.prev_event = now;
        self.last_activity = Some(now);
        match location.trust {
            ObservedTrust::Untrusted => self.m1_current += 1,
            ObservedTrust::Trusted { endpoint } => {
                let unique = match self.uniqueness {
                    UniquenessMode::Window(window) => match self.trusted_seen.get(&endpoint) {
                        Some(&seen) => now.saturating_sub(seen) > window,
                        None => true,
                    },
                    UniquenessMode::PerEpoch => !self.trusted_seen_epoch.contains_key(&endpoint),
                };
                if unique {
                    self.m2_current += 1;
                    self.trusted_seen.insert(endpoint, now);
                    *self.trusted_seen_epoch.entry(endpoint).or_insert(0) += 1;
                } else {
                    self.m1_current += 1;
                }
            }
        }
    }

    /// Weighted interaction total of the current epoch.
    pub fn m_current(&self, weights: &Weights) -> f64 {
        weights.w_untrusted * self.m1_current as f64 + weights.w_trusted * self.m2_current as f64
    }

    /// True if the peer went silent for more than half the epoch; such an
    /// epoch's interactions are discarded from scoring.
    pub fn inactive_over_half_epoch(&self, close_at: SimTime) -> bool {
        let tail = close_at.saturating_sub(self.prev_event);
        let max_gap = if tail > self.max_gap { tail } else { self.max_gap };
        max_gap.as_millis() * 2 > self.epoch_len.as_millis()
    }

    /// Folds the current epoch into `f1` and advances the epoch counter.
    pub fn close_epoch(&mut self, weights: &Weights, now: SimTime) {
        let m = if self.inactive_over_half_epoch(now) && (self.m1_current + self.m2_current) > 0 {
            0.0
        } else {
            self.m_current(weights)
        };
        self.f1_value = weights.alpha * m + (1.0 - weights.alpha) * self.f1_value;
        self.m_history.push(m);
        self.epoch_index += 1;
        self.m1_current = 0;
        self.m2_current = 0;
        self.trusted_seen_epoch.clear();
        self.epoch_started = now;
        self.prev_event = now;
        self.max_gap = Duration::ZERO;
    }

    /// Counts one third-party identity proof.
    pub fn add_identity_proof(&mut self, now: SimTime) {
        self.f2_proofs += 1;
        self.last_activity = Some(now);
    }

    pub fn f2_value(&self, scoring: &Scoring) -> f64 {
        self.f2_proofs as f64 * scoring.proof_unit
    }

    /// Live score: current-epoch counters folded in at full weight.
    pub fn score(&self, scoring: &Scoring) -> f64 {
        let w = &scoring.weights;
        let f1_live = w.alpha * self.m_current(w) + (1.0 - w.alpha) * self.f1_value;
        scoring.scale * (w.gamma * f1_live + w.delta * self.f2_value(scoring))
    }
}

/// Closed form of the score after `q` epochs:
/// `scale·(α·γ·Σ (1−α)^{q−i}·m_i + δ·proof_unit·f2)`.
pub fn closed_form_score(m_history: &[f64], f2_proofs: u32, scoring: &Scoring) -> f64 {
    let w = &scoring.weights;
    let q = m_history.len();
    let mut x = 0.0;
    let mut weight = 1.0; // (1 - alpha)^(q - i), starting at i = q
    for i in (0..q).rev() {
        x += weight * m_history[i];
        weight *= 1.0 - w.alpha;
    }
    scoring.scale * (w.alpha * w.gamma * x + w.delta * (f2_proofs as f64 * scoring.proof_unit))
}

/// `l(p) = log(1−p) / log(p)`, monotonically increasing on (0, 1).
pub fn interference_l(p: f64) -> Result<f64, ReputationError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(ReputationError::InterferenceOutOfRange);
    }
    Ok(libm::log(1.0 - p) / libm::log(p))
}

/// Authentication threshold policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub delta_threshold: f64,
    pub epochs_required: u32,
    pub k: u32,
    pub p_design: f64,
    /// Calibrated per-epoch increase the threshold arithmetic is based on.
    pub per_epoch_increase: f64,
    /// Peers silent for longer than this are not authenticated even above
    /// threshold.
    pub liveness_horizon: Duration,
    /// Fraction of the threshold below which a decayed identity becomes
    /// revocation-eligible.
    pub revocation_fraction: f64,
}

impl ThresholdPolicy {
    /// Normalized exponent for the design inequality `(1−p)^{Lk} > p^{Δn}`:
    /// the raw score threshold re-expressed as the number of exchanges
    /// needed when the average per-epoch growth reflects interference `p`,
    /// `Δn = Δ·k / (per_epoch_increase·(1−p))`.
    pub fn normalized_threshold(&self, p: f64) -> f64 {
        self.delta_threshold * self.k as f64 / (self.per_epoch_increase * (1.0 - p))
    }

    /// Checks `(1−p)^{Lk} > p^{Δn}` in log space.
    pub fn design_inequality_holds(&self, p: f64) -> Result<bool, ReputationError> {
        if !(p > 0.0 && p < 1.0) {
            return Err(ReputationError::InterferenceOutOfRange);
        }
        let lk = (self.epochs_required * self.k) as f64;
        let lhs = lk * libm::log(1.0 - p);
        let rhs = self.normalized_threshold(p) * libm::log(p);
        Ok(lhs > rhs)
    }
}

/// Picks the reputation threshold for a design interference level `p`:
/// `Δ = max(L·k·l(p)·u, L·per_epoch_increase)` with `u` the per-exchange
/// score unit `per_epoch_increase / k`. `p = 0` means no adversary and
/// falls back to `L·per_epoch_increase` directly.
pub fn compute_threshold(
    p: f64,
    epochs: u32,
    k: u32,
    per_epoch_increase: f64,
) -> Result<ThresholdPolicy, ReputationError> {
    if !(0.0..1.0).contains(&p) {
        return Err(ReputationError::InterferenceOutOfRange);
    }
    let base = epochs as f64 * per_epoch_increase;
    let delta_threshold = if p == 0.0 {
        base
    } else {
        let unit = per_epoch_increase / k as f64;
        let guarded = epochs as f64 * k as f64 * interference_l(p)? * unit;
        if guarded > base {
            guarded
        } else {
            base
        }
    };
    let policy = ThresholdPolicy {
        delta_threshold,
        epochs_required: epochs,
        k,
        p_design: p,
        per_epoch_increase,
        liveness_horizon: Duration::from_secs(2 * crate::units::SECS_PER_DAY),
        revocation_fraction: 0.2,
    };
    if p > 0.0 && !policy.design_inequality_holds(p)? {
        return Err(ReputationError::PolicyInfeasible);
    }
    Ok(policy)
}

/// The authentication decision: score above threshold, binding active,
/// recent activity.
pub fn is_authenticated(
    ledger: &ReputationLedger,
    policy: &ThresholdPolicy,
    scoring: &Scoring,
    binding_status: BindingStatus,
    now: SimTime,
) -> bool {
    if binding_status != BindingStatus::Active {
        return false;
    }
    let live = match ledger.last_activity {
        Some(t) => now.saturating_sub(t) <= policy.liveness_horizon,
        None => false,
    };
    live && ledger.score(scoring) >= policy.delta_threshold * (1.0 - SCORE_EPS)
}

/// True when a once-active identity has decayed far enough below threshold
/// to qualify for key revocation.
pub fn revocation_eligible(
    ledger: &ReputationLedger,
    policy: &ThresholdPolicy,
    scoring: &Scoring,
) -> bool {
    ledger.last_activity.is_some()
        && ledger.epoch_index >= 1
        && ledger.score(scoring) < policy.revocation_fraction * policy.delta_threshold
}

#[cfg(test)]
mod tests {
    use super::*;

    const DAY: Duration = Duration(crate::units::SECS_PER_DAY * 1000);

    fn ledger() -> ReputationLedger {
        ReputationLedger::new(DAY, UniquenessMode::default(), SimTime::ZERO)
    }

    fn untrusted() -> ObservedLocation {
        ObservedLocation { trust: ObservedTrust::Untrusted, credible: true }
    }

    fn trusted(endpoint: u64) -> ObservedLocation {
        ObservedLocation { trust: ObservedTrust::Trusted { endpoint }, credible: true }
    }

    #[test]
    fn weight_constraints_are_enforced() {
        assert!(Weights::new(0.8, 1.0, 10.0, 2.0, 5.0).is_ok());
        assert_eq!(
            Weights::new(0.4, 1.0, 10.0, 2.0, 5.0),
            Err(ReputationError::AlphaOutOfRange)
        );
        assert_eq!(
            Weights::new(0.8, 1.0, 10.0, 5.0, 2.0),
            Err(ReputationError::WeightOrder)
        );
        assert_eq!(
            Weights::new(0.8, 10.0, 1.0, 2.0, 5.0),
            Err(ReputationError::ConstantOrder)
        );
    }

    #[test]
    fn untrusted_interactions_count_m1() {
        let mut l = ledger();
        for i in 0..3 {
            l.record_interaction(untrusted(), SimTime::from_secs(i * 60));
        }
        assert_eq!((l.m1_current, l.m2_current), (3, 0));
    }

    #[test]
    fn repeated_trusted_endpoint_counts_once_within_window() {
        let mut l = ledger();
        l.record_interaction(trusted(9), SimTime::from_secs(10));
        l.record_interaction(trusted(9), SimTime::from_secs(3600));
        assert_eq!((l.m1_current, l.m2_current), (1, 1));
        // Outside the 2-day window the endpoint is unique again.
        l.record_interaction(trusted(9), SimTime::from_secs(3 * crate::units::SECS_PER_DAY));
        assert_eq!(l.m2_current, 2);
    }

    #[test]
    fn distinct_trusted_endpoints_both_count_m2() {
        let mut l = ledger();
        l.record_interaction(trusted(1), SimTime::from_secs(10));
        l.record_interaction(trusted(2), SimTime::from_secs(20));
        assert_eq!((l.m1_current, l.m2_current), (0, 2));
    }

    #[test]
    fn close_epoch_folds_hand_computed_value() {
        // f1_prev = 0, m1 = 24, m2 = 0, alpha = 0.8, w_untrusted = 2
        // => f1 = 0.8 * 48 = 38.4
        let w = Weights::default();
        let mut l = ledger();
        for i in 0..24 {
            l.record_interaction(untrusted(), SimTime::from_secs(i * 3600));
        }
        l.close_epoch(&w, SimTime::from_days(1));
        assert!((l.f1_value - 38.4).abs() < 1e-12);
        assert_eq!(l.epoch_index, 1);
        assert_eq!((l.m1_current, l.m2_current), (0, 0));
    }

    #[test]
    fn zero_epoch_decays_by_one_minus_alpha() {
        let w = Weights::default();
        let mut l = ledger();
        for i in 0..24 {
            l.record_interaction(untrusted(), SimTime::from_secs(i * 3600));
        }
        l.close_epoch(&w, SimTime::from_days(1));
        let before = l.f1_value;
        l.close_epoch(&w, SimTime::from_days(2));
        assert!((l.f1_value - 0.2 * before).abs() < 1e-12);
    }

    #[test]
    fn two_epoch_recursion_matches_hand_value() {
        // m = 10 then 20 at alpha = 0.8: f1 = 0.8*20 + 0.2*(0.8*10) = 17.6
        let w = Weights::default();
        let mut f1 = 0.0;
        for m in [10.0, 20.0] {
            f1 = w.alpha * m + (1.0 - w.alpha) * f1;
        }
        assert!((f1 - 17.6).abs() < 1e-12);
    }

    #[test]
    fn closed_form_matches_single_epoch() {
        let scoring = Scoring::unit(Weights::default());
        let x = closed_form_score(&[48.0], 0, &scoring);
        assert!((x - 38.4).abs() < 1e-12);
    }

    #[test]
    fn empty_ledger_scores_zero() {
        let scoring = Scoring::unit(Weights::default());
        assert_eq!(ledger().score(&scoring), 0.0);
        assert_eq!(closed_form_score(&[], 0, &scoring), 0.0);
    }

    #[test]
    fn five_proofs_contribute_fifty_units_times_delta() {
        let scoring = Scoring::unit(Weights::default());
        let mut l = ledger();
        for i in 0..5 {
            l.add_identity_proof(SimTime::from_secs(i));
        }
        // Y = delta * f2(5) = 10 * 5 * proof_unit = 50 * proof_unit.
        let y = scoring.weights.delta * l.f2_value(&scoring);
        assert!((y - 50.0 * scoring.proof_unit).abs() < 1e-12);
        assert!((l.score(&scoring) - y).abs() < 1e-12);
    }

    #[test]
    fn score_equals_closed_form_on_random_histories() {
        let mut rng = crate::rng::SimRng::derive(99, "cf-equiv", 0);
        for _ in 0..1000 {
            let alpha = rng.uniform(0.55, 0.95);
            let w_u = rng.uniform(1.1, 4.0);
            let w_t = w_u + rng.uniform(0.5, 6.0);
            let gamma = rng.uniform(0.2, 3.0);
            let delta = gamma + rng.uniform(0.5, 20.0);
            let weights = Weights::new(alpha, gamma, delta, w_u, w_t).unwrap();
            let scoring = Scoring::unit(weights);
            let q = rng.index(8) + 1;
            let mut l = ledger();
            let mut history = Vec::new();
            let mut now = SimTime::ZERO;
            for epoch in 0..q {
                let m1 = rng.index(30) as u32;
                let m2 = rng.index(5) as u32;
                // Spread interactions across the epoch so no silence gap
                // exceeds half of it and the inactivity filter stays quiet.
                let count = (m1 + m2) as u64;
                let at = |idx: u64| SimTime(now.0 + (2 * idx + 1) * DAY.as_millis() / (2 * count));
                for j in 0..m1 as u64 {
                    l.record_interaction(untrusted(), at(j));
                }
                for j in 0..m2 as u64 {
                    // Fresh endpoint ids keep every trusted visit unique.
                    let ep = now.0 * 100 + j;
                    l.record_interaction(trusted(ep), at(m1 as u64 + j));
                }
                history.push(weights.w_untrusted * m1 as f64 + weights.w_trusted * m2 as f64);
                now = now + DAY;
                if epoch + 1 < q {
                    l.close_epoch(&weights, now);
                }
            }
            let f2 = rng.index(4) as u32;
            l.f2_proofs = f2;
            // Live score at the conclusion of epoch q, before folding.
            let recursive = l.score(&scoring);
            let closed = closed_form_score(&history, f2, &scoring);
            let tol = 1e-9 * closed.abs().max(1.0);
            assert!(
                (recursive - closed).abs() <= tol,
                "recursive {recursive} vs closed {closed}"
            );
            // Folding the last epoch must agree as well.
            l.close_epoch(&weights, now);
            let folded = scoring.scale
                * (weights.gamma * l.f1_value + weights.delta * l.f2_value(&scoring));
            assert!((folded - closed).abs() <= tol, "folded {folded} vs closed {closed}");
        }
    }

    #[test]
    fn inactivity_over_half_epoch_discards_the_epoch() {
        let w = Weights::default();
        let mut l = ledger();
        l.record_interaction(untrusted(), SimTime::from_secs(600));
        // Silent for the remaining ~23.8 hours of the epoch.
        l.close_epoch(&w, SimTime::from_days(1));
        assert_eq!(l.m_history.last(), Some(&0.0));
        assert_eq!(l.f1_value, 0.0);
    }

    #[test]
    fn steady_activity_is_not_discarded() {
        let w = Weights::default();
        let mut l = ledger();
        for h in 0..24 {
            l.record_interaction(untrusted(), SimTime::from_hours(h));
        }
        l.close_epoch(&w, SimTime::from_days(1));
        assert!(l.f1_value > 0.0);
    }

    #[test]
    fn calibration_pins_per_epoch_increase() {
        let scoring = Scoring::calibrated(Weights::default(), 100.0, 1680.0, 24, 3);
        let inc = scoring.per_epoch_increase(24, 3);
        assert!((inc - 1680.0).abs() < 1e-6, "increase {inc}");
    }

    #[test]
    fn threshold_matches_paper_arithmetic() {
        // L = 3, calibrated increase 1680 => 5040, in the [5000, 5100] band.
        let policy = compute_threshold(0.28, 3, 24, 1680.0).unwrap();
        assert!((5000.0..=5100.0).contains(&policy.delta_threshold), "{}", policy.delta_threshold);
    }

    #[test]
    fn l_of_half_is_one() {
        assert!((interference_l(0.5).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn l_is_monotone_on_a_grid() {
        let mut prev = f64::NEG_INFINITY;
        for i in 1..100 {
            let p = i as f64 / 100.0;
            let l = interference_l(p).unwrap();
            assert!(l > prev, "l({p}) = {l} not increasing");
            prev = l;
        }
    }

    #[test]
    fn design_inequality_holds_for_tested_interference_levels() {
        let policy = compute_threshold(0.28, 3, 24, 1680.0).unwrap();
        for p in [0.1, 0.28, 0.54] {
            assert!(policy.design_inequality_holds(p).unwrap(), "failed at p={p}");
        }
    }

    #[test]
    fn p_domain_is_enforced() {
        assert!(compute_threshold(-0.1, 3, 24, 1680.0).is_err());
        assert!(compute_threshold(1.0, 3, 24, 1680.0).is_err());
        let p0 = compute_threshold(0.0, 3, 24, 1680.0).unwrap();
        assert!((p0.delta_threshold - 5040.0).abs() < 1e-9);
    }

    #[test]
    fn authentication_requires_active_binding_and_liveness() {
        let scoring = Scoring::calibrated(Weights::default(), 100.0, 1680.0, 24, 3);
        let policy = compute_threshold(0.0, 3, 24, 1680.0).unwrap();
        let w = scoring.weights;
        let mut l = ledger();
        let mut now = SimTime::ZERO;
        for epoch in 0..4 {
            for h in 0..24 {
                l.record_interaction(untrusted(), now + Duration::from_hours(h));
            }
            now = now + DAY;
            if epoch < 3 {
                l.close_epoch(&w, now);
            }
        }
        // Counters of the fourth epoch are live: the score sits above the
        // three-epoch threshold.
        assert!(l.score(&scoring) > 5040.0 * (1.0 - SCORE_EPS));
        assert!(is_authenticated(&l, &policy, &scoring, BindingStatus::Active, now));
        assert!(!is_authenticated(&l, &policy, &scoring, BindingStatus::Conflicted, now));
        assert!(!is_authenticated(&l, &policy, &scoring, BindingStatus::Revoked, now));
        // Stale ledger fails the liveness gate even above threshold.
        let later = now + Duration::from_secs(3 * crate::units::SECS_PER_DAY);
        assert!(!is_authenticated(&l, &policy, &scoring, BindingStatus::Active, later));
    }

    #[test]
    fn decay_below_fraction_flags_revocation() {
        let scoring = Scoring::calibrated(Weights::default(), 100.0, 1680.0, 24, 3);
        let policy = compute_threshold(0.0, 3, 24, 1680.0).unwrap();
        let w = scoring.weights;
        let mut l = ledger();
        let mut now = SimTime::ZERO;
        for _ in 0..4 {
            for h in 0..24 {
                l.record_interaction(untrusted(), now + Duration::from_hours(h));
            }
            now = now + DAY;
            l.close_epoch(&w, now);
        }
        assert!(!revocation_eligible(&l, &policy, &scoring));
        // Empty epochs decay f1 by (1 - alpha) each; eventually < 0.2 * delta.
        let mut empties = 0;
        while !revocation_eligible(&l, &policy, &scoring) {
            now = now + DAY;
            l.close_epoch(&w, now);
            empties += 1;
            assert!(empties < 50, "never became revocation-eligible");
        }
        // (1 - alpha)^n decay: expect crossing within a handful of epochs.
        assert!(empties <= 10, "took {empties} empty epochs");
    }
}
