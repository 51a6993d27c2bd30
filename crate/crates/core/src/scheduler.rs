//! On-device reputation manager: active-list selection, message quota and
//! send-rate backoff.
//!
//! Epoch initiations are ordered by a fixed-priority preemptive policy with
//! two fairness mechanisms layered on top: contacts are grouped into
//! batches that take turns at the head of the list so no batch starves, and
//! the maximum priority eligible for trusted-location score boosts is
//! reduced cyclically so low-priority contacts are not permanently shut out
//! of `m2` credit.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::identity::PrincipalIdentity;
use crate::units::{Duration, SimTime};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SchedulerError {
    #[error("priority must lie in [1, 10]")]
    PriorityOutOfRange,
    #[error("message quota exhausted beyond the overrun allowance")]
    QuotaExceeded,
}

/// One address-book entry as the reputation manager sees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactEntry {
    pub peer: PrincipalIdentity,
    /// Manually entered importance, 1 (lowest) to 10 (highest).
    pub priority: u8,
    /// Disjoint rotation group.
    pub batch: u32,
    /// Exponentially averaged sends per day; informs the suggested
    /// priority but never overrides the manual one.
    pub interaction_frequency: f64,
}

impl ContactEntry {
    pub fn new(peer: PrincipalIdentity, priority: u8, batch: u32) -> Result<Self, SchedulerError> {
        if !(1..=10).contains(&priority) {
            return Err(SchedulerError::PriorityOutOfRange);
        }
        Ok(ContactEntry { peer, priority, batch, interaction_frequency: 0.0 })
    }

    pub fn observe_send(&mut self, sends_today: f64) {
        const SMOOTH: f64 = 0.3;
        self.interaction_frequency =
            SMOOTH * sends_today + (1.0 - SMOOTH) * self.interaction_frequency;
    }
}

/// Default priority suggestion derived from interaction frequency.
pub fn suggested_priority(frequency_per_day: f64) -> u8 {
    let scaled = 1.0 + frequency_per_day / 24.0 * 9.0;
    libm::round(scaled.clamp(1.0, 10.0)) as u8
}

/// Batch count heuristic: one batch per 25 contacts.
pub fn batch_count(contacts: usize) -> u32 {
    (contacts.div_ceil(25)).max(1) as u32
}

/// Message budget for one period, with a small overrun allowance so an
/// in-flight epoch can finish.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quota {
    pub messages_per_period: u32,
    pub period: Duration,
    pub spent: u32,
    pub overrun_allowance: f64,
}

impl Quota {
    pub fn new(messages_per_period: u32, period: Duration) -> Self {
        Quota { messages_per_period, period, spent: 0, overrun_allowance: 0.1 }
    }

    pub fn hard_cap(&self) -> u32 {
        libm::floor(self.messages_per_period as f64 * (1.0 + self.overrun_allowance)) as u32
    }

    /// True while new epochs may still be started.
    pub fn has_headroom(&self) -> bool {
        self.spent < self.messages_per_period
    }

    /// Counts segments against the quota. In-flight traffic may overrun
    /// the nominal budget, but never the hard cap.
    pub fn record_send(&mut self, sms_segments: u32) -> Result<(), SchedulerError> {
        if self.spent + sms_segments > self.hard_cap() {
            return Err(SchedulerError::QuotaExceeded);
        }
        self.spent += sms_segments;
        Ok(())
    }

    pub fn reset(&mut self) {
        self.spent = 0;
    }
}

/// Scheduling knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    /// Rotation period for the batch at the head of the list.
    pub rotation_period: Duration,
    /// Cycle period of the trusted-boost priority cap.
    pub boost_cap_period: Duration,
    /// Estimated messages consumed by one full epoch; sizes quota headroom.
    pub messages_per_epoch: u32,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        let day = Duration::from_secs(crate::units::SECS_PER_DAY);
        SchedulerConfig {
            rotation_period: day,
            boost_cap_period: day,
            messages_per_epoch: 2 * 24 + 3,
        }
    }
}

/// Batch whose members lead the active list at `now`.
pub fn current_batch(now: SimTime, cfg: &SchedulerConfig, batches: u32) -> u32 {
    if batches == 0 {
        return 0;
    }
    ((now.as_millis() / cfg.rotation_period.as_millis().max(1)) % batches as u64) as u32
}

/// Maximum priority currently eligible for trusted-location score boosts;
/// cycles 10, 9, …, 1 and back.
pub fn trusted_boost_cap(now: SimTime, cfg: &SchedulerConfig) -> u8 {
    let cycle = (now.as_millis() / cfg.boost_cap_period.as_millis().max(1)) % 10;
    10 - cycle as u8
}

pub fn trusted_boost_eligible(priority: u8, now: SimTime, cfg: &SchedulerConfig) -> bool {
    priority <= trusted_boost_cap(now, cfg)
}

/// Orders contacts for new-epoch initiation and truncates to what the
/// remaining quota can fund.
///
/// The current rotation batch goes first; within a batch, higher priority
/// wins; ties break on device id so the ordering is total.
pub fn build_active_list(
    contacts: &[ContactEntry],
    quota: &Quota,
    now: SimTime,
    cfg: &SchedulerConfig,
) -> Vec<PrincipalIdentity> {
    if contacts.is_empty() {
        return Vec::new();
    }
    let batches = contacts.iter().map(|c| c.batch).max().unwrap_or(0) + 1;
    let lead = current_batch(now, cfg, batches);

    let mut order: Vec<&ContactEntry> = contacts.iter().collect();
    order.sort_by(|a, b| {
        let da = (a.batch + batches - lead) % batches;
        let db = (b.batch + batches - lead) % batches;
        da.cmp(&db)
            .then(b.priority.cmp(&a.priority))
            .then(a.peer.device_id.cmp(&b.peer.device_id))
    });

    let headroom = if quota.has_headroom() {
        let remaining = quota.messages_per_period - quota.spent;
        (remaining / cfg.messages_per_epoch.max(1)).max(1) as usize
    } else {
        0
    };
    order.into_iter().take(headroom).map(|c| c.peer.clone()).collect()
}

/// AIMD send-rate controller fed by delay and loss signals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SendRateBackoff {
    pub rate: f64,
    pub decrease_factor: f64,
    pub increase_step: f64,
    /// Delivery delay beyond this reads as congestion.
    pub delay_threshold: Duration,
}

impl Default for SendRateBackoff {
    fn default() -> Self {
        SendRateBackoff {
            rate: 1.0,
            decrease_factor: 0.5,
            increase_step: 0.05,
            delay_threshold: Duration::from_secs(30),
        }
    }
}

impl SendRateBackoff {
    /// Feeds one period's observation and returns the new multiplier.
    pub fn apply_backoff(&mut self, observed_delay: Duration, loss: bool) -> f64 {
        if loss || observed_delay > self.delay_threshold {
            self.rate = (self.rate * self.decrease_factor).max(0.01);
        } else {
            self.rate = (self.rate + self.increase_step).min(1.0);
        }
        self.rate
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;

    fn contact(n: u32, priority: u8, batch: u32) -> ContactEntry {
        ContactEntry::new(
            PrincipalIdentity::mobile(&format!("u{n}"), &format!("d{n:04}")),
            priority,
            batch,
        )
        .unwrap()
    }

    fn day() -> Duration {
        Duration::from_secs(crate::units::SECS_PER_DAY)
    }

    #[test]
    fn priority_range_is_enforced() {
        assert!(contact(1, 1, 0).priority == 1);
        assert_eq!(
            ContactEntry::new(PrincipalIdentity::mobile("u", "d"), 0, 0).unwrap_err(),
            SchedulerError::PriorityOutOfRange
        );
        assert_eq!(
            ContactEntry::new(PrincipalIdentity::mobile("u", "d"), 11, 0).unwrap_err(),
            SchedulerError::PriorityOutOfRange
        );
    }

    #[test]
    fn highest_priority_wins_the_single_slot() {
        let contacts = vec![contact(1, 10, 0), contact(2, 1, 0)];
        let quota = Quota::new(51, day());
        let cfg = SchedulerConfig::default();
        let list = build_active_list(&contacts, &quota, SimTime::ZERO, &cfg);
        assert_eq!(list.len(), 1);
        assert_eq!(list[0].user_id, "u1");
    }

    #[test]
    fn batches_alternate_across_periods() {
        let contacts = vec![contact(1, 5, 0), contact(2, 5, 1)];
        let quota = Quota::new(51, day());
        let cfg = SchedulerConfig::default();
        let first = build_active_list(&contacts, &quota, SimTime::ZERO, &cfg);
        let second = build_active_list(&contacts, &quota, SimTime::from_days(1), &cfg);
        assert_eq!(first[0].user_id, "u1");
        assert_eq!(second[0].user_id, "u2");
    }

    #[test]
    fn exhausted_quota_blocks_new_epochs_but_allows_overrun() {
        let mut quota = Quota::new(100, day());
        quota.spent = 100;
        let contacts = vec![contact(1, 5, 0)];
        let cfg = SchedulerConfig::default();
        assert!(build_active_list(&contacts, &quota, SimTime::ZERO, &cfg).is_empty());
        // In-flight traffic may spill into the 10% allowance…
        assert!(quota.record_send(5).is_ok());
        assert_eq!(quota.spent, 105);
        // …but never past the hard cap.
        assert_eq!(quota.record_send(6).unwrap_err(), SchedulerError::QuotaExceeded);
        assert!(quota.spent <= quota.hard_cap());
    }

    #[test]
    fn segment_accounting_adds_up() {
        let mut quota = Quota::new(100, day());
        quota.record_send(3).unwrap();
        assert_eq!(quota.spent, 3);
    }

    #[test]
    fn one_loss_halves_the_rate() {
        let mut b = SendRateBackoff::default();
        let rate = b.apply_backoff(Duration::from_secs(5), true);
        assert_eq!(rate, 0.5);
    }

    #[test]
    fn ten_clean_periods_restore_full_rate() {
        let mut b = SendRateBackoff::default();
        b.apply_backoff(Duration::from_secs(5), true);
        let mut rate = b.rate;
        for _ in 0..10 {
            rate = b.apply_backoff(Duration::from_secs(1), false);
        }
        assert_eq!(rate, 1.0);
    }

    #[test]
    fn slow_delivery_reads_as_congestion() {
        let mut b = SendRateBackoff::default();
        let rate = b.apply_backoff(Duration::from_secs(60), false);
        assert_eq!(rate, 0.5);
    }

    #[test]
    fn every_batch_is_served_within_a_full_rotation() {
        // Starvation freedom: over B periods, every batch leads once.
        let batches = 4u32;
        let contacts: Vec<ContactEntry> =
            (0..8).map(|i| contact(i, ((i % 3) + 1) as u8, i % batches)).collect();
        let quota = Quota::new(51, day());
        let cfg = SchedulerConfig::default();
        let mut initiated = vec![0u32; batches as usize];
        for period in 0..batches as u64 {
            let list = build_active_list(&contacts, &quota, SimTime::from_days(period), &cfg);
            let head = contacts.iter().find(|c| c.peer == list[0]).unwrap();
            initiated[head.batch as usize] += 1;
        }
        assert!(initiated.iter().all(|&n| n >= 1), "{initiated:?}");
    }

    #[test]
    fn mean_initiations_are_nondecreasing_in_priority() {
        // Each batch holds one contact of every priority, so batch rotation
        // is controlled for and only priority should separate the means.
        let batches = 2u32;
        let contacts: Vec<ContactEntry> = (0..20)
            .map(|i| contact(i, (i % 10 + 1) as u8, i / 10))
            .collect();
        let quota = Quota::new(3 * 51, day());
        let cfg = SchedulerConfig::default();
        let mut counts = vec![0u32; contacts.len()];
        for period in 0..(100 * batches as u64) {
            for peer in build_active_list(&contacts, &quota, SimTime::from_days(period), &cfg) {
                let ix = contacts.iter().position(|c| c.peer == peer).unwrap();
                counts[ix] += 1;
            }
        }
        let mut by_priority = [(0.0f64, 0.0f64); 10];
        for (c, n) in contacts.iter().zip(&counts) {
            let slot = &mut by_priority[(c.priority - 1) as usize];
            slot.0 += *n as f64;
            slot.1 += 1.0;
        }
        let mut prev = 0.0;
        for (sum, cnt) in by_priority {
            let mean = sum / cnt;
            assert!(mean + 1e-9 >= prev, "mean {mean} after {prev}");
            prev = mean;
        }
    }

    #[test]
    fn boost_cap_cycles_downward() {
        let cfg = SchedulerConfig::default();
        assert_eq!(trusted_boost_cap(SimTime::ZERO, &cfg), 10);
        assert_eq!(trusted_boost_cap(SimTime::from_days(1), &cfg), 9);
        assert_eq!(trusted_boost_cap(SimTime::from_days(9), &cfg), 1);
        assert_eq!(trusted_boost_cap(SimTime::from_days(10), &cfg), 10);
        assert!(trusted_boost_eligible(1, SimTime::from_days(9), &cfg));
        assert!(!trusted_boost_eligible(2, SimTime::from_days(9), &cfg));
    }

    #[test]
    fn empty_contacts_give_empty_list() {
        let quota = Quota::new(100, day());
        let cfg = SchedulerConfig::default();
        assert!(build_active_list(&[], &quota, SimTime::ZERO, &cfg).is_empty());
    }

    #[test]
    fn suggested_priority_tracks_frequency() {
        assert_eq!(suggested_priority(0.0), 1);
        assert_eq!(suggested_priority(24.0), 10);
        assert!(suggested_priority(12.0) > suggested_priority(2.0));
    }
}
