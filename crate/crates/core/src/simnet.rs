//! Deterministic event queue, channel table and message transport.
//!
//! Events fire in `(time, sequence)` order; the sequence number is a
//! monotone tiebreaker assigned at push, so two runs that push the same
//! events in the same order process them identically. Transport resolves
//! every send into exactly one outcome: delivered after the channel delay,
//! intercepted by the interference field, or failed on channel
//! constraints.

use alloc::collections::BinaryHeap;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::units::{Duration, Position, SimTime};
use crate::world::AdversaryField;

/// SMS payload limit per segment, in characters.
pub const SMS_SEGMENT_CHARS: usize = 160;

/// Segments needed for `len` encoded characters.
pub fn sms_segments(len: usize) -> u32 {
    (len.div_ceil(SMS_SEGMENT_CHARS)).max(1) as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ChannelKind {
    Sms,
    Data,
    Bluetooth,
    Nfc,
}

/// Per-channel transport behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub base_delay: Duration,
    /// Delay scales with SMS segment count.
    pub per_segment: bool,
    pub proximity_required: bool,
    pub proximity_radius_m: f64,
}

/// Delay and proximity table for the four channel kinds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelTable {
    pub sms: ChannelSpec,
    pub data: ChannelSpec,
    pub bluetooth: ChannelSpec,
    pub nfc: ChannelSpec,
}

impl Default for ChannelTable {
    fn default() -> Self {
        ChannelTable {
            // 7.4 s per 160-character segment, linear in segments.
            sms: ChannelSpec {
                base_delay: Duration::from_millis(7_400),
                per_segment: true,
                proximity_required: false,
                proximity_radius_m: f64::INFINITY,
            },
            data: ChannelSpec {
                base_delay: Duration::from_millis(500),
                per_segment: false,
                proximity_required: false,
                proximity_radius_m: f64::INFINITY,
            },
            bluetooth: ChannelSpec {
                base_delay: Duration::from_millis(500),
                per_segment: false,
                proximity_required: true,
                proximity_radius_m: 30.0,
            },
            nfc: ChannelSpec {
                base_delay: Duration::from_millis(300),
                per_segment: false,
                proximity_required: true,
                proximity_radius_m: 0.3,
            },
        }
    }
}

impl ChannelTable {
    pub fn spec(&self, kind: ChannelKind) -> &ChannelSpec {
        match kind {
            ChannelKind::Sms => &self.sms,
            ChannelKind::Data => &self.data,
            ChannelKind::Bluetooth => &self.bluetooth,
            ChannelKind::Nfc => &self.nfc,
        }
    }

    /// Transit time for a message of `segments` SMS segments on `kind`.
    pub fn delay(&self, kind: ChannelKind, segments: u32) -> Duration {
        let spec = self.spec(kind);
        if spec.per_segment {
            Duration::from_millis(spec.base_delay.as_millis() * segments.max(1) as u64)
        } else {
            spec.base_delay
        }
    }
}

/// What the interference field does with an intercepted message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdversaryMode {
    /// Intercepted messages vanish.
    Jam,
    /// Intercepted messages vanish and a copy is surfaced to the
    /// adversary's transcript.
    Observe,
}

/// The one-of-three resolution of a send.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SendOutcome {
    /// Deliver at the given instant.
    Deliver { at: SimTime },
    /// Claimed by the interference field (at the sender or recipient hop).
    Intercepted { observed: bool },
    /// Channel constraint failed; reported to the caller immediately.
    Failed { reason: SendFailure },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SendFailure {
    /// Proximity channel without proximity.
    OutOfRange,
}

/// Transport configuration and interception policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transport {
    pub channels: ChannelTable,
    pub adversary: AdversaryField,
    pub mode: AdversaryMode,
    /// Interception is checked at the recipient's last hop; optionally at
    /// the sender's as well.
    pub sender_side_interception: bool,
    /// Baseline loss probability with no adversary involved; zero by
    /// default.
    pub ambient_loss: f64,
}

impl Transport {
    pub fn new(adversary: AdversaryField) -> Self {
        Transport {
            channels: ChannelTable::default(),
            adversary,
            mode: AdversaryMode::Jam,
            sender_side_interception: false,
            ambient_loss: 0.0,
        }
    }

    /// Resolves one send. Node ids key the coherent interference draws;
    /// `segments` sizes the SMS delay.
    pub fn send(
        &self,
        seed: u64,
        kind: ChannelKind,
        segments: u32,
        sender: (u64, &Position),
        recipient: (u64, &Position),
        now: SimTime,
        rng: &mut crate::rng::SimRng,
    ) -> SendOutcome {
        let spec = self.channels.spec(kind);
        if spec.proximity_required && sender.1.distance(recipient.1) > spec.proximity_radius_m {
            return SendOutcome::Failed { reason: SendFailure::OutOfRange };
        }
        if self.ambient_loss > 0.0 && rng.bernoulli(self.ambient_loss) {
            return SendOutcome::Intercepted { observed: false };
        }
        // Interference is a wireless last-hop phenomenon on the carrier
        // channels; proximity channels are out of its reach.
        let delivery = now + self.channels.delay(kind, segments);
        if matches!(kind, ChannelKind::Sms | ChannelKind::Data) {
            let sender_hit = self.sender_side_interception
                && self.adversary.intercepted(seed, sender.0, sender.1, now);
            let recipient_hit =
                self.adversary.intercepted(seed, recipient.0, recipient.1, delivery);
            if sender_hit || recipient_hit {
                return SendOutcome::Intercepted { observed: self.mode == AdversaryMode::Observe };
            }
        }
        SendOutcome::Deliver { at: delivery }
    }
}

/// Priority queue entry ordered by `(fire_at, seq)`.
#[derive(Debug)]
struct Entry<P> {
    fire_at: SimTime,
    seq: u64,
    payload: P,
}

impl<P> PartialEq for Entry<P> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}
impl<P> Eq for Entry<P> {}
impl<P> PartialOrd for Entry<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<P> Ord for Entry<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap, we want earliest first.
        (other.fire_at, other.seq).cmp(&(self.fire_at, self.seq))
    }
}

/// Deterministic discrete-event queue.
#[derive(Debug)]
pub struct EventQueue<P> {
    heap: BinaryHeap<Entry<P>>,
    next_seq: u64,
    now: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QueueError {
    #[error("event scheduled before the current time")]
    CausalityViolation,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        EventQueue { heap: BinaryHeap::new(), next_seq: 0, now: SimTime::ZERO }
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        EventQueue::default()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn push(&mut self, fire_at: SimTime, payload: P) -> Result<(), QueueError> {
        if fire_at < self.now {
            return Err(QueueError::CausalityViolation);
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry { fire_at, seq, payload });
        Ok(())
    }

    /// Pops the next event at or before `t_end`, advancing the clock.
    pub fn pop_until(&mut self, t_end: SimTime) -> Option<(SimTime, P)> {
        match self.heap.peek() {
            Some(e) if e.fire_at <= t_end => {
                let e = self.heap.pop().expect("peeked");
                self.now = e.fire_at;
                Some((e.fire_at, e.payload))
            }
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use crate::world::FbtsSite;
    use alloc::vec;
    use alloc::vec::Vec;

    #[test]
    fn events_fire_in_time_then_seq_order() {
        let mut q = EventQueue::new();
        q.push(SimTime::from_secs(5), "b").unwrap();
        q.push(SimTime::from_secs(1), "a").unwrap();
        q.push(SimTime::from_secs(5), "c").unwrap();
        let mut out = Vec::new();
        while let Some((_, p)) = q.pop_until(SimTime::from_secs(100)) {
            out.push(p);
        }
        assert_eq!(out, vec!["a", "b", "c"]);
    }

    #[test]
    fn past_events_are_rejected() {
        let mut q = EventQueue::new();
        q.push(SimTime::from_secs(10), ()).unwrap();
        q.pop_until(SimTime::from_secs(100));
        assert_eq!(q.push(SimTime::from_secs(5), ()), Err(QueueError::CausalityViolation));
    }

    #[test]
    fn pop_until_respects_horizon() {
        let mut q = EventQueue::new();
        q.push(SimTime::from_secs(10), ()).unwrap();
        assert!(q.pop_until(SimTime::from_secs(9)).is_none());
        assert!(q.pop_until(SimTime::from_secs(10)).is_some());
    }

    #[test]
    fn sms_delay_scales_with_segments() {
        let t = ChannelTable::default();
        assert_eq!(t.delay(ChannelKind::Sms, 1), Duration::from_millis(7_400));
        assert_eq!(t.delay(ChannelKind::Sms, 3), Duration::from_millis(22_200));
        assert_eq!(t.delay(ChannelKind::Data, 3), Duration::from_millis(500));
    }

    #[test]
    fn segment_count_rounds_up() {
        assert_eq!(sms_segments(1), 1);
        assert_eq!(sms_segments(160), 1);
        assert_eq!(sms_segments(161), 2);
        assert_eq!(sms_segments(480), 3);
    }

    #[test]
    fn clean_network_delivers_everything() {
        let transport = Transport::new(AdversaryField::empty());
        let mut rng = SimRng::derive(1, "net", 0);
        let a = Position::new(0.0, 0.0);
        let b = Position::new(50_000.0, 50_000.0);
        for i in 0..1_000u64 {
            let now = SimTime::from_secs(i * 60);
            match transport.send(7, ChannelKind::Sms, 2, (0, &a), (1, &b), now, &mut rng) {
                SendOutcome::Deliver { at } => assert!(at > now),
                other => panic!("lost message: {other:?}"),
            }
        }
    }

    #[test]
    fn jamming_site_blocks_all_delivery() {
        let grid = crate::world::GridConfig::default();
        let field = AdversaryField::new(
            vec![FbtsSite {
                position: Position::new(10_000.0, 10_000.0),
                radius_m: 5_000.0,
                p_intercept: 1.0,
                always_on: true,
            }],
            1,
            &grid,
        )
        .unwrap();
        let transport = Transport::new(field);
        let mut rng = SimRng::derive(2, "net", 0);
        let sender = Position::new(90_000.0, 90_000.0);
        let victim = Position::new(10_000.0, 10_000.0);
        for i in 0..200u64 {
            let now = SimTime::from_secs(i * 700);
            let out = transport.send(7, ChannelKind::Sms, 1, (0, &sender), (1, &victim), now, &mut rng);
            assert!(matches!(out, SendOutcome::Intercepted { .. }), "{out:?}");
        }
    }

    #[test]
    fn delivery_rate_tracks_interception_probability() {
        let grid = crate::world::GridConfig::default();
        let field = AdversaryField::new(
            vec![FbtsSite {
                position: Position::new(10_000.0, 10_000.0),
                radius_m: 5_000.0,
                p_intercept: 0.28,
                always_on: true,
            }],
            1,
            &grid,
        )
        .unwrap();
        let transport = Transport::new(field);
        let mut rng = SimRng::derive(3, "net", 0);
        let sender = Position::new(90_000.0, 90_000.0);
        let victim = Position::new(10_000.0, 10_000.0);
        let n = 100_000u64;
        let mut delivered = 0u64;
        for i in 0..n {
            // One send per coherence window keeps the draws independent.
            let now = SimTime::from_secs(i * 600);
            match transport.send(11, ChannelKind::Sms, 1, (0, &sender), (1, &victim), now, &mut rng) {
                SendOutcome::Deliver { .. } => delivered += 1,
                SendOutcome::Intercepted { .. } => {}
                SendOutcome::Failed { .. } => panic!("unexpected failure"),
            }
        }
        let rate = delivered as f64 / n as f64;
        assert!((rate - 0.72).abs() < 0.01, "delivery rate {rate}");
    }

    #[test]
    fn proximity_channels_enforce_range() {
        let transport = Transport::new(AdversaryField::empty());
        let mut rng = SimRng::derive(4, "net", 0);
        let a = Position::new(0.0, 0.0);
        let near = Position::new(10.0, 0.0);
        let far = Position::new(100.0, 0.0);
        assert!(matches!(
            transport.send(7, ChannelKind::Bluetooth, 1, (0, &a), (1, &near), SimTime::ZERO, &mut rng),
            SendOutcome::Deliver { .. }
        ));
        assert_eq!(
            transport.send(7, ChannelKind::Bluetooth, 1, (0, &a), (1, &far), SimTime::ZERO, &mut rng),
            SendOutcome::Failed { reason: SendFailure::OutOfRange }
        );
    }
}
