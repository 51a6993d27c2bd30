//! Simulation time and planar geometry primitives.

use core::fmt;
use core::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Serialize};

/// Milliseconds since the start of the simulation.
///
/// All event ordering and signed payloads use this clock; wall time never
/// enters the core.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
pub struct SimTime(pub u64);

pub const MILLIS_PER_SEC: u64 = 1_000;
pub const SECS_PER_HOUR: u64 = 3_600;
pub const SECS_PER_DAY: u64 = 86_400;

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_secs(s: u64) -> Self {
        SimTime(s * MILLIS_PER_SEC)
    }

    pub fn from_hours(h: u64) -> Self {
        SimTime::from_secs(h * SECS_PER_HOUR)
    }

    pub fn from_days(d: u64) -> Self {
        SimTime::from_secs(d * SECS_PER_DAY)
    }

    pub fn as_millis(&self) -> u64 {
        self.0
    }

    pub fn as_secs(&self) -> u64 {
        self.0 / MILLIS_PER_SEC
    }

    pub fn as_secs_f64(&self) -> f64 {
        self.0 as f64 / MILLIS_PER_SEC as f64
    }

    pub fn as_hours_f64(&self) -> f64 {
        self.0 as f64 / (MILLIS_PER_SEC * SECS_PER_HOUR) as f64
    }

    /// Index of the day this instant falls into.
    pub fn day_index(&self) -> u64 {
        self.0 / (SECS_PER_DAY * MILLIS_PER_SEC)
    }

    /// Seconds elapsed since the most recent midnight.
    pub fn second_of_day(&self) -> u64 {
        self.as_secs() % SECS_PER_DAY
    }

    pub fn saturating_sub(&self, other: SimTime) -> Duration {
        Duration(self.0.saturating_sub(other.0))
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.0)
    }
}

/// A span of simulation time, in milliseconds.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
pub struct Duration(pub u64);

impl Duration {
    pub const ZERO: Duration = Duration(0);

    pub fn from_millis(ms: u64) -> Self {
        Duration(ms)
    }

    pub fn from_secs(s: u64) -> Self {
        Duration(s * MILLIS_PER_SEC)
    }

    pub fn from_hours(h: u64) -> Self {
        Duration::from_secs(h * SECS_PER_HOUR)
    }

    pub fn as_millis(&self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(&self) -> f64 {
        self.0 as f64 / MILLIS_PER_SEC as f64
    }

    pub fn mul_f64(&self, k: f64) -> Duration {
        Duration((self.0 as f64 * k) as u64)
    }
}

impl Add<Duration> for SimTime {
    type Output = SimTime;
    fn add(self, rhs: Duration) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl AddAssign<Duration> for SimTime {
    fn add_assign(&mut self, rhs: Duration) {
        self.0 += rhs.0;
    }
}

impl Sub<SimTime> for SimTime {
    type Output = Duration;
    fn sub(self, rhs: SimTime) -> Duration {
        Duration(self.0 - rhs.0)
    }
}

impl Add<Duration> for Duration {
    type Output = Duration;
    fn add(self, rhs: Duration) -> Duration {
        Duration(self.0 + rhs.0)
    }
}

/// A point on the simulation grid, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        libm::sqrt(dx * dx + dy * dy)
    }
}
