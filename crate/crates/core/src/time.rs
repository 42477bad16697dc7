//! Clocks and turn-relative timestamps.
//!
//! All protocol timestamps are offsets from the start of a turn, held as
//! [`Duration`] so virtual-time arithmetic is exact to the nanosecond. On the
//! wire they are written as fractional seconds.

use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

/// Converts fractional seconds to a nanosecond-rounded [`Duration`].
///
/// Negative and non-finite inputs clamp to zero.
pub fn secs(s: f64) -> Duration {
    if !s.is_finite() || s <= 0.0 {
        return Duration::ZERO;
    }
    Duration::from_nanos((s * 1e9).round() as u64)
}

pub fn as_secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// A monotone time source.
pub trait Clock: Send + Sync {
    fn now(&self) -> Duration;

    /// Blocks (or, for virtual clocks, jumps) until `now() >= t`.
    fn sleep_until(&self, t: Duration);

    /// Virtual clocks never block; waiting means advancing time.
    fn is_virtual(&self) -> bool;
}

/// Deterministic clock that only moves when someone sleeps on it.
#[derive(Debug, Default, Clone)]
pub struct VirtualClock {
    now: Arc<Mutex<Duration>>,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn starting_at(t: Duration) -> Self {
        Self {
            now: Arc::new(Mutex::new(t)),
        }
    }

    pub fn advance(&self, by: Duration) {
        *self.now.lock().unwrap() += by;
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Duration {
        *self.now.lock().unwrap()
    }

    fn sleep_until(&self, t: Duration) {
        let mut now = self.now.lock().unwrap();
        if t > *now {
            *now = t;
        }
    }

    fn is_virtual(&self) -> bool {
        true
    }
}

/// Wall clock measured from its construction.
#[derive(Debug, Clone)]
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep_until(&self, t: Duration) {
        let now = self.now();
        if t > now {
            std::thread::sleep(t - now);
        }
    }

    fn is_virtual(&self) -> bool {
        false
    }
}

/// View of a shared clock re-based so that the turn starts at zero.
#[derive(Clone)]
pub struct TurnClock {
    inner: Arc<dyn Clock>,
    origin: Duration,
}

impl TurnClock {
    pub fn start(inner: Arc<dyn Clock>) -> Self {
        let origin = inner.now();
        Self { inner, origin }
    }
}

impl Clock for TurnClock {
    fn now(&self) -> Duration {
        self.inner.now().saturating_sub(self.origin)
    }

    fn sleep_until(&self, t: Duration) {
        self.inner.sleep_until(self.origin + t)
    }

    fn is_virtual(&self) -> bool {
        self.inner.is_virtual()
    }
}

/// Serde adapter writing a [`Duration`] as fractional seconds.
pub mod serde_secs {
    use super::*;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(as_secs(*d))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        if !v.is_finite() || v < 0.0 {
            return Err(serde::de::Error::custom(format!(
                "timestamp must be a non-negative number of seconds, got {v}"
            )));
        }
        Ok(secs(v))
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(d: &Option<Duration>, s: S) -> Result<S::Ok, S::Error> {
            match d {
                Some(d) => s.serialize_some(&as_secs(*d)),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Duration>, D::Error> {
            let v = Option::<f64>::deserialize(d)?;
            match v {
                None => Ok(None),
                Some(v) if v.is_finite() && v >= 0.0 => Ok(Some(secs(v))),
                Some(v) => Err(serde::de::Error::custom(format!(
                    "timestamp must be a non-negative number of seconds, got {v}"
                ))),
            }
        }
    }
}
