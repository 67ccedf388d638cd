use std::sync::{Arc, Mutex};
use std::time::{Duration as StdDuration, Instant};

use chrono::{DateTime, Duration, Utc};

pub type Timestamp = DateTime<Utc>;

pub fn seconds(s: f64) -> Duration {
    Duration::nanoseconds((s * 1e9).round() as i64)
}

pub fn as_seconds(d: Duration) -> f64 {
    d.num_nanoseconds().map(|n| n as f64 * 1e-9).unwrap_or(d.num_milliseconds() as f64 * 1e-3)
}

pub fn as_hours(d: Duration) -> f64 {
    as_seconds(d) / 3600.0
}

pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
    /// Block until `t`. Returns immediately if `t` is not in the future.
    fn sleep_until(&self, t: Timestamp);
    /// Real time left before `t` is reached, or `None` when the clock
    /// jumps instantly.
    fn wall_until(&self, t: Timestamp) -> Option<StdDuration>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct WallClock;

impl Clock for WallClock {
    fn now(&self) -> Timestamp {
        Utc::now()
    }

    fn sleep_until(&self, t: Timestamp) {
        if let Some(d) = self.wall_until(t) {
            std::thread::sleep(d);
        }
    }

    fn wall_until(&self, t: Timestamp) -> Option<StdDuration> {
        Some((t - Utc::now()).to_std().unwrap_or_default())
    }
}

struct SimInner {
    now: Timestamp,
    anchor: Option<(Instant, Timestamp)>,
}

/// Simulated time. With no rate the clock only moves when told to and jumps
/// straight to every requested instant. With a rate it also flows on its own
/// at `rate` simulated seconds per real second.
#[derive(Clone)]
pub struct SimClock {
    inner: Arc<Mutex<SimInner>>,
    rate: Option<f64>,
}

impl SimClock {
    pub fn new(start: Timestamp) -> Self {
        Self {
            inner: Arc::new(Mutex::new(SimInner { now: start, anchor: None })),
            rate: None,
        }
    }

    pub fn paced(start: Timestamp, rate: f64) -> Self {
        assert!(rate > 0.0 && rate.is_finite(), "rate must be positive");
        Self {
            inner: Arc::new(Mutex::new(SimInner {
                now: start,
                anchor: Some((Instant::now(), start)),
            })),
            rate: Some(rate),
        }
    }

    pub fn rate(&self) -> Option<f64> {
        self.rate
    }

    /// Move time forward without pacing. Never moves backwards. A paced
    /// clock keeps flowing from the new instant.
    pub fn advance_to(&self, t: Timestamp) {
        let current = self.now();
        if t <= current {
            return;
        }
        let mut inner = self.inner.lock().unwrap();
        inner.now = t;
        if inner.anchor.is_some() {
            inner.anchor = Some((Instant::now(), t));
        }
    }

    pub fn advance(&self, d: Duration) {
        let t = self.now() + d;
        self.advance_to(t);
    }
}

impl Clock for SimClock {
    fn now(&self) -> Timestamp {
        let inner = self.inner.lock().unwrap();
        match (inner.anchor, self.rate) {
            (Some((wall0, sim0)), Some(rate)) => {
                let flowed = sim0 + seconds(wall0.elapsed().as_secs_f64() * rate);
                inner.now.max(flowed)
            }
            _ => inner.now,
        }
    }

    fn sleep_until(&self, t: Timestamp) {
        if let Some(d) = self.wall_until(t) {
            if !d.is_zero() {
                std::thread::sleep(d);
            }
        }
        self.advance_to(t);
    }

    fn wall_until(&self, t: Timestamp) -> Option<StdDuration> {
        let rate = self.rate?;
        let inner = self.inner.lock().unwrap();
        let (wall0, sim0) = inner.anchor?;
        let offset = as_seconds(t - sim0) / rate;
        let deadline = wall0 + StdDuration::from_secs_f64(offset.max(0.0));
        Some(deadline.saturating_duration_since(Instant::now()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    #[test]
    fn sim_clock_jumps_and_never_regresses() {
        let t0 = Utc.with_ymd_and_hms(2023, 7, 18, 0, 0, 0).unwrap();
        let c = SimClock::new(t0);
        c.sleep_until(t0 + Duration::days(49));
        assert_eq!(c.now(), t0 + Duration::days(49));
        c.sleep_until(t0);
        assert_eq!(c.now(), t0 + Duration::days(49));
        assert!(c.wall_until(t0 + Duration::days(50)).is_none());
    }

    #[test]
    fn paced_clock_sleeps_proportionally() {
        let t0 = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
        let c = SimClock::paced(t0, 1000.0);
        let start = Instant::now();
        c.sleep_until(t0 + Duration::seconds(50));
        let wall = start.elapsed().as_secs_f64();
        assert!(wall >= 0.045, "slept {wall}");
        assert!(c.now() >= t0 + Duration::seconds(50));
        std::thread::sleep(StdDuration::from_millis(20));
        assert!(c.now() >= t0 + Duration::seconds(60), "paced clock flows on its own");
    }

    #[test]
    fn second_conversions() {
        assert_eq!(seconds(1.5), Duration::milliseconds(1500));
        assert_eq!(as_seconds(Duration::milliseconds(250)), 0.25);
        assert_eq!(as_hours(Duration::days(35)), 840.0);
    }
}
