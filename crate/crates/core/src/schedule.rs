//! Recurrence rules and their next firing instants in a local time zone.

use chrono::{DateTime, Datelike, Duration, LocalResult, NaiveDate, NaiveDateTime, NaiveTime, TimeZone, Timelike, Utc, Weekday};
use chrono_tz::Tz;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::time::Timestamp;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid recurrence: {0}")]
    Invalid(String),
}

/// Wall-clock time of day with minute resolution, written `HH:MM`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LocalTime(pub NaiveTime);

impl LocalTime {
    pub fn hm(hour: u32, minute: u32) -> Self {
        LocalTime(NaiveTime::from_hms_opt(hour, minute, 0).expect("valid time of day"))
    }

    pub fn parse(s: &str) -> Result<Self, ScheduleError> {
        NaiveTime::parse_from_str(s, "%H:%M")
            .map(LocalTime)
            .map_err(|_| ScheduleError::Invalid(format!("time {s:?} is not HH:MM in 00:00-23:59")))
    }
}

impl Serialize for LocalTime {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0.format("%H:%M").to_string())
    }
}

impl<'de> Deserialize<'de> for LocalTime {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        LocalTime::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeeklySlot {
    pub weekday: Weekday,
    pub time: LocalTime,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Recurrence {
    /// Every `period_s` seconds from `anchor`, which is truncated to the
    /// start of its local hour.
    Every {
        period_s: u64,
        #[serde(default)]
        anchor: Option<Timestamp>,
    },
    DailyAt {
        times: Vec<LocalTime>,
        #[serde(default)]
        weekdays_only: bool,
    },
    WeeklyAt {
        slots: Vec<WeeklySlot>,
    },
    OnceAt {
        at: Timestamp,
    },
}

impl Recurrence {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        match self {
            Recurrence::Every { period_s: 0, .. } => Err(ScheduleError::Invalid("period must be positive".into())),
            Recurrence::DailyAt { times, .. } if times.is_empty() => {
                Err(ScheduleError::Invalid("daily_at needs at least one time".into()))
            }
            Recurrence::WeeklyAt { slots } if slots.is_empty() => {
                Err(ScheduleError::Invalid("weekly_at needs at least one slot".into()))
            }
            _ => Ok(()),
        }
    }
}

pub fn parse_tz(name: &str) -> Result<Tz, ScheduleError> {
    name.parse::<Tz>()
        .map_err(|_| ScheduleError::Config(format!("unknown time zone {name:?}")))
}

/// The instant a local date and time denotes. A time repeated by a
/// backwards clock change resolves to its first occurrence; a time skipped
/// by a forwards change resolves to the first valid instant after it.
pub fn resolve_local(tz: &Tz, local: NaiveDateTime) -> Timestamp {
    match tz.from_local_datetime(&local) {
        LocalResult::Single(t) => t.with_timezone(&Utc),
        LocalResult::Ambiguous(a, b) => a.min(b).with_timezone(&Utc),
        LocalResult::None => {
            // gaps are whole minutes wide; walk to the first valid minute
            let mut probe = local.with_second(0).unwrap();
            loop {
                probe += Duration::minutes(1);
                if let Some(t) = tz.from_local_datetime(&probe).earliest() {
                    return t.with_timezone(&Utc);
                }
            }
        }
    }
}

fn is_weekend(d: NaiveDate) -> bool {
    matches!(d.weekday(), Weekday::Sat | Weekday::Sun)
}

fn truncate_to_local_hour(tz: &Tz, t: Timestamp) -> Timestamp {
    let local = t.with_timezone(tz);
    let floor = local.with_minute(0).and_then(|l| l.with_second(0)).and_then(|l| l.with_nanosecond(0));
    floor.map(|l| l.with_timezone(&Utc)).unwrap_or(t)
}

/// Smallest firing instant strictly after `after`, or `None` if the rule
/// never fires again.
pub fn next_fire_time(rec: &Recurrence, after: Timestamp, timezone: &str) -> Result<Option<Timestamp>, ScheduleError> {
    let tz = parse_tz(timezone)?;
    rec.validate()?;
    Ok(next_fire_in(rec, after, &tz))
}

pub fn next_fire_in(rec: &Recurrence, after: Timestamp, tz: &Tz) -> Option<Timestamp> {
    match rec {
        Recurrence::OnceAt { at } => (*at > after).then_some(*at),
        Recurrence::Every { period_s, anchor } => {
            let anchor = truncate_to_local_hour(tz, anchor.unwrap_or(after));
            if anchor > after {
                return Some(anchor);
            }
            let period = *period_s as i64;
            let elapsed = (after - anchor).num_seconds();
            let k = elapsed.div_euclid(period) + 1;
            Some(anchor + Duration::seconds(k * period))
        }
        Recurrence::DailyAt { times, weekdays_only } => {
            let start = after.with_timezone(tz).date_naive() - Duration::days(1);
            (0..10)
                .map(|d| start + Duration::days(d))
                .filter(|d| !(*weekdays_only && is_weekend(*d)))
                .flat_map(|d| times.iter().map(move |t| d.and_time(t.0)))
                .map(|l| resolve_local(tz, l))
                .filter(|t| *t > after)
                .min()
        }
        Recurrence::WeeklyAt { slots } => {
            let start = after.with_timezone(tz).date_naive() - Duration::days(1);
            (0..9)
                .map(|d| start + Duration::days(d))
                .flat_map(|d| {
                    slots
                        .iter()
                        .filter(move |s| s.weekday == d.weekday())
                        .map(move |s| d.and_time(s.time.0))
                })
                .map(|l| resolve_local(tz, l))
                .filter(|t| *t > after)
                .min()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub id: String,
    pub mission: String,
    pub recurrence: Recurrence,
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default)]
    pub reorder_before_run: bool,
}

fn yes() -> bool {
    true
}

impl Schedule {
    pub fn new(id: &str, mission: &str, recurrence: Recurrence) -> Self {
        Self {
            id: id.into(),
            mission: mission.into(),
            recurrence,
            enabled: true,
            reorder_before_run: false,
        }
    }
}

/// Helper for tests and replays: every firing in `(from, until]`.
pub fn firings_between(rec: &Recurrence, from: Timestamp, until: Timestamp, tz: &Tz) -> Vec<Timestamp> {
    let mut out = Vec::new();
    let mut t = from;
    while let Some(next) = next_fire_in(rec, t, tz) {
        if next > until {
            break;
        }
        out.push(next);
        t = next;
    }
    out
}

pub fn utc(y: i32, mo: u32, d: u32, h: u32, mi: u32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(y, mo, d, h, mi, 0).unwrap()
}
