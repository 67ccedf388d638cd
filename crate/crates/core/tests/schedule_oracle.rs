mod support;

use chrono::{Duration, TimeZone, Utc, Weekday};
use chrono_tz::Tz;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ronda_core::schedule::{firings_between, utc};
use ronda_core::{next_fire_time, LocalTime, Recurrence, ScheduleError, Timestamp, WeeklySlot};
use support::oracles::{minute_scan, minute_scan_every};

const ZONES: [&str; 6] = [
    "Europe/London",
    "America/New_York",
    "Australia/Lord_Howe",
    "Asia/Kolkata",
    "America/Santiago",
    "UTC",
];

const WEEKDAYS: [Weekday; 7] = [
    Weekday::Mon,
    Weekday::Tue,
    Weekday::Wed,
    Weekday::Thu,
    Weekday::Fri,
    Weekday::Sat,
    Weekday::Sun,
];

fn random_time(rng: &mut impl Rng) -> LocalTime {
    // bias towards the small hours, where clock changes happen
    let hour = if rng.gen_bool(0.5) { rng.gen_range(0..4) } else { rng.gen_range(0..24) };
    LocalTime::hm(hour, rng.gen_range(0..60))
}

fn random_rule(rng: &mut impl Rng) -> Recurrence {
    if rng.gen_bool(0.5) {
        Recurrence::DailyAt {
            times: (0..rng.gen_range(1..4)).map(|_| random_time(rng)).collect(),
            weekdays_only: rng.gen_bool(0.3),
        }
    } else {
        Recurrence::WeeklyAt {
            slots: (0..rng.gen_range(1..4))
                .map(|_| WeeklySlot {
                    weekday: WEEKDAYS[rng.gen_range(0..7)],
                    time: random_time(rng),
                })
                .collect(),
        }
    }
}

/// 60-day windows that straddle the 2024 clock changes of each zone.
fn windows() -> Vec<Timestamp> {
    vec![utc(2024, 3, 1, 0, 0), utc(2024, 9, 15, 0, 0), utc(2024, 10, 10, 0, 0)]
}

#[test]
fn calendar_rules_match_minute_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut checked = 0;
    for zone in ZONES {
        let tz: Tz = zone.parse().unwrap();
        for from in windows() {
            let until = from + Duration::days(60);
            for _ in 0..3 {
                let rule = random_rule(&mut rng);
                let got = firings_between(&rule, from, until, &tz);
                let want = minute_scan(&rule, from, until, &tz);
                assert_eq!(got, want, "{zone} {rule:?}");
                assert!(got.windows(2).all(|w| w[0] < w[1]));
                checked += got.len();
            }
        }
    }
    assert!(checked > 1000, "{checked}");
}

#[test]
fn every_rule_matches_minute_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for zone in ZONES {
        let tz: Tz = zone.parse().unwrap();
        for from in windows() {
            let until = from + Duration::days(60);
            let period = 60 * rng.gen_range(7..600u64);
            let anchor = from + Duration::seconds(rng.gen_range(-86_400..86_400));
            let rule = Recurrence::Every {
                period_s: period,
                anchor: Some(anchor),
            };
            let got = firings_between(&rule, from, until, &tz);
            assert_eq!(got, minute_scan_every(period, anchor, from, until, &tz), "{zone} {period} {anchor}");
        }
    }
}

#[test]
fn london_spring_gap_and_autumn_repeat() {
    let tz: Tz = "Europe/London".parse().unwrap();
    let rule = Recurrence::DailyAt {
        times: vec![LocalTime::hm(1, 30)],
        weekdays_only: false,
    };
    // 01:30 does not exist on 31 March 2024: runs at 02:00 BST
    let spring = next_fire_time(&rule, utc(2024, 3, 30, 12, 0), "Europe/London").unwrap();
    assert_eq!(spring, Some(utc(2024, 3, 31, 1, 0)));
    // 01:30 happens twice on 27 October 2024: only the first counts
    let autumn = firings_between(&rule, utc(2024, 10, 26, 12, 0), utc(2024, 10, 28, 12, 0), &tz);
    assert_eq!(autumn, vec![utc(2024, 10, 27, 0, 30), utc(2024, 10, 28, 1, 30)]);
}

#[test]
fn weekdays_only_skips_weekends() {
    let tz: Tz = "Europe/London".parse().unwrap();
    let rule = Recurrence::DailyAt {
        times: vec![LocalTime::hm(11, 0), LocalTime::hm(15, 0)],
        weekdays_only: true,
    };
    let fires = firings_between(&rule, utc(2023, 7, 18, 0, 0), utc(2023, 7, 18, 0, 0) + Duration::days(49), &tz);
    assert_eq!(fires.len(), 70);
    assert!(fires.iter().all(|t| {
        let l = t.with_timezone(&tz);
        !matches!(chrono::Datelike::weekday(&l), Weekday::Sat | Weekday::Sun)
    }));
}

#[test]
fn once_and_every_edges() {
    let at = Utc.with_ymd_and_hms(2024, 5, 1, 10, 0, 0).unwrap();
    let once = Recurrence::OnceAt { at };
    assert_eq!(next_fire_time(&once, at - Duration::seconds(1), "UTC").unwrap(), Some(at));
    assert_eq!(next_fire_time(&once, at, "UTC").unwrap(), None);
    let every = Recurrence::Every {
        period_s: 900,
        anchor: Some(utc(2024, 5, 1, 10, 20)),
    };
    // anchor floors to 10:00, so the next quarter after 10:20 is 10:30
    assert_eq!(next_fire_time(&every, utc(2024, 5, 1, 10, 20), "UTC").unwrap(), Some(utc(2024, 5, 1, 10, 30)));
}

#[test]
fn bad_rules_are_rejected() {
    let zero = Recurrence::Every {
        period_s: 0,
        anchor: None,
    };
    assert!(matches!(next_fire_time(&zero, Utc::now(), "UTC"), Err(ScheduleError::Invalid(_))));
    let empty = Recurrence::DailyAt {
        times: vec![],
        weekdays_only: false,
    };
    assert!(next_fire_time(&empty, Utc::now(), "UTC").is_err());
    let ok = Recurrence::OnceAt { at: Utc::now() };
    assert!(matches!(next_fire_time(&ok, Utc::now(), "Mars/Olympus"), Err(ScheduleError::Config(_))));
    assert!(LocalTime::parse("25:00").is_err());
}
