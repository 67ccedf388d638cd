//! Reference site, missions and long-running replays on the simulated robot.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use chrono::{Duration, NaiveDate, TimeZone};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::actions::ActionSpec;
use crate::autonomy::{Core, CoreConfig, NullStore, Persisted};
use crate::command::Command;
use crate::events::{EventBus, EventKind, StateEvent};
use crate::interventions::{compute_mtbi, InterventionCategory, InterventionRecord};
use crate::map::{Node, NodeKind, TopologicalMap, TraversalAction};
use crate::mission::{Mission, MissionOutcome, Task, TaskStatus, Trigger};
use crate::monitor::BatteryMonitor;
use crate::schedule::{parse_tz, resolve_local, LocalTime, Recurrence, Schedule};
use crate::sim::{SimParams, SimRobot, SimWorld};
use crate::time::{as_hours, Timestamp};
use ronda_perception::Pose;

/// A small facility: a corridor loop with two docks and five inspection
/// points. Every link is bidirectional; the plant-room link is a door.
pub fn site_map() -> TopologicalMap {
    let mut m = TopologicalMap::new("map");
    let nodes = [
        ("dock", NodeKind::Dock, 0.0, 0.0),
        ("hall", NodeKind::Waypoint, 2.0, 0.0),
        ("w1", NodeKind::Waypoint, 6.0, 0.0),
        ("w2", NodeKind::Waypoint, 10.0, 0.0),
        ("w3", NodeKind::Waypoint, 10.0, 6.0),
        ("w4", NodeKind::Waypoint, 6.0, 6.0),
        ("w5", NodeKind::Waypoint, 2.0, 6.0),
        ("dock2", NodeKind::Dock, 14.0, 0.0),
        ("ip1", NodeKind::Inspection, 6.0, -2.0),
        ("ip2", NodeKind::Inspection, 12.0, -2.0),
        ("ip3", NodeKind::Inspection, 12.0, 8.0),
        ("ip4", NodeKind::Inspection, 6.0, 8.0),
        ("ip5", NodeKind::Inspection, 0.0, 8.0),
    ];
    for (id, kind, x, y) in nodes {
        m.insert_node(Node::new(id, kind, Vector3::new(x, y, 0.0))).expect("unique ids");
    }
    let links = [
        ("dock", "hall", TraversalAction::Walk),
        ("hall", "w1", TraversalAction::Walk),
        ("w1", "w2", TraversalAction::Walk),
        ("w2", "w3", TraversalAction::Door),
        ("w3", "w4", TraversalAction::Walk),
        ("w4", "w5", TraversalAction::Walk),
        ("w5", "hall", TraversalAction::Walk),
        ("w2", "dock2", TraversalAction::Walk),
        ("w1", "ip1", TraversalAction::Walk),
        ("w2", "ip2", TraversalAction::Walk),
        ("w3", "ip3", TraversalAction::Walk),
        ("w4", "ip4", TraversalAction::Walk),
        ("w5", "ip5", TraversalAction::Walk),
    ];
    for (a, b, action) in links {
        m.insert_edge_pair(&a.into(), &b.into(), action, None).expect("nodes exist");
    }
    m
}

fn inspect(node: &str, camera: &str) -> [Task; 2] {
    let mut image = Task::new(node, ActionSpec::new("capture_image").with_param("camera", json!(camera)));
    image.label = format!("{node} image");
    let mut climate = Task::new(node, ActionSpec::new("read_temp_humidity"));
    climate.label = format!("{node} climate");
    [image, climate]
}

/// Image and climate reading at every inspection point, then back to the
/// main dock.
pub fn inspection_round(id: &str, radiation: bool, dock_at_end: bool) -> Mission {
    let mut tasks = Vec::new();
    for (i, ip) in ["ip1", "ip2", "ip3", "ip4", "ip5"].iter().enumerate() {
        tasks.extend(inspect(ip, if i % 2 == 0 { "ptz" } else { "thermal" }));
        if radiation {
            let mut t = Task::new(ip, ActionSpec::new("record_radiation").with_timeout(90.0));
            t.label = format!("{ip} spectrum");
            tasks.push(t);
        }
    }
    if dock_at_end {
        let mut t = Task::new("dock", ActionSpec::new("dock").with_timeout(60.0));
        t.label = "dock".into();
        tasks.push(t);
    }
    Mission::new(id, id, tasks)
}

pub struct Replay {
    pub name: &'static str,
    pub timezone: &'static str,
    pub first_day: NaiveDate,
    pub days: i64,
    pub weekdays_only: bool,
    pub radiation: bool,
    /// (minor, serious, fatal)
    pub interventions: (usize, usize, usize),
}

pub fn b1() -> Replay {
    Replay {
        name: "b1",
        timezone: "Europe/London",
        first_day: NaiveDate::from_ymd_opt(2023, 7, 18).unwrap(),
        days: 49,
        weekdays_only: true,
        radiation: false,
        interventions: (12, 9, 4),
    }
}

pub fn jet() -> Replay {
    Replay {
        name: "jet",
        timezone: "Europe/London",
        first_day: NaiveDate::from_ymd_opt(2024, 2, 21).unwrap(),
        days: 35,
        weekdays_only: false,
        radiation: true,
        interventions: (10, 1, 5),
    }
}

#[derive(Clone, Debug)]
pub struct ReplayReport {
    pub name: String,
    pub window_start: Timestamp,
    pub window_end: Timestamp,
    pub scheduled_executions: usize,
    pub suppressed_firings: usize,
    pub completed: usize,
    pub actions_succeeded: usize,
    pub actions_total: usize,
    pub distance_km: f64,
    pub active_hours: f64,
    pub interventions: (usize, usize, usize),
    pub mtbi_hours: Option<f64>,
    pub wall_seconds: f64,
}

impl fmt::Display for ReplayReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (minor, serious, fatal) = self.interventions;
        writeln!(f, "replay: {}", self.name)?;
        writeln!(f, "window: {} .. {}", self.window_start, self.window_end)?;
        writeln!(f, "scheduled executions: {}", self.scheduled_executions)?;
        writeln!(f, "suppressed firings: {}", self.suppressed_firings)?;
        writeln!(f, "completed missions: {}", self.completed)?;
        writeln!(f, "actions succeeded: {}/{}", self.actions_succeeded, self.actions_total)?;
        writeln!(f, "distance walked: {:.2} km", self.distance_km)?;
        writeln!(f, "active hours: {:.2}", self.active_hours)?;
        writeln!(f, "interventions: {minor} minor, {serious} serious, {fatal} fatal")?;
        match self.mtbi_hours {
            Some(h) => writeln!(f, "mtbi: {h:.2} h")?,
            None => writeln!(f, "mtbi: none")?,
        }
        write!(f, "wall time: {:.2} s", self.wall_seconds)
    }
}

/// Synthetic intervention log with the given category counts, spread over
/// the window with a seeded generator.
pub fn intervention_log(start: Timestamp, window: Duration, counts: (usize, usize, usize), seed: u64) -> Vec<InterventionRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (minor, serious, fatal) = counts;
    let cats = std::iter::repeat(InterventionCategory::Minor)
        .take(minor)
        .chain(std::iter::repeat(InterventionCategory::Serious).take(serious))
        .chain(std::iter::repeat(InterventionCategory::Fatal).take(fatal));
    let span = window.num_seconds();
    let mut log: Vec<InterventionRecord> = cats
        .map(|category| InterventionRecord {
            timestamp: start + Duration::seconds(rng.gen_range(0..span)),
            category,
            description: format!("{category:?} intervention").to_lowercase(),
            operator: "replay".into(),
        })
        .collect();
    log.sort_by_key(|r| r.timestamp);
    log
}

/// Run the weekday or daily 11:00 and 15:00 schedule over the replay window
/// on the reference site.
pub fn run_replay(replay: &Replay, seed: u64) -> ReplayReport {
    let wall = Instant::now();
    let tz = parse_tz(replay.timezone).expect("known zone");
    let start = resolve_local(&tz, replay.first_day.and_hms_opt(0, 0, 0).unwrap());
    let end = resolve_local(&tz, (replay.first_day + Duration::days(replay.days)).and_hms_opt(0, 0, 0).unwrap());

    let clock = crate::time::SimClock::new(start);
    let map = site_map();
    let dock = map.node(&"dock".into()).unwrap().position;
    let params = SimParams {
        seed,
        ..SimParams::default()
    };
    let mut robot = SimRobot::new(clock.clone(), SimWorld::default(), params, Pose::new(dock, Default::default()));
    robot.place_docked(dock);

    let bus = EventBus::new(usize::MAX);
    let config = CoreConfig {
        timezone: replay.timezone.into(),
        ..CoreConfig::default()
    };
    let persisted = Persisted {
        map: Some(map),
        ..Persisted::default()
    };
    let (mut core, _handle) =
        Core::new(robot, Arc::new(clock), config, Box::new(NullStore), bus.clone(), persisted).expect("valid config");
    core.add_monitor(Box::new(BatteryMonitor::default()));

    let mission = inspection_round("round", replay.radiation, true);
    core.handle(Command::SaveMission { mission }).expect("mission saves");
    let schedule = Schedule::new(
        replay.name,
        "round",
        Recurrence::DailyAt {
            times: vec![LocalTime::hm(11, 0), LocalTime::hm(15, 0)],
            weekdays_only: replay.weekdays_only,
        },
    );
    core.handle(Command::SaveSchedule { schedule }).expect("schedule saves");

    let window = end - start;
    for record in intervention_log(start, window, replay.interventions, seed) {
        core.handle(Command::LogIntervention { record }).expect("logged");
    }

    core.run_until(end);

    let events = bus.since(0);
    let scheduled_executions = events
        .iter()
        .filter(|e| matches!(&e.kind, EventKind::MissionStarted { trigger: Trigger::Schedule { .. }, .. }))
        .count();
    let suppressed_firings = events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::ScheduleSuppressed { .. }))
        .count();
    let records = core.records();
    let completed = records
        .iter()
        .filter(|r| r.outcome == Some(MissionOutcome::Completed))
        .count();
    let inspections = records.iter().flat_map(|r| r.tasks.iter()).filter(|t| t.action != "dock");
    let (mut actions_total, mut actions_succeeded) = (0, 0);
    for t in inspections {
        actions_total += 1;
        if t.status == TaskStatus::Succeeded {
            actions_succeeded += 1;
        }
    }
    let distance_km = records.iter().map(|r| r.distance_walked).sum::<f64>() / 1000.0;
    let active_hours = records
        .iter()
        .filter_map(|r| r.ended.map(|e| as_hours(e - r.started)))
        .sum();
    let log = intervention_log(start, window, replay.interventions, seed);
    ReplayReport {
        name: replay.name.into(),
        window_start: start,
        window_end: end,
        scheduled_executions,
        suppressed_firings,
        completed,
        actions_succeeded,
        actions_total,
        distance_km,
        active_hours,
        interventions: replay.interventions,
        mtbi_hours: compute_mtbi(&log, start, window),
        wall_seconds: wall.elapsed().as_secs_f64(),
    }
}

pub struct SoakRun {
    pub events: Vec<StateEvent>,
    pub map: TopologicalMap,
    pub final_battery: f64,
    pub min_battery: f64,
}

/// Days of two undocked inspection rounds a day with a heavy drain model and
/// the battery monitor active.
pub fn battery_soak(days: i64, seed: u64) -> SoakRun {
    let start = chrono::Utc.with_ymd_and_hms(2024, 5, 6, 0, 0, 0).unwrap();
    let clock = crate::time::SimClock::new(start);
    let map = site_map();
    let hall = map.node(&"hall".into()).unwrap().position;
    let params = SimParams {
        seed,
        drain_per_m: 0.004,
        drain_per_idle_hour: 0.03,
        charge_per_hour: 0.5,
        ..SimParams::default()
    };
    let mut robot = SimRobot::new(clock.clone(), SimWorld::default(), params, Pose::new(hall, Default::default()));
    robot.set_battery(0.6);

    let bus = EventBus::new(usize::MAX);
    let persisted = Persisted {
        map: Some(map.clone()),
        ..Persisted::default()
    };
    let (mut core, _handle) = Core::new(
        robot,
        Arc::new(clock),
        CoreConfig::default(),
        Box::new(NullStore),
        bus.clone(),
        persisted,
    )
    .expect("valid config");
    core.add_monitor(Box::new(BatteryMonitor::default()));
    core.handle(Command::SaveMission {
        mission: inspection_round("round", false, false),
    })
    .expect("mission saves");
    core.handle(Command::SaveSchedule {
        schedule: Schedule::new(
            "twice-daily",
            "round",
            Recurrence::DailyAt {
                times: vec![LocalTime::hm(9, 0), LocalTime::hm(17, 0)],
                weekdays_only: false,
            },
        ),
    })
    .expect("schedule saves");

    core.run_until(start + Duration::days(days));
    let robot = core.adapter();
    let mut min_battery = f64::INFINITY;
    for e in robot.log() {
        if let crate::sim::SimEventKind::Battery { to, .. } = e.kind {
            min_battery = min_battery.min(to);
        }
    }
    let final_battery = crate::nav::RobotAdapter::battery(robot).level;
    SoakRun {
        events: bus.since(0),
        map,
        final_battery,
        min_battery,
    }
}
