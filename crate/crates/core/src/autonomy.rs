//! The autonomy core: one thread that owns the robot, the live map and every
//! stored entity, and processes commands, schedules and monitors in order.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Arc;

use chrono_tz::Tz;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::actions::{ActionRegistration, ActionRegistry, ActionStatus, CancelToken, ExecContext};
use crate::command::{Command, CommandError, CoreHandle, Envelope, ErrorCode, Reply};
use crate::events::{EventBus, EventKind};
use crate::interventions::{compute_mtbi, InterventionRecord};
use crate::localization::Localizer;
use crate::map::{apply_edit, nearest_node, MapError, NodeId, TopologicalMap};
use crate::mission::{
    order_cost, reorder_tsp, travel_costs, FailurePolicy, Mission, MissionError, MissionOutcome, MissionRecord,
    TaskStatus, Trigger,
};
use crate::monitor::{Monitor, MonitorAction, SystemSnapshot};
use crate::nav::{
    compute_policy, navigate_to, plan_path, Checkpoint, NavContext, NavError, NavEvent, NavFailure, RobotAdapter,
};
use crate::schedule::{next_fire_in, parse_tz, Recurrence, Schedule, ScheduleError};
use crate::time::{seconds, Clock, Timestamp};

#[derive(Debug, Error)]
#[error("store: {0}")]
pub struct StoreError(pub String);

/// One line of the append-only mission record log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum RecordEntry {
    Started { record: MissionRecord },
    Finished { record: MissionRecord },
}

/// Durable storage the core writes through. Reads happen once at start-up
/// via [`Persisted`].
pub trait Store: Send {
    fn put_map(&mut self, map: &TopologicalMap) -> Result<(), StoreError>;
    fn put_mission(&mut self, mission: &Mission) -> Result<(), StoreError>;
    fn delete_mission(&mut self, id: &str) -> Result<(), StoreError>;
    fn put_schedule(&mut self, schedule: &Schedule) -> Result<(), StoreError>;
    fn delete_schedule(&mut self, id: &str) -> Result<(), StoreError>;
    fn put_registry(&mut self, registrations: &[ActionRegistration]) -> Result<(), StoreError>;
    fn append_intervention(&mut self, record: &InterventionRecord) -> Result<(), StoreError>;
    fn append_record(&mut self, entry: &RecordEntry) -> Result<(), StoreError>;
    /// Directory for the artifacts of task `index`, created on demand.
    fn artifact_dir(&mut self, mission_id: &str, index: usize) -> Option<PathBuf>;
}

/// Keeps nothing.
#[derive(Clone, Copy, Debug, Default)]
pub struct NullStore;

impl Store for NullStore {
    fn put_map(&mut self, _: &TopologicalMap) -> Result<(), StoreError> {
        Ok(())
    }
    fn put_mission(&mut self, _: &Mission) -> Result<(), StoreError> {
        Ok(())
    }
    fn delete_mission(&mut self, _: &str) -> Result<(), StoreError> {
        Ok(())
    }
    fn put_schedule(&mut self, _: &Schedule) -> Result<(), StoreError> {
        Ok(())
    }
    fn delete_schedule(&mut self, _: &str) -> Result<(), StoreError> {
        Ok(())
    }
    fn put_registry(&mut self, _: &[ActionRegistration]) -> Result<(), StoreError> {
        Ok(())
    }
    fn append_intervention(&mut self, _: &InterventionRecord) -> Result<(), StoreError> {
        Ok(())
    }
    fn append_record(&mut self, _: &RecordEntry) -> Result<(), StoreError> {
        Ok(())
    }
    fn artifact_dir(&mut self, _: &str, _: usize) -> Option<PathBuf> {
        None
    }
}

/// Everything restored from storage at start-up.
#[derive(Clone, Debug, Default)]
pub struct Persisted {
    pub map: Option<TopologicalMap>,
    pub missions: Vec<Mission>,
    pub schedules: Vec<Schedule>,
    /// Registrations beyond the built-ins.
    pub registrations: Vec<ActionRegistration>,
    pub interventions: Vec<InterventionRecord>,
    /// Finished records in start order.
    pub records: Vec<MissionRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoreConfig {
    pub timezone: String,
    pub monitor_period_s: f64,
    /// After a monitor's mission fails, its requests are ignored this long.
    pub monitor_backoff_s: f64,
}

impl Default for CoreConfig {
    fn default() -> Self {
        Self {
            timezone: "UTC".into(),
            monitor_period_s: 1.0,
            monitor_backoff_s: 60.0,
        }
    }
}

#[derive(Clone, Debug)]
enum Activity {
    Mission {
        mission: Mission,
        trigger: Trigger,
        run_id: Option<u64>,
    },
    Navigate {
        node: NodeId,
    },
}

struct MonitorRequest {
    monitor: String,
    mission: Mission,
}

struct Queued {
    schedule_id: String,
    mission_id: String,
}

struct State {
    clock: Arc<dyn Clock>,
    tz: Tz,
    config: CoreConfig,
    bus: EventBus,
    store: Box<dyn Store>,
    inbox: Receiver<Envelope>,

    map: Arc<TopologicalMap>,
    missions: BTreeMap<String, Mission>,
    schedules: BTreeMap<String, Schedule>,
    next_fire: BTreeMap<String, Option<Timestamp>>,
    registry: ActionRegistry,
    interventions: Vec<InterventionRecord>,
    records: Vec<MissionRecord>,

    monitors: Vec<Box<dyn Monitor>>,
    inhibited_by: BTreeSet<String>,
    monitor_request: Option<MonitorRequest>,
    monitor_backoff: BTreeMap<String, Timestamp>,
    last_monitor: Option<Timestamp>,

    operator_request: Option<Activity>,
    queued: Option<Queued>,
    busy: bool,
    current: Option<MissionRecord>,
    cancel: CancelToken,
    next_run_id: u64,

    localizer: Option<Localizer>,
    last_pose: Option<[f64; 4]>,
    last_battery: Option<(i64, bool)>,
    stopped: bool,
}

pub struct Core<A: RobotAdapter> {
    adapter: A,
    st: State,
}

impl<A: RobotAdapter> Core<A> {
    pub fn new(
        adapter: A,
        clock: Arc<dyn Clock>,
        config: CoreConfig,
        store: Box<dyn Store>,
        bus: EventBus,
        persisted: Persisted,
    ) -> Result<(Self, CoreHandle), ScheduleError> {
        let tz = parse_tz(&config.timezone)?;
        let (tx, inbox) = mpsc::channel();
        let cancel = CancelToken::new();
        let mut registry = ActionRegistry::with_builtins();
        for reg in persisted.registrations {
            registry
                .register(reg)
                .map_err(|e| ScheduleError::Config(format!("stored action registry: {e}")))?;
        }
        let next_run_id = persisted.records.iter().map(|r| r.run_id).max().unwrap_or(0) + 1;
        let now = clock.now();
        let mut st = State {
            clock,
            tz,
            config,
            bus: bus.clone(),
            store,
            inbox,
            map: Arc::new(persisted.map.unwrap_or_default()),
            missions: persisted.missions.into_iter().map(|m| (m.id.clone(), m)).collect(),
            schedules: BTreeMap::new(),
            next_fire: BTreeMap::new(),
            registry,
            interventions: persisted.interventions,
            records: persisted.records,
            monitors: Vec::new(),
            inhibited_by: BTreeSet::new(),
            monitor_request: None,
            monitor_backoff: BTreeMap::new(),
            last_monitor: None,
            operator_request: None,
            queued: None,
            busy: false,
            current: None,
            cancel: cancel.clone(),
            next_run_id,
            localizer: None,
            last_pose: None,
            last_battery: None,
            stopped: false,
        };
        for s in persisted.schedules {
            s.recurrence.validate()?;
            st.next_fire.insert(s.id.clone(), next_fire_in(&s.recurrence, now, &tz));
            st.schedules.insert(s.id.clone(), s);
        }
        let handle = CoreHandle {
            tx,
            bus,
            interrupt: cancel,
        };
        Ok((Self { adapter, st }, handle))
    }

    pub fn add_monitor(&mut self, monitor: Box<dyn Monitor>) {
        self.st.monitors.push(monitor);
    }

    pub fn set_localizer(&mut self, localizer: Localizer) {
        self.st.localizer = Some(localizer);
    }

    pub fn adapter(&self) -> &A {
        &self.adapter
    }

    pub fn adapter_mut(&mut self) -> &mut A {
        &mut self.adapter
    }

    pub fn map(&self) -> &TopologicalMap {
        &self.st.map
    }

    pub fn records(&self) -> &[MissionRecord] {
        &self.st.records
    }

    pub fn events(&self) -> &EventBus {
        &self.st.bus
    }

    pub fn is_stopped(&self) -> bool {
        self.st.stopped
    }

    /// Answer one command directly, as if it had come through the inbox.
    pub fn handle(&mut self, command: Command) -> Reply {
        self.st.handle(command, &mut self.adapter)
    }

    /// Run a mission straight away, ignoring inhibition and schedules.
    pub fn run_mission_now(&mut self, mission: Mission) -> MissionRecord {
        self.st.run_mission(&mut self.adapter, mission, Trigger::Operator, None)
    }

    /// Process until a shutdown command arrives.
    pub fn run(&mut self) {
        while !self.st.stopped {
            self.step(None);
        }
    }

    /// Process until the clock reaches `until` or a shutdown arrives.
    pub fn run_until(&mut self, until: Timestamp) {
        while !self.st.stopped && self.st.clock.now() < until {
            self.step(Some(until));
        }
    }

    fn step(&mut self, until: Option<Timestamp>) {
        let st = &mut self.st;
        let adapter = &mut self.adapter;
        st.pump(adapter);
        let now = st.clock.now();
        st.observe(adapter, now);
        st.evaluate_monitors(adapter, now, false);
        st.fire_schedules(now);
        if st.stopped {
            return;
        }
        if let Some(activity) = st.next_activity() {
            st.run_activity(adapter, activity);
            return;
        }

        let mut wake = now + seconds(st.config.monitor_period_s);
        if let Some(next) = st.next_fire.values().flatten().min() {
            wake = wake.min(*next);
        }
        if let Some(u) = until {
            wake = wake.min(u);
        }
        match st.clock.wall_until(wake) {
            None => adapter.idle_until(wake),
            Some(d) => {
                match st.inbox.recv_timeout(d) {
                    Ok(env) => {
                        let reply = st.handle(env.command, adapter);
                        let _ = env.reply.send(reply);
                    }
                    Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => {}
                }
                let now = st.clock.now();
                adapter.idle_until(now);
            }
        }
    }
}

fn map_error(e: MapError) -> CommandError {
    match e {
        MapError::NotFound(m) => CommandError::new(ErrorCode::NotFound, m),
        MapError::Conflict(m) => CommandError::new(ErrorCode::Conflict, m),
        other => CommandError::new(ErrorCode::Invalid, other.to_string()),
    }
}

fn nav_error(e: NavError) -> CommandError {
    match e {
        NavError::NotFound(n) => CommandError::new(ErrorCode::NotFound, format!("node {n} not found")),
        NavError::NoPath { .. } => CommandError::new(ErrorCode::Unreachable, e.to_string()),
        other => CommandError::new(ErrorCode::Invalid, other.to_string()),
    }
}

fn mission_error(e: MissionError) -> CommandError {
    match e {
        MissionError::UnreachableTask { .. } => CommandError::new(ErrorCode::Unreachable, e.to_string()),
        MissionError::NotFound(_) => CommandError::new(ErrorCode::NotFound, e.to_string()),
        MissionError::Invalid(_) => CommandError::new(ErrorCode::Invalid, e.to_string()),
    }
}

fn storage(e: StoreError) -> CommandError {
    CommandError::new(ErrorCode::Storage, e.0)
}

fn not_found(what: &str, id: &str) -> CommandError {
    CommandError::new(ErrorCode::NotFound, format!("{what} {id} not found"))
}

fn to_value<T: Serialize + ?Sized>(v: &T) -> Value {
    serde_json::to_value(v).expect("core types serialize")
}

/// Navigation context for one navigate_to call made by the core.
struct CoreNav<'a> {
    st: &'a mut State,
}

impl NavContext for CoreNav<'_> {
    fn map(&mut self) -> Arc<TopologicalMap> {
        self.st.map.clone()
    }

    fn checkpoint(&mut self, adapter: &mut dyn RobotAdapter) -> Checkpoint {
        self.st.checkpoint(adapter)
    }

    fn emit(&mut self, event: NavEvent) {
        self.st.emit(EventKind::Nav(event));
    }

    fn cancel_token(&self) -> CancelToken {
        self.st.cancel.clone()
    }
}

impl State {
    fn emit(&self, kind: EventKind) -> u64 {
        self.bus.publish(self.clock.now(), kind)
    }

    fn pump(&mut self, adapter: &mut dyn RobotAdapter) {
        while let Ok(env) = self.inbox.try_recv() {
            let reply = self.handle(env.command, adapter);
            let _ = env.reply.send(reply);
        }
    }

    /// Between hops and between tasks.
    fn checkpoint(&mut self, adapter: &mut dyn RobotAdapter) -> Checkpoint {
        self.pump(adapter);
        let now = self.clock.now();
        self.observe(adapter, now);
        self.evaluate_monitors(adapter, now, true);
        self.fire_schedules(now);
        if self.cancel.is_cancelled() {
            Checkpoint::Cancel
        } else {
            Checkpoint::Continue
        }
    }

    /// Publish pose, battery and localizer changes.
    fn observe(&mut self, adapter: &mut dyn RobotAdapter, now: Timestamp) {
        let pose = adapter.current_pose();
        let p = pose.translation;
        let sample = [p.x, p.y, p.z, pose.yaw()];
        let moved = self
            .last_pose
            .map_or(true, |q| q.iter().zip(sample).any(|(a, b)| (a - b).abs() > 1e-9));
        if moved {
            self.last_pose = Some(sample);
            let node = self.map.nodes().find(|n| (n.position - p).norm() < 1e-3).map(|n| n.id.clone());
            self.emit(EventKind::Pose {
                x: p.x,
                y: p.y,
                z: p.z,
                yaw: sample[3],
                node,
            });
        }
        let b = adapter.battery();
        let key = ((b.level * 100.0).floor() as i64, b.docked);
        if self.last_battery != Some(key) {
            self.last_battery = Some(key);
            self.emit(EventKind::Battery {
                level: b.level,
                docked: b.docked,
                charging: b.charging,
            });
        }
        if let (Some(loc), Some(source)) = (self.localizer.as_mut(), adapter.localization_source()) {
            let events = loc.track(source, now);
            for e in events {
                self.bus.publish(now, EventKind::Localizer(e));
            }
        }
    }

    fn evaluate_monitors(&mut self, adapter: &mut dyn RobotAdapter, now: Timestamp, in_mission: bool) {
        if self.monitors.is_empty() {
            return;
        }
        let due = self
            .last_monitor
            .map_or(true, |t| now - t >= seconds(self.config.monitor_period_s));
        if !due && !in_mission {
            return;
        }
        self.last_monitor = Some(now);
        let pending: Vec<String> = self.monitor_request.iter().map(|r| r.mission.id.clone()).collect();
        let running = self.current.as_ref().map(|r| r.mission_id.clone());
        let snapshot = SystemSnapshot {
            now,
            battery: adapter.battery(),
            position: adapter.current_pose().translation,
            map: &self.map,
            inhibited_by: &self.inhibited_by,
            running: running.as_deref(),
            pending: &pending,
        };
        let decided: Vec<(String, Vec<MonitorAction>)> = self
            .monitors
            .iter()
            .map(|m| (m.name().to_string(), m.evaluate(&snapshot)))
            .filter(|(_, a)| !a.is_empty())
            .collect();
        for (monitor, actions) in decided {
            for action in actions {
                self.apply_monitor_action(&monitor, action, now);
            }
        }
    }

    fn apply_monitor_action(&mut self, monitor: &str, action: MonitorAction, now: Timestamp) {
        match action {
            MonitorAction::Inhibit => {
                if self.inhibited_by.insert(monitor.to_string()) {
                    self.emit(EventKind::Inhibited {
                        monitor: monitor.to_string(),
                    });
                }
            }
            MonitorAction::Uninhibit => {
                if self.inhibited_by.remove(monitor) {
                    self.emit(EventKind::Uninhibited {
                        monitor: monitor.to_string(),
                    });
                }
            }
            MonitorAction::RequestMission { mission, urgent } => {
                if self.monitor_request.is_some() || self.monitor_backoff.get(monitor).map_or(false, |t| now < *t) {
                    return;
                }
                self.emit(EventKind::MonitorRequest {
                    monitor: monitor.to_string(),
                    mission_id: mission.id.clone(),
                    urgent,
                });
                let preempts = self.busy && !self.running_for_monitor();
                if urgent && preempts {
                    self.cancel.cancel();
                }
                self.monitor_request = Some(MonitorRequest {
                    monitor: monitor.to_string(),
                    mission,
                });
            }
            MonitorAction::Alert { message } => {
                self.emit(EventKind::Alert {
                    source: monitor.to_string(),
                    message,
                });
            }
        }
    }

    fn running_for_monitor(&self) -> bool {
        matches!(
            self.current.as_ref().map(|r| &r.trigger),
            Some(Trigger::Monitor { .. })
        )
    }

    fn fire_schedules(&mut self, now: Timestamp) {
        let due: Vec<String> = self
            .next_fire
            .iter()
            .filter(|(id, t)| t.map_or(false, |t| t <= now) && self.schedules.get(*id).map_or(false, |s| s.enabled))
            .map(|(id, _)| id.clone())
            .collect();
        for id in due {
            let schedule = self.schedules[&id].clone();
            self.next_fire
                .insert(id.clone(), next_fire_in(&schedule.recurrence, now, &self.tz));
            if !self.missions.contains_key(&schedule.mission) {
                self.emit(EventKind::ScheduleError {
                    schedule_id: id.clone(),
                    message: format!("mission {} not found; schedule disabled", schedule.mission),
                });
                let mut disabled = schedule.clone();
                disabled.enabled = false;
                if let Err(e) = self.store.put_schedule(&disabled) {
                    self.alert("store", e.0);
                }
                self.schedules.insert(id, disabled);
                continue;
            }
            if !self.inhibited_by.is_empty() {
                let reason = format!("inhibited by {}", self.inhibitors().join(", "));
                self.emit(EventKind::ScheduleSuppressed { schedule_id: id, reason });
                continue;
            }
            let occupied = self.busy || self.operator_request.is_some() || self.monitor_request.is_some();
            if occupied {
                if self.queued.is_none() {
                    self.emit(EventKind::ScheduleQueued {
                        schedule_id: id.clone(),
                        mission_id: schedule.mission.clone(),
                    });
                    self.queued = Some(Queued {
                        schedule_id: id,
                        mission_id: schedule.mission,
                    });
                } else {
                    self.emit(EventKind::ScheduleSuppressed {
                        schedule_id: id,
                        reason: "a firing is already queued".into(),
                    });
                }
                continue;
            }
            self.emit(EventKind::ScheduleFired {
                schedule_id: id.clone(),
                mission_id: schedule.mission.clone(),
            });
            self.queued = Some(Queued {
                schedule_id: id,
                mission_id: schedule.mission,
            });
        }
    }

    fn inhibitors(&self) -> Vec<String> {
        self.inhibited_by.iter().cloned().collect()
    }

    fn alert(&self, source: &str, message: String) {
        self.emit(EventKind::Alert {
            source: source.into(),
            message,
        });
    }

    /// Monitor missions first, then operator requests, then the schedule slot.
    fn next_activity(&mut self) -> Option<Activity> {
        if let Some(req) = self.monitor_request.take() {
            return Some(Activity::Mission {
                mission: req.mission,
                trigger: Trigger::Monitor { monitor: req.monitor },
                run_id: None,
            });
        }
        if let Some(act) = self.operator_request.take() {
            if !self.inhibited_by.is_empty() {
                let mission_id = match &act {
                    Activity::Mission { mission, .. } => mission.id.clone(),
                    Activity::Navigate { node } => format!("navigate to {node}"),
                };
                self.emit(EventKind::MissionRejected {
                    mission_id,
                    reason: "inhibited".into(),
                    inhibited_by: self.inhibitors(),
                });
                return None;
            }
            return Some(act);
        }
        let q = self.queued.take()?;
        if !self.inhibited_by.is_empty() {
            let reason = format!("inhibited by {}", self.inhibitors().join(", "));
            self.emit(EventKind::ScheduleSuppressed {
                schedule_id: q.schedule_id,
                reason,
            });
            return None;
        }
        let Some(mut mission) = self.missions.get(&q.mission_id).cloned() else {
            self.emit(EventKind::ScheduleError {
                schedule_id: q.schedule_id,
                message: format!("mission {} was deleted before it could run", q.mission_id),
            });
            return None;
        };
        if self.schedules.get(&q.schedule_id).map_or(false, |s| s.reorder_before_run) {
            mission = self.reordered_or_original(mission);
        }
        Some(Activity::Mission {
            mission,
            trigger: Trigger::Schedule {
                schedule_id: q.schedule_id,
            },
            run_id: None,
        })
    }

    fn reordered_or_original(&self, mission: Mission) -> Mission {
        let pose = self.last_pose.unwrap_or_default();
        let here = nalgebra::Vector3::new(pose[0], pose[1], pose[2]);
        match nearest_node(&self.map, &here) {
            Ok(start) => match reorder_tsp(&mission, &start, &self.map) {
                Ok(m) => m,
                Err(e) => {
                    self.alert("scheduler", format!("keeping task order of {}: {e}", mission.id));
                    mission
                }
            },
            Err(_) => mission,
        }
    }

    fn run_activity(&mut self, adapter: &mut dyn RobotAdapter, activity: Activity) {
        match activity {
            Activity::Mission {
                mission,
                trigger,
                run_id,
            } => {
                let monitor = match &trigger {
                    Trigger::Monitor { monitor } => Some(monitor.clone()),
                    _ => None,
                };
                let record = self.run_mission(adapter, mission, trigger, run_id);
                if let Some(m) = monitor {
                    if record.outcome != Some(MissionOutcome::Completed) {
                        let until = self.clock.now() + seconds(self.config.monitor_backoff_s);
                        self.monitor_backoff.insert(m, until);
                    }
                }
            }
            Activity::Navigate { node } => {
                self.busy = true;
                self.cancel.reset();
                let result = navigate_to(&mut CoreNav { st: self }, adapter, &node);
                if let Err(e) = result {
                    self.alert("navigation", e.to_string());
                }
                self.busy = false;
                let now = self.clock.now();
                self.observe(adapter, now);
            }
        }
    }

    fn set_status(&mut self, index: usize, status: TaskStatus, detail: Option<String>) {
        let Some(record) = self.current.as_mut() else { return };
        let task = &mut record.tasks[index];
        debug_assert!(task.status.can_become(status), "{:?} -> {:?}", task.status, status);
        task.status = status;
        task.detail = detail.clone();
        let run_id = record.run_id;
        self.emit(EventKind::TaskStatus {
            run_id,
            index,
            status,
            detail,
        });
    }

    fn run_mission(
        &mut self,
        adapter: &mut dyn RobotAdapter,
        mission: Mission,
        trigger: Trigger,
        run_id: Option<u64>,
    ) -> MissionRecord {
        let run_id = run_id.unwrap_or_else(|| {
            self.next_run_id += 1;
            self.next_run_id - 1
        });
        self.cancel.reset();
        self.busy = true;
        let record = MissionRecord::start(run_id, &mission, trigger.clone(), self.clock.now());
        if let Err(e) = self.store.append_record(&RecordEntry::Started { record: record.clone() }) {
            self.alert("store", e.0);
        }
        self.emit(EventKind::MissionStarted {
            run_id,
            mission_id: mission.id.clone(),
            trigger: trigger.clone(),
            tasks: record.tasks.clone(),
        });
        self.current = Some(record);
        let by_monitor = matches!(trigger, Trigger::Monitor { .. });

        let mut preempted = false;
        let mut aborted = false;
        let mut distance = 0.0;
        for (i, task) in mission.tasks.iter().enumerate() {
            if !preempted && (self.cancel.is_cancelled() || (!by_monitor && self.monitor_request.is_some())) {
                preempted = true;
            }
            if preempted || aborted {
                self.set_status(i, TaskStatus::Skipped, None);
                continue;
            }
            self.set_status(i, TaskStatus::Navigating, None);
            let failure = match navigate_to(&mut CoreNav { st: self }, adapter, &task.node) {
                Ok(report) => {
                    distance += report.distance_m();
                    match report.failure {
                        None => None,
                        Some(NavFailure::Cancelled) => {
                            preempted = true;
                            Some("preempted".to_string())
                        }
                        Some(NavFailure::NoPath) => Some(format!("no path to {}", task.node)),
                        Some(NavFailure::GoalRemoved) => Some(format!("NodeMissing: {} was removed", task.node)),
                    }
                }
                Err(NavError::NotFound(n)) => Some(format!("NodeMissing: {n}")),
                Err(NavError::Aborted { reason, report }) => {
                    distance += report.distance_m();
                    Some(format!("navigation aborted: {reason}"))
                }
                Err(e) => Some(e.to_string()),
            };
            if let Some(detail) = failure {
                self.set_status(i, TaskStatus::Failed, Some(detail));
                aborted = !preempted && mission.failure_policy == FailurePolicy::Abort;
                continue;
            }

            self.set_status(i, TaskStatus::Executing, None);
            let now = self.clock.now();
            let mut ctx = ExecContext::new(now, task.action.timeout_s.max(1e-3), self.cancel.clone());
            ctx.artifact_dir = self.store.artifact_dir(&mission.id, i);
            ctx.node = Some(task.node.clone());
            ctx.map = Some(self.map.clone());
            let (status, detail, result) = match self.registry.execute(&task.action, adapter, &ctx) {
                Ok(r) if r.status == ActionStatus::Succeeded => (TaskStatus::Succeeded, None, Some(r)),
                Ok(r) if r.status == ActionStatus::Cancelled && self.cancel.is_cancelled() => {
                    preempted = true;
                    (TaskStatus::Failed, Some("preempted".to_string()), Some(r))
                }
                Ok(r) => {
                    let detail = format!("{:?}: {}", r.status, r.message.as_deref().unwrap_or("")).to_lowercase();
                    (TaskStatus::Failed, Some(detail), Some(r))
                }
                Err(e) => (TaskStatus::Failed, Some(e.to_string()), None),
            };
            if let Some(rec) = self.current.as_mut() {
                rec.tasks[i].result = result;
            }
            self.set_status(i, status, detail);
            if status == TaskStatus::Failed && !preempted && mission.failure_policy == FailurePolicy::Abort {
                aborted = true;
            }
            // task boundary
            let _ = self.checkpoint(adapter);
        }

        let mut record = self.current.take().expect("set at start");
        let any_failed = record.tasks.iter().any(|t| t.status == TaskStatus::Failed);
        record.outcome = Some(if preempted {
            MissionOutcome::Preempted
        } else if aborted {
            MissionOutcome::Aborted
        } else if any_failed {
            MissionOutcome::Partial
        } else {
            MissionOutcome::Completed
        });
        record.ended = Some(self.clock.now());
        record.distance_walked = distance;
        if let Err(e) = self.store.append_record(&RecordEntry::Finished { record: record.clone() }) {
            self.alert("store", e.0);
        }
        self.records.push(record.clone());
        self.emit(EventKind::MissionFinished { record: record.clone() });
        self.busy = false;
        self.cancel.reset();
        let now = self.clock.now();
        self.observe(adapter, now);
        record
    }

    fn start_node(&self, adapter: &dyn RobotAdapter, start: Option<NodeId>) -> Result<NodeId, CommandError> {
        match start {
            Some(s) => Ok(s),
            None => nearest_node(&self.map, &adapter.current_pose().translation).map_err(map_error),
        }
    }

    fn commit_map(&mut self, map: TopologicalMap) -> Reply {
        self.store.put_map(&map).map_err(storage)?;
        let version = map.version;
        self.map = Arc::new(map);
        self.emit(EventKind::MapVersion { version });
        Ok(json!({ "version": version }))
    }

    fn handle(&mut self, command: Command, adapter: &mut dyn RobotAdapter) -> Reply {
        let occupied = self.busy || self.operator_request.is_some();
        match command {
            Command::ExecuteMission { mission_id, reorder } => {
                let mut mission = self
                    .missions
                    .get(&mission_id)
                    .cloned()
                    .ok_or_else(|| not_found("mission", &mission_id))?;
                if occupied {
                    return Err(CommandError::new(ErrorCode::Busy, "a mission or navigation is already running"));
                }
                if !self.inhibited_by.is_empty() {
                    let inhibited_by = self.inhibitors();
                    self.emit(EventKind::MissionRejected {
                        mission_id: mission_id.clone(),
                        reason: "inhibited".into(),
                        inhibited_by: inhibited_by.clone(),
                    });
                    return Err(CommandError::new(
                        ErrorCode::Inhibited,
                        format!("MissionRejected(inhibited): held by {}", inhibited_by.join(", ")),
                    ));
                }
                if reorder {
                    let start = self.start_node(adapter, None)?;
                    mission = reorder_tsp(&mission, &start, &self.map).map_err(mission_error)?;
                }
                let run_id = self.next_run_id;
                self.next_run_id += 1;
                let order: Vec<&str> = mission.tasks.iter().map(|t| t.node.as_str()).collect();
                let reply = json!({ "run_id": run_id, "mission_id": mission_id, "order": order });
                self.operator_request = Some(Activity::Mission {
                    mission,
                    trigger: Trigger::Operator,
                    run_id: Some(run_id),
                });
                Ok(reply)
            }
            Command::Interrupt => {
                self.operator_request = None;
                if self.busy {
                    self.cancel.cancel();
                    Ok(json!({ "interrupted": true }))
                } else {
                    self.cancel.reset();
                    Ok(json!({ "interrupted": false }))
                }
            }
            Command::NavigateTo { node } => {
                if !self.map.contains_node(&node) {
                    return Err(not_found("node", node.as_str()));
                }
                if occupied {
                    return Err(CommandError::new(ErrorCode::Busy, "a mission or navigation is already running"));
                }
                if !self.inhibited_by.is_empty() {
                    return Err(CommandError::new(
                        ErrorCode::Inhibited,
                        format!("held by {}", self.inhibitors().join(", ")),
                    ));
                }
                self.operator_request = Some(Activity::Navigate { node: node.clone() });
                Ok(json!({ "accepted": true, "goal": node }))
            }
            Command::ApplyMapEdit { edit, expected_version } => {
                if expected_version != self.map.version {
                    return Err(CommandError::new(
                        ErrorCode::Conflict,
                        format!("map is at version {}, edit was made against {expected_version}", self.map.version),
                    ));
                }
                let applied = apply_edit(&self.map, &edit).map_err(map_error)?;
                self.commit_map(applied.map)
            }
            Command::ReplaceMap { mut map, expected_version } => {
                if let Some(v) = expected_version {
                    if v != self.map.version {
                        return Err(CommandError::new(
                            ErrorCode::Conflict,
                            format!("map is at version {}, replacement was made against {v}", self.map.version),
                        ));
                    }
                }
                map.validate().map_err(map_error)?;
                map.version = self.map.version + 1;
                self.commit_map(map)
            }
            Command::GetMap => Ok(to_value(&*self.map)),
            Command::ComputePolicy { goal } => Ok(to_value(&compute_policy(&self.map, &goal).map_err(nav_error)?)),
            Command::PlanPath { start, goal } => {
                let start = self.start_node(adapter, start)?;
                Ok(to_value(&plan_path(&self.map, &start, &goal).map_err(nav_error)?))
            }
            Command::SaveMission { mission } => {
                mission.validate().map_err(mission_error)?;
                self.store.put_mission(&mission).map_err(storage)?;
                let id = mission.id.clone();
                self.missions.insert(id.clone(), mission);
                self.emit(EventKind::StoreChanged {
                    entity: "mission".into(),
                    id: id.clone(),
                    deleted: false,
                });
                Ok(json!({ "saved": id }))
            }
            Command::LoadMission { mission_id } => self
                .missions
                .get(&mission_id)
                .map(to_value)
                .ok_or_else(|| not_found("mission", &mission_id)),
            Command::ListMissions => {
                let mut all: Vec<&Mission> = self.missions.values().collect();
                all.sort_by(|a, b| a.name.cmp(&b.name).then_with(|| a.id.cmp(&b.id)));
                Ok(to_value(&all))
            }
            Command::DeleteMission { mission_id } => {
                if !self.missions.contains_key(&mission_id) {
                    return Err(not_found("mission", &mission_id));
                }
                let users: Vec<&str> = self
                    .schedules
                    .values()
                    .filter(|s| s.mission == mission_id)
                    .map(|s| s.id.as_str())
                    .collect();
                if !users.is_empty() {
                    return Err(CommandError::new(
                        ErrorCode::ScheduledMissionInUse,
                        format!("mission {mission_id} is used by schedule(s) {}", users.join(", ")),
                    ));
                }
                self.store.delete_mission(&mission_id).map_err(storage)?;
                self.missions.remove(&mission_id);
                self.emit(EventKind::StoreChanged {
                    entity: "mission".into(),
                    id: mission_id.clone(),
                    deleted: true,
                });
                Ok(json!({ "deleted": mission_id }))
            }
            Command::SaveSchedule { mut schedule } => {
                if schedule.id.trim().is_empty() {
                    return Err(CommandError::new(ErrorCode::Invalid, "schedule id must be non-empty"));
                }
                schedule
                    .recurrence
                    .validate()
                    .map_err(|e| CommandError::new(ErrorCode::Invalid, e.to_string()))?;
                if !self.missions.contains_key(&schedule.mission) {
                    return Err(not_found("mission", &schedule.mission));
                }
                let now = self.clock.now();
                if let Recurrence::Every { anchor: anchor @ None, .. } = &mut schedule.recurrence {
                    *anchor = Some(now);
                }
                self.store.put_schedule(&schedule).map_err(storage)?;
                let next = next_fire_in(&schedule.recurrence, now, &self.tz);
                let id = schedule.id.clone();
                self.next_fire.insert(id.clone(), next);
                self.schedules.insert(id.clone(), schedule);
                self.emit(EventKind::StoreChanged {
                    entity: "schedule".into(),
                    id: id.clone(),
                    deleted: false,
                });
                Ok(json!({ "saved": id, "next_fire": next }))
            }
            Command::DeleteSchedule { schedule_id } => {
                if !self.schedules.contains_key(&schedule_id) {
                    return Err(not_found("schedule", &schedule_id));
                }
                self.store.delete_schedule(&schedule_id).map_err(storage)?;
                self.schedules.remove(&schedule_id);
                self.next_fire.remove(&schedule_id);
                self.emit(EventKind::StoreChanged {
                    entity: "schedule".into(),
                    id: schedule_id.clone(),
                    deleted: true,
                });
                Ok(json!({ "deleted": schedule_id }))
            }
            Command::ListSchedules => Ok(Value::Array(
                self.schedules
                    .values()
                    .map(|s| json!({ "schedule": s, "next_fire": self.next_fire.get(&s.id).copied().flatten() }))
                    .collect(),
            )),
            Command::SetScheduleEnabled { schedule_id, enabled } => {
                let mut schedule = self
                    .schedules
                    .get(&schedule_id)
                    .cloned()
                    .ok_or_else(|| not_found("schedule", &schedule_id))?;
                schedule.enabled = enabled;
                self.store.put_schedule(&schedule).map_err(storage)?;
                let now = self.clock.now();
                self.next_fire
                    .insert(schedule_id.clone(), next_fire_in(&schedule.recurrence, now, &self.tz));
                self.schedules.insert(schedule_id.clone(), schedule);
                self.emit(EventKind::StoreChanged {
                    entity: "schedule".into(),
                    id: schedule_id.clone(),
                    deleted: false,
                });
                Ok(json!({ "schedule_id": schedule_id, "enabled": enabled }))
            }
            Command::RegisterAction { registration } => {
                let name = registration.name.clone();
                let mut next = self.registry.clone();
                let replaced = next
                    .register(registration)
                    .map_err(|e| CommandError::new(ErrorCode::Invalid, e.to_string()))?;
                self.store.put_registry(&next.list()).map_err(storage)?;
                self.registry = next;
                self.emit(EventKind::RegistryChanged {
                    action: name.clone(),
                    replaced,
                });
                Ok(json!({ "registered": name, "replaced": replaced }))
            }
            Command::ListActions => Ok(to_value(&self.registry.list())),
            Command::LogIntervention { record } => {
                self.store.append_intervention(&record).map_err(storage)?;
                self.interventions.push(record.clone());
                self.emit(EventKind::Intervention { record });
                Ok(json!({ "logged": self.interventions.len() }))
            }
            Command::ListInterventions { limit } => {
                let n = limit.unwrap_or(usize::MAX).min(self.interventions.len());
                Ok(to_value(&self.interventions[self.interventions.len() - n..]))
            }
            Command::ComputeMtbi { start, window_hours } => {
                if !(window_hours > 0.0 && window_hours.is_finite()) {
                    return Err(CommandError::new(ErrorCode::Invalid, "window must be positive"));
                }
                let window = seconds(window_hours * 3600.0);
                Ok(json!({ "mtbi_hours": compute_mtbi(&self.interventions, start, window) }))
            }
            Command::ReorderMission {
                mission_id,
                mission,
                start,
                save,
            } => {
                let original = match (mission, mission_id) {
                    (Some(m), _) => m,
                    (None, Some(id)) => self.missions.get(&id).cloned().ok_or_else(|| not_found("mission", &id))?,
                    (None, None) => {
                        return Err(CommandError::new(ErrorCode::Invalid, "give a mission or a mission_id"))
                    }
                };
                let start = self.start_node(adapter, start)?;
                let reordered = reorder_tsp(&original, &start, &self.map).map_err(mission_error)?;
                let cost = |m: &Mission| {
                    travel_costs(&self.map, &start, &m.tasks)
                        .map(|c| order_cost(&c, &(0..m.tasks.len()).collect::<Vec<_>>()))
                        .unwrap_or(f64::INFINITY)
                };
                let (before, after) = (cost(&original), cost(&reordered));
                if save {
                    return self
                        .handle(
                            Command::SaveMission {
                                mission: reordered.clone(),
                            },
                            adapter,
                        )
                        .map(|_| json!({ "mission": reordered, "cost_before": before, "cost_after": after }));
                }
                Ok(json!({ "mission": reordered, "cost_before": before, "cost_after": after }))
            }
            Command::Status => {
                let pose = adapter.current_pose();
                let p = pose.translation;
                Ok(json!({
                    "time": self.clock.now(),
                    "map_version": self.map.version,
                    "pose": { "x": p.x, "y": p.y, "z": p.z, "yaw": pose.yaw() },
                    "battery": adapter.battery(),
                    "localizer": self.localizer.as_ref().map(|l| l.state().clone()),
                    "inhibited_by": self.inhibitors(),
                    "busy": self.busy,
                    "current": self.current,
                    "queued": self.queued.as_ref().map(|q| json!({ "schedule_id": q.schedule_id, "mission_id": q.mission_id })),
                    "last_seq": self.bus.last_seq(),
                }))
            }
            Command::ListRecords { limit } => {
                let n = limit.unwrap_or(usize::MAX).min(self.records.len());
                Ok(to_value(&self.records[self.records.len() - n..]))
            }
            Command::Shutdown => {
                self.stopped = true;
                self.operator_request = None;
                if self.busy {
                    self.cancel.cancel();
                }
                self.emit(EventKind::ShuttingDown);
                Ok(json!({ "stopping": true }))
            }
        }
    }
}
