pub mod actions;
pub mod autonomy;
pub mod command;
pub mod events;
pub mod interventions;
pub mod localization;
pub mod map;
pub mod mission;
pub mod monitor;
pub mod nav;
pub mod scenario;
pub mod schedule;
pub mod sim;
pub mod time;
pub mod wire;

pub use actions::{
    ActionError, ActionRegistration, ActionRegistry, ActionResult, ActionSpec, ActionStatus, CancelToken, Endpoint,
    ExecContext, ParamSpec, ParamType, Params,
};
pub use map::{
    apply_edit, build_from_pose_graph, load_map, nearest_node, save_map, AppliedEdit, Edge, EdgeKey, MapEdit, MapError,
    Node, NodeId, NodeKind, TopologicalMap, TraversalAction,
};
pub use nav::{
    compute_policy, navigate_to, plan_path, plan_path_excluding, AdapterError, BatteryState, Checkpoint, Hop,
    NavContext, NavError, NavEvent, NavFailure, NavigationPolicy, NavigationReport, RobotAdapter, Route, TraversalOutcome,
    TraversalStatus,
};
pub use sim::{Fault, FaultScript, Interval, SimEvent, SimEventKind, SimParams, SimRobot, SimWorld, WorldObject};
pub use autonomy::{Core, CoreConfig, NullStore, Persisted, RecordEntry, Store, StoreError};
pub use command::{Command, CommandError, CoreHandle, ErrorCode, Reply};
pub use events::{EventBus, EventKind, StateEvent, Subscription};
pub use interventions::{compute_mtbi, InterventionCategory, InterventionRecord};
pub use localization::{LocalizationSource, Localizer, LocalizerEvent, LocalizerParams, LocalizerState};
pub use mission::{reorder_tsp, FailurePolicy, Mission, MissionError, MissionOutcome, MissionRecord, Task, TaskRecord, TaskStatus, Trigger};
pub use monitor::{BatteryMonitor, Monitor, MonitorAction, SystemSnapshot};
pub use schedule::{next_fire_time, LocalTime, Recurrence, Schedule, ScheduleError, WeeklySlot};
pub use time::{Clock, SimClock, Timestamp, WallClock};
