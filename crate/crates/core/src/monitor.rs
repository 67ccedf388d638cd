//! Condition monitors. A monitor looks at a snapshot of the system and
//! answers with actions for the core; it never drives the robot itself.

use std::collections::BTreeSet;

use ronda_perception::Point;
use serde::{Deserialize, Serialize};

use crate::actions::ActionSpec;
use crate::map::{nearest_node, NodeId, NodeKind, TopologicalMap};
use crate::mission::{Mission, Task};
use crate::nav::{plan_path, BatteryState};
use crate::time::Timestamp;

pub struct SystemSnapshot<'a> {
    pub now: Timestamp,
    pub battery: BatteryState,
    pub position: Point,
    pub map: &'a TopologicalMap,
    /// Monitors currently holding an inhibit.
    pub inhibited_by: &'a BTreeSet<String>,
    /// Id of the running mission, if any.
    pub running: Option<&'a str>,
    /// Missions requested by monitors that have not started yet.
    pub pending: &'a [String],
}

impl SystemSnapshot<'_> {
    /// Whether `mission_id` is running or waiting to run.
    pub fn has_mission(&self, mission_id: &str) -> bool {
        self.running == Some(mission_id) || self.pending.iter().any(|m| m == mission_id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum MonitorAction {
    Inhibit,
    Uninhibit,
    RequestMission {
        mission: Mission,
        /// Cancel whatever is in flight instead of waiting for the current
        /// task to finish.
        urgent: bool,
    },
    Alert {
        message: String,
    },
}

pub trait Monitor: Send {
    fn name(&self) -> &str;
    fn evaluate(&self, snapshot: &SystemSnapshot<'_>) -> Vec<MonitorAction>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatteryMonitor {
    pub threshold_low: f64,
    pub threshold_resume: f64,
    /// Below this level a running task is cancelled rather than finished.
    pub hard_floor: f64,
}

impl Default for BatteryMonitor {
    fn default() -> Self {
        Self {
            threshold_low: 0.2,
            threshold_resume: 0.9,
            hard_floor: 0.1,
        }
    }
}

pub const BATTERY_MONITOR: &str = "battery";

impl BatteryMonitor {
    pub fn new(threshold_low: f64, threshold_resume: f64) -> Result<Self, String> {
        if !(0.0 < threshold_low && threshold_low < threshold_resume && threshold_resume <= 1.0) {
            return Err(format!(
                "need 0 < low < resume <= 1, got low {threshold_low} resume {threshold_resume}"
            ));
        }
        Ok(Self {
            threshold_low,
            threshold_resume,
            hard_floor: Self::default().hard_floor.min(threshold_low),
        })
    }
}

/// Dock node with the cheapest route from the node nearest `position`.
/// Ties go to the smaller id.
pub fn nearest_dock(map: &TopologicalMap, position: &Point) -> Option<(NodeId, f64)> {
    let start = nearest_node(map, position).ok()?;
    map.nodes()
        .filter(|n| n.kind == NodeKind::Dock)
        .filter_map(|n| plan_path(map, &start, &n.id).ok().map(|r| (n.id.clone(), r.total_cost)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)))
}

/// Single-task mission that walks to `dock` and docks there.
pub fn dock_mission(dock: &NodeId) -> Mission {
    let mut task = Task::new(dock.as_str(), ActionSpec::new("dock").with_timeout(60.0));
    task.label = "return to dock".into();
    Mission::new(&format!("dock-{dock}"), &format!("Return to {dock}"), vec![task])
}

impl Monitor for BatteryMonitor {
    fn name(&self) -> &str {
        BATTERY_MONITOR
    }

    fn evaluate(&self, s: &SystemSnapshot<'_>) -> Vec<MonitorAction> {
        let holding = s.inhibited_by.contains(BATTERY_MONITOR);
        let level = s.battery.level;
        let mut out = Vec::new();
        if holding && s.battery.docked && level >= self.threshold_resume {
            out.push(MonitorAction::Uninhibit);
            return out;
        }
        if !(level < self.threshold_low || holding) {
            return out;
        }
        if !holding {
            out.push(MonitorAction::Inhibit);
        }
        if s.battery.docked {
            return out;
        }
        match nearest_dock(s.map, &s.position) {
            Some((dock, _)) => {
                let mission = dock_mission(&dock);
                if !s.has_mission(&mission.id) {
                    out.push(MonitorAction::RequestMission {
                        mission,
                        urgent: level < self.hard_floor,
                    });
                }
            }
            None if !holding => out.push(MonitorAction::Alert {
                message: format!("battery at {:.0}% and no reachable dock", level * 100.0),
            }),
            None => {}
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::{Node, TraversalAction};
    use nalgebra::Vector3;

    fn two_docks() -> TopologicalMap {
        let mut m = TopologicalMap::default();
        m.insert_node(Node::new("w", NodeKind::Waypoint, Vector3::zeros())).unwrap();
        m.insert_node(Node::new("d5", NodeKind::Dock, Vector3::new(5.0, 0.0, 0.0))).unwrap();
        m.insert_node(Node::new("d9", NodeKind::Dock, Vector3::new(-3.0, 0.0, 0.0))).unwrap();
        m.insert_edge_pair(&"w".into(), &"d5".into(), TraversalAction::Walk, Some(5.0)).unwrap();
        m.insert_edge_pair(&"w".into(), &"d9".into(), TraversalAction::Walk, Some(9.0)).unwrap();
        m
    }

    fn snap<'a>(map: &'a TopologicalMap, inhibited: &'a BTreeSet<String>, level: f64, docked: bool) -> SystemSnapshot<'a> {
        SystemSnapshot {
            now: chrono::Utc::now(),
            battery: BatteryState {
                level,
                docked,
                charging: docked,
            },
            position: Vector3::zeros(),
            map,
            inhibited_by: inhibited,
            running: None,
            pending: &[],
        }
    }

    #[test]
    fn low_battery_inhibits_and_docks_at_cheapest() {
        let m = two_docks();
        let none = BTreeSet::new();
        let acts = BatteryMonitor::default().evaluate(&snap(&m, &none, 0.15, false));
        assert_eq!(acts[0], MonitorAction::Inhibit);
        match &acts[1] {
            MonitorAction::RequestMission { mission, urgent } => {
                assert_eq!(mission.tasks[0].node.as_str(), "d5");
                assert!(!urgent);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hysteresis_exit_when_charged() {
        let m = two_docks();
        let held: BTreeSet<String> = [BATTERY_MONITOR.to_string()].into();
        let mon = BatteryMonitor::default();
        assert_eq!(mon.evaluate(&snap(&m, &held, 0.95, true)), vec![MonitorAction::Uninhibit]);
        assert!(mon.evaluate(&snap(&m, &held, 0.5, true)).is_empty());
    }

    #[test]
    fn no_dock_raises_alert() {
        let mut m = TopologicalMap::default();
        m.insert_node(Node::new("w", NodeKind::Waypoint, Vector3::zeros())).unwrap();
        let none = BTreeSet::new();
        let acts = BatteryMonitor::default().evaluate(&snap(&m, &none, 0.05, false));
        assert_eq!(acts.len(), 2);
        assert!(matches!(acts[1], MonitorAction::Alert { .. }));
    }

    #[test]
    fn thresholds_are_checked() {
        assert!(BatteryMonitor::new(0.3, 0.2).is_err());
        assert!(BatteryMonitor::new(0.2, 1.1).is_err());
        assert!(BatteryMonitor::new(0.2, 0.9).is_ok());
    }
}
