//! Shortest-path planning over the topological map and route execution
//! with rerouting around blocked edges.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use ronda_perception::{Point, Pose};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::{ActionResult, ActionSpec, CancelToken, ExecContext};
use crate::map::{nearest_node, Edge, EdgeKey, MapError, NodeId, TopologicalMap};
use crate::time::Timestamp;

/// Blockage-triggered replans allowed within one `navigate_to` call.
pub const MAX_REPLANS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NavError {
    #[error("node {0} not found")]
    NotFound(NodeId),
    #[error("no active path from {start} to {goal}")]
    NoPath { start: NodeId, goal: NodeId },
    #[error("map is empty")]
    EmptyMap,
    #[error("navigation aborted: {reason}")]
    Aborted { reason: String, report: Box<NavigationReport> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub start: NodeId,
    pub goal: NodeId,
    pub hops: Vec<EdgeKey>,
    pub total_cost: f64,
}

#[derive(Clone)]
struct Label {
    cost: f64,
    path: Vec<EdgeKey>,
}

impl Label {
    fn cmp(&self, other: &Label) -> Ordering {
        self.cost
            .total_cmp(&other.cost)
            .then(self.path.len().cmp(&other.path.len()))
            .then_with(|| self.path.cmp(&other.path))
    }
}

fn adjacency<'a>(map: &'a TopologicalMap, excluded: &BTreeSet<EdgeKey>) -> BTreeMap<&'a NodeId, Vec<&'a Edge>> {
    let mut adj: BTreeMap<&NodeId, Vec<&Edge>> = BTreeMap::new();
    for e in map.edges() {
        if e.active && !excluded.contains(&e.key()) {
            adj.entry(&e.source).or_default().push(e);
        }
    }
    adj
}

/// Minimum-cost route over active edges. Ties prefer fewer hops, then the
/// lexicographically smaller sequence of edge keys.
pub fn plan_path(map: &TopologicalMap, start: &NodeId, goal: &NodeId) -> Result<Route, NavError> {
    plan_path_excluding(map, start, goal, &BTreeSet::new())
}

/// As [`plan_path`], treating the edges in `excluded` as inactive.
pub fn plan_path_excluding(
    map: &TopologicalMap,
    start: &NodeId,
    goal: &NodeId,
    excluded: &BTreeSet<EdgeKey>,
) -> Result<Route, NavError> {
    for id in [start, goal] {
        if !map.contains_node(id) {
            return Err(NavError::NotFound(id.clone()));
        }
    }
    let adj = adjacency(map, excluded);
    let mut best: BTreeMap<&NodeId, Label> = BTreeMap::new();
    let mut settled: BTreeSet<&NodeId> = BTreeSet::new();
    best.insert(start, Label { cost: 0.0, path: Vec::new() });
    loop {
        let next = best
            .iter()
            .filter(|(id, _)| !settled.contains(*id))
            .min_by(|a, b| a.1.cmp(b.1))
            .map(|(id, l)| (*id, l.clone()));
        let Some((node, label)) = next else {
            return Err(NavError::NoPath {
                start: start.clone(),
                goal: goal.clone(),
            });
        };
        if node == goal {
            return Ok(Route {
                start: start.clone(),
                goal: goal.clone(),
                hops: label.path,
                total_cost: label.cost,
            });
        }
        settled.insert(node);
        for e in adj.get(node).map(|v| v.as_slice()).unwrap_or(&[]) {
            if settled.contains(&e.target) {
                continue;
            }
            let mut path = label.path.clone();
            path.push(e.key());
            let candidate = Label {
                cost: label.cost + e.cost,
                path,
            };
            match best.get(&e.target) {
                Some(old) if old.cmp(&candidate) != Ordering::Greater => {}
                _ => {
                    best.insert(&e.target, candidate);
                }
            }
        }
    }
}

/// Sum of edge costs along `hops` in order.
pub fn route_cost(map: &TopologicalMap, hops: &[EdgeKey]) -> Option<f64> {
    hops.iter().try_fold(0.0, |acc, k| map.edge(k).map(|e| acc + e.cost))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NavigationPolicy {
    pub goal: NodeId,
    /// Next edge for every node other than the goal; `None` if the goal is
    /// unreachable from that node.
    pub next_hop: BTreeMap<NodeId, Option<EdgeKey>>,
    pub cost_to_goal: BTreeMap<NodeId, f64>,
}

pub fn compute_policy(map: &TopologicalMap, goal: &NodeId) -> Result<NavigationPolicy, NavError> {
    if !map.contains_node(goal) {
        return Err(NavError::NotFound(goal.clone()));
    }
    let mut next_hop = BTreeMap::new();
    let mut cost_to_goal = BTreeMap::new();
    cost_to_goal.insert(goal.clone(), 0.0);
    for node in map.nodes() {
        if &node.id == goal {
            continue;
        }
        match plan_path(map, &node.id, goal) {
            Ok(r) => {
                cost_to_goal.insert(node.id.clone(), r.total_cost);
                next_hop.insert(node.id.clone(), r.hops.first().cloned());
            }
            Err(NavError::NoPath { .. }) => {
                next_hop.insert(node.id.clone(), None);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(NavigationPolicy {
        goal: goal.clone(),
        next_hop,
        cost_to_goal,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraversalStatus {
    Succeeded,
    Blocked,
    Aborted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraversalOutcome {
    pub edge: EdgeKey,
    pub status: TraversalStatus,
    pub duration_s: f64,
    pub distance_m: f64,
}

/// One edge to traverse, with the endpoint positions the robot should use.
#[derive(Clone, Debug, PartialEq)]
pub struct Hop {
    pub edge: Edge,
    pub from: Point,
    pub to: Point,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatteryState {
    pub level: f64,
    pub docked: bool,
    pub charging: bool,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdapterError {
    #[error("adapter precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("dock failed: {0}")]
    DockFailed(String),
    #[error("scan unavailable")]
    ScanUnavailable,
    #[error("{0}")]
    Other(String),
}

/// What the core needs from a robot platform.
pub trait RobotAdapter: Send {
    fn now(&self) -> Timestamp;
    fn current_pose(&self) -> Pose;
    /// Synchronous; honours `cancel` by returning an aborted outcome.
    fn traverse(&mut self, hop: &Hop, cancel: &CancelToken) -> Result<TraversalOutcome, AdapterError>;
    fn execute(&mut self, spec: &ActionSpec, ctx: &ExecContext) -> ActionResult;
    fn battery(&self) -> BatteryState;
    fn dock(&mut self, map: &TopologicalMap) -> Result<(), AdapterError>;
    fn undock(&mut self) -> Result<(), AdapterError>;
    /// Let time pass with the robot standing still.
    fn idle_until(&mut self, t: Timestamp);
    /// Odometry and scans for pose tracking, when the platform has them.
    fn localization_source(&mut self) -> Option<&mut dyn crate::localization::LocalizationSource> {
        None
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum NavEvent {
    RoutePlanned {
        goal: NodeId,
        hops: Vec<EdgeKey>,
        total_cost: f64,
        map_version: u64,
    },
    HopStarted {
        edge: EdgeKey,
        map_version: u64,
    },
    HopFinished {
        outcome: TraversalOutcome,
        map_version: u64,
    },
    EdgeDeactivated {
        edge: EdgeKey,
        map_version: u64,
    },
    GoalReached {
        goal: NodeId,
        map_version: u64,
    },
    GoalFailed {
        goal: NodeId,
        reason: String,
        map_version: u64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Checkpoint {
    Continue,
    Cancel,
}

/// The navigator's view of the outside world between hops.
pub trait NavContext {
    /// Latest map snapshot. Called before every hop.
    fn map(&mut self) -> Arc<TopologicalMap>;
    /// Called before every hop. The adapter is lent so the context can
    /// sample battery and pose while the robot is between edges.
    fn checkpoint(&mut self, adapter: &mut dyn RobotAdapter) -> Checkpoint;
    fn emit(&mut self, event: NavEvent);
    fn cancel_token(&self) -> CancelToken;
}

/// A context over a fixed map that records emitted events.
pub struct FixedMapContext {
    pub map: Arc<TopologicalMap>,
    pub events: Vec<NavEvent>,
    pub cancel: CancelToken,
}

impl FixedMapContext {
    pub fn new(map: TopologicalMap) -> Self {
        Self {
            map: Arc::new(map),
            events: Vec::new(),
            cancel: CancelToken::new(),
        }
    }
}

impl NavContext for FixedMapContext {
    fn map(&mut self) -> Arc<TopologicalMap> {
        self.map.clone()
    }

    fn checkpoint(&mut self, _adapter: &mut dyn RobotAdapter) -> Checkpoint {
        if self.cancel.is_cancelled() {
            Checkpoint::Cancel
        } else {
            Checkpoint::Continue
        }
    }

    fn emit(&mut self, event: NavEvent) {
        self.events.push(event);
    }

    fn cancel_token(&self) -> CancelToken {
        self.cancel.clone()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NavFailure {
    NoPath,
    GoalRemoved,
    Cancelled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NavigationReport {
    pub goal: NodeId,
    pub reached: bool,
    pub failure: Option<NavFailure>,
    pub outcomes: Vec<TraversalOutcome>,
    /// Edges switched off in the route-local overlay, in blockage order.
    pub edges_deactivated: Vec<EdgeKey>,
    /// Map version used by each (re)plan, in order.
    pub map_versions: Vec<u64>,
}

impl NavigationReport {
    pub fn distance_m(&self) -> f64 {
        self.outcomes.iter().map(|o| o.distance_m).sum()
    }
}

fn localise(map: &TopologicalMap, pose: &Pose) -> Result<NodeId, NavError> {
    nearest_node(map, &pose.translation).map_err(|e| match e {
        MapError::EmptyMap => NavError::EmptyMap,
        other => NavError::Aborted {
            reason: other.to_string(),
            report: Box::default(),
        },
    })
}

impl Default for NavigationReport {
    fn default() -> Self {
        Self {
            goal: NodeId::new(""),
            reached: false,
            failure: None,
            outcomes: Vec::new(),
            edges_deactivated: Vec::new(),
            map_versions: Vec::new(),
        }
    }
}

/// Drive the robot to `goal`, replanning on the latest map before each hop
/// when its version has changed and around any edge reported blocked.
///
/// Blocked edges are excluded for the rest of this call only; the map itself
/// is never modified here.
pub fn navigate_to(
    ctx: &mut dyn NavContext,
    adapter: &mut dyn RobotAdapter,
    goal: &NodeId,
) -> Result<NavigationReport, NavError> {
    let mut map = ctx.map();
    if !map.contains_node(goal) {
        return Err(NavError::NotFound(goal.clone()));
    }
    let cancel = ctx.cancel_token();
    let mut current = localise(&map, &adapter.current_pose())?;
    let mut report = NavigationReport {
        goal: goal.clone(),
        ..NavigationReport::default()
    };
    let mut overlay: BTreeSet<EdgeKey> = BTreeSet::new();
    let mut route: Option<(Route, u64, usize)> = None;
    let mut replans = 0;

    let abort = |reason: String, report: &NavigationReport| NavError::Aborted {
        reason,
        report: Box::new(report.clone()),
    };

    loop {
        if &current == goal {
            report.reached = true;
            ctx.emit(NavEvent::GoalReached {
                goal: goal.clone(),
                map_version: map.version,
            });
            return Ok(report);
        }
        if ctx.checkpoint(adapter) == Checkpoint::Cancel {
            return Ok(fail(ctx, report, NavFailure::Cancelled, map.version));
        }
        map = ctx.map();
        if !map.contains_node(goal) {
            return Ok(fail(ctx, report, NavFailure::GoalRemoved, map.version));
        }
        if !map.contains_node(&current) {
            current = localise(&map, &adapter.current_pose())?;
            route = None;
            continue;
        }
        let stale = match &route {
            Some((_, v, _)) => *v != map.version,
            None => true,
        };
        if stale {
            match plan_path_excluding(&map, &current, goal, &overlay) {
                Ok(r) => {
                    report.map_versions.push(map.version);
                    ctx.emit(NavEvent::RoutePlanned {
                        goal: goal.clone(),
                        hops: r.hops.clone(),
                        total_cost: r.total_cost,
                        map_version: map.version,
                    });
                    route = Some((r, map.version, 0));
                }
                Err(NavError::NoPath { .. }) => {
                    return Ok(fail(ctx, report, NavFailure::NoPath, map.version));
                }
                Err(e) => return Err(e),
            }
        }
        let (r, _, idx) = route.as_ref().expect("planned above");
        let key = r.hops[*idx].clone();
        let edge = map.edge(&key).expect("route edges exist in the planning map").clone();
        let to = map.node(&edge.target).expect("endpoint exists").position;

        if adapter.battery().docked {
            adapter.undock().map_err(|e| abort(e.to_string(), &report))?;
        }
        ctx.emit(NavEvent::HopStarted {
            edge: key.clone(),
            map_version: map.version,
        });
        let hop = Hop {
            edge: edge.clone(),
            from: adapter.current_pose().translation,
            to,
        };
        let outcome = adapter
            .traverse(&hop, &cancel)
            .map_err(|e| abort(e.to_string(), &report))?;
        report.outcomes.push(outcome.clone());
        ctx.emit(NavEvent::HopFinished {
            outcome: outcome.clone(),
            map_version: map.version,
        });
        match outcome.status {
            TraversalStatus::Succeeded => {
                current = edge.target.clone();
                if let Some((_, _, idx)) = route.as_mut() {
                    *idx += 1;
                }
            }
            TraversalStatus::Blocked => {
                overlay.insert(key.clone());
                report.edges_deactivated.push(key.clone());
                ctx.emit(NavEvent::EdgeDeactivated {
                    edge: key,
                    map_version: map.version,
                });
                route = None;
                replans += 1;
                if replans > MAX_REPLANS {
                    return Err(abort(format!("gave up after {MAX_REPLANS} replans"), &report));
                }
            }
            TraversalStatus::Aborted if cancel.is_cancelled() => {
                return Ok(fail(ctx, report, NavFailure::Cancelled, map.version));
            }
            TraversalStatus::Aborted => {
                return Err(abort(format!("traversal of {} aborted by the platform", edge.key()), &report));
            }
        }
    }
}

fn fail(ctx: &mut dyn NavContext, mut report: NavigationReport, why: NavFailure, version: u64) -> NavigationReport {
    report.reached = false;
    report.failure = Some(why);
    ctx.emit(NavEvent::GoalFailed {
        goal: report.goal.clone(),
        reason: format!("{why:?}").to_lowercase(),
        map_version: version,
    });
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::{Node, NodeKind, TraversalAction};
    use nalgebra::Vector3;

    pub(crate) fn abc() -> TopologicalMap {
        let mut m = TopologicalMap::default();
        for (i, id) in ["A", "B", "C"].iter().enumerate() {
            m.insert_node(Node::new(*id, NodeKind::Waypoint, Vector3::new(i as f64, 0.0, 0.0))).unwrap();
        }
        let w = TraversalAction::Walk;
        m.insert_edge(&"A".into(), &"B".into(), w.clone(), Some(1.0)).unwrap();
        m.insert_edge(&"B".into(), &"C".into(), w.clone(), Some(1.0)).unwrap();
        m.insert_edge(&"A".into(), &"C".into(), w, Some(3.0)).unwrap();
        m
    }

    #[test]
    fn identity_route() {
        let r = plan_path(&abc(), &"A".into(), &"A".into()).unwrap();
        assert!(r.hops.is_empty());
        assert_eq!(r.total_cost, 0.0);
    }

    #[test]
    fn cheaper_two_hop_route_wins() {
        let r = plan_path(&abc(), &"A".into(), &"C".into()).unwrap();
        assert_eq!(r.hops, vec![EdgeKey::walk("A", "B"), EdgeKey::walk("B", "C")]);
        assert_eq!(r.total_cost, 2.0);
    }

    #[test]
    fn inactive_edge_is_skipped() {
        let mut m = abc();
        m = crate::map::apply_edit(
            &m,
            &crate::map::MapEdit::SetEdgeActive {
                key: EdgeKey::walk("B", "C"),
                active: false,
            },
        )
        .unwrap()
        .map;
        let r = plan_path(&m, &"A".into(), &"C".into()).unwrap();
        assert_eq!(r.hops, vec![EdgeKey::walk("A", "C")]);
        assert_eq!(r.total_cost, 3.0);
    }

    #[test]
    fn tie_prefers_fewer_hops() {
        let mut m = abc();
        m = crate::map::apply_edit(
            &m,
            &crate::map::MapEdit::SetEdgeCost {
                key: EdgeKey::walk("A", "C"),
                cost: 2.0,
            },
        )
        .unwrap()
        .map;
        assert_eq!(plan_path(&m, &"A".into(), &"C".into()).unwrap().hops, vec![EdgeKey::walk("A", "C")]);
    }

    #[test]
    fn plan_errors() {
        let m = abc();
        assert_eq!(plan_path(&m, &"A".into(), &"Z".into()), Err(NavError::NotFound("Z".into())));
        assert!(matches!(plan_path(&m, &"C".into(), &"A".into()), Err(NavError::NoPath { .. })));
    }

    #[test]
    fn policy_examples() {
        let mut m = abc();
        m.insert_node(Node::new("D", NodeKind::Waypoint, Vector3::new(5.0, 5.0, 0.0))).unwrap();
        let p = compute_policy(&m, &"C".into()).unwrap();
        assert_eq!(p.next_hop[&NodeId::from("A")], Some(EdgeKey::walk("A", "B")));
        assert_eq!(p.next_hop[&NodeId::from("B")], Some(EdgeKey::walk("B", "C")));
        assert_eq!(p.next_hop[&NodeId::from("D")], None);
        assert!(!p.next_hop.contains_key(&NodeId::from("C")));

        let mut single = TopologicalMap::default();
        single.insert_node(Node::new("A", NodeKind::Dock, Vector3::zeros())).unwrap();
        assert!(compute_policy(&single, &"A".into()).unwrap().next_hop.is_empty());
    }
}
