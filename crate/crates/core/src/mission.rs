//! Missions, their execution records, and travel-cost task reordering.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::{ActionResult, ActionSpec};
use crate::map::{NodeId, TopologicalMap};
use crate::nav::{plan_path, NavError};
use crate::time::Timestamp;

/// Above this many tasks the reordering switches from exact to heuristic.
pub const EXACT_TSP_LIMIT: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MissionError {
    #[error("tasks unreachable from {start}: {}", .nodes.join(", "))]
    UnreachableTask { start: NodeId, nodes: Vec<String> },
    #[error("node {0} not found")]
    NotFound(NodeId),
    #[error("invalid mission: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Task {
    pub node: NodeId,
    #[serde(default)]
    pub label: String,
    pub action: ActionSpec,
}

impl Task {
    pub fn new(node: &str, action: ActionSpec) -> Self {
        Self {
            node: NodeId::from(node),
            label: String::new(),
            action,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailurePolicy {
    #[default]
    ContinueRemaining,
    Abort,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mission {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub failure_policy: FailurePolicy,
    #[serde(default)]
    pub tasks: Vec<Task>,
}

impl Mission {
    pub fn new(id: &str, name: &str, tasks: Vec<Task>) -> Self {
        Self {
            id: id.into(),
            name: name.into(),
            failure_policy: FailurePolicy::ContinueRemaining,
            tasks,
        }
    }

    pub fn validate(&self) -> Result<(), MissionError> {
        if self.id.trim().is_empty() {
            return Err(MissionError::Invalid("mission id must be non-empty".into()));
        }
        if self.id.contains(['/', '\\']) || self.id.starts_with('.') {
            return Err(MissionError::Invalid(format!("mission id {:?} is not a plain name", self.id)));
        }
        for (i, t) in self.tasks.iter().enumerate() {
            if t.node.as_str().is_empty() {
                return Err(MissionError::Invalid(format!("task {i} has no node")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Pending,
    Navigating,
    Executing,
    Succeeded,
    Failed,
    Skipped,
}

impl TaskStatus {
    /// Position in the allowed progression; terminal states share a rank.
    pub fn rank(self) -> u8 {
        match self {
            TaskStatus::Pending => 0,
            TaskStatus::Navigating => 1,
            TaskStatus::Executing => 2,
            TaskStatus::Succeeded | TaskStatus::Failed | TaskStatus::Skipped => 3,
        }
    }

    pub fn is_terminal(self) -> bool {
        self.rank() == 3
    }

    /// Whether moving from `self` to `next` respects the progression.
    pub fn can_become(self, next: TaskStatus) -> bool {
        !self.is_terminal() && next.rank() > self.rank()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissionOutcome {
    Completed,
    Partial,
    Aborted,
    Preempted,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trigger {
    Operator,
    Schedule { schedule_id: String },
    Monitor { monitor: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub node: NodeId,
    pub label: String,
    pub action: String,
    pub status: TaskStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<ActionResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissionRecord {
    pub run_id: u64,
    pub mission_id: String,
    pub trigger: Trigger,
    pub started: Timestamp,
    pub ended: Option<Timestamp>,
    pub tasks: Vec<TaskRecord>,
    pub distance_walked: f64,
    pub outcome: Option<MissionOutcome>,
}

impl MissionRecord {
    pub fn start(run_id: u64, mission: &Mission, trigger: Trigger, now: Timestamp) -> Self {
        Self {
            run_id,
            mission_id: mission.id.clone(),
            trigger,
            started: now,
            ended: None,
            tasks: mission
                .tasks
                .iter()
                .map(|t| TaskRecord {
                    node: t.node.clone(),
                    label: t.label.clone(),
                    action: t.action.name.clone(),
                    status: TaskStatus::Pending,
                    detail: None,
                    result: None,
                })
                .collect(),
            distance_walked: 0.0,
            outcome: None,
        }
    }

    pub fn is_finished(&self) -> bool {
        self.outcome.is_some()
    }
}

/// Pairwise travel costs; `f64::INFINITY` where no path exists.
/// Index 0 is the start node, index `i + 1` the node of task `i`.
pub fn travel_costs(map: &TopologicalMap, start: &NodeId, tasks: &[Task]) -> Result<Vec<Vec<f64>>, MissionError> {
    let mut nodes = vec![start.clone()];
    nodes.extend(tasks.iter().map(|t| t.node.clone()));
    let n = nodes.len();
    let mut c = vec![vec![f64::INFINITY; n]; n];
    let mut memo: std::collections::BTreeMap<(&NodeId, &NodeId), f64> = Default::default();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                c[i][j] = 0.0;
                continue;
            }
            let key = (&nodes[i], &nodes[j]);
            let cost = match memo.get(&key) {
                Some(v) => *v,
                None => {
                    let v = match plan_path(map, &nodes[i], &nodes[j]) {
                        Ok(r) => r.total_cost,
                        Err(NavError::NoPath { .. }) => f64::INFINITY,
                        Err(NavError::NotFound(id)) => return Err(MissionError::NotFound(id)),
                        Err(e) => return Err(MissionError::Invalid(e.to_string())),
                    };
                    memo.insert(key, v);
                    v
                }
            };
            c[i][j] = cost;
        }
    }
    Ok(c)
}

/// Cost of visiting tasks in `order` (indices into the task list) starting
/// from the start node, summed left to right. No return leg.
pub fn order_cost(costs: &[Vec<f64>], order: &[usize]) -> f64 {
    let mut total = 0.0;
    let mut at = 0;
    for &t in order {
        total += costs[at][t + 1];
        at = t + 1;
    }
    total
}

/// Held-Karp over subsets. Ties go to the smaller predecessor index, so the
/// result is deterministic.
fn held_karp(costs: &[Vec<f64>], n: usize) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let full = 1usize << n;
    let mut dp = vec![f64::INFINITY; full * n];
    let mut parent = vec![usize::MAX; full * n];
    for j in 0..n {
        dp[(1 << j) * n + j] = costs[0][j + 1];
    }
    for mask in 1..full {
        for j in 0..n {
            if mask & (1 << j) == 0 {
                continue;
            }
            let here = dp[mask * n + j];
            if here == f64::INFINITY {
                continue;
            }
            for k in 0..n {
                if mask & (1 << k) != 0 {
                    continue;
                }
                let next = mask | (1 << k);
                let cand = here + costs[j + 1][k + 1];
                let slot = next * n + k;
                if cand < dp[slot] || (cand == dp[slot] && j < parent[slot]) {
                    dp[slot] = cand;
                    parent[slot] = j;
                }
            }
        }
    }
    let last_mask = full - 1;
    let mut end = 0;
    for j in 1..n {
        if dp[last_mask * n + j] < dp[last_mask * n + end] {
            end = j;
        }
    }
    let mut order = Vec::with_capacity(n);
    let (mut mask, mut j) = (last_mask, end);
    loop {
        order.push(j);
        let p = parent[mask * n + j];
        mask &= !(1 << j);
        if p == usize::MAX {
            break;
        }
        j = p;
    }
    order.reverse();
    order
}

/// Greedy tour: always go to the cheapest unvisited task (smallest index on ties).
pub fn nearest_neighbour_order(costs: &[Vec<f64>], n: usize) -> Vec<usize> {
    let mut left: Vec<usize> = (0..n).collect();
    let mut order = Vec::with_capacity(n);
    let mut at = 0;
    while !left.is_empty() {
        let (pos, _) = left
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |best, (p, &t)| {
                let c = costs[at][t + 1];
                if c < best.1 {
                    (p, c)
                } else {
                    best
                }
            });
        let t = left.remove(pos);
        order.push(t);
        at = t + 1;
    }
    order
}

/// Segment reversal until no move strictly improves the open path.
fn two_opt(costs: &[Vec<f64>], mut order: Vec<usize>) -> Vec<usize> {
    let n = order.len();
    let mut best = order_cost(costs, &order);
    let mut improved = true;
    while improved {
        improved = false;
        for i in 0..n {
            for j in i + 1..n {
                order[i..=j].reverse();
                let c = order_cost(costs, &order);
                if c < best {
                    best = c;
                    improved = true;
                } else {
                    order[i..=j].reverse();
                }
            }
        }
    }
    order
}

/// Order of task indices with minimal open-path travel cost from `start`.
/// The input order is kept unless another order is strictly cheaper.
pub fn tsp_order(costs: &[Vec<f64>], n: usize) -> Vec<usize> {
    let identity: Vec<usize> = (0..n).collect();
    if n <= 1 {
        return identity;
    }
    let candidate = if n <= EXACT_TSP_LIMIT {
        held_karp(costs, n)
    } else {
        two_opt(costs, nearest_neighbour_order(costs, n))
    };
    if order_cost(costs, &candidate) < order_cost(costs, &identity) {
        candidate
    } else {
        identity
    }
}

/// Copy of `mission` with tasks reordered to minimise travel from `start`.
pub fn reorder_tsp(mission: &Mission, start: &NodeId, map: &TopologicalMap) -> Result<Mission, MissionError> {
    let costs = travel_costs(map, start, &mission.tasks)?;
    let mut unreachable: Vec<String> = mission
        .tasks
        .iter()
        .enumerate()
        .filter(|(i, _)| costs[0][i + 1].is_infinite())
        .map(|(_, t)| t.node.0.clone())
        .collect();
    unreachable.dedup();
    if !unreachable.is_empty() {
        return Err(MissionError::UnreachableTask {
            start: start.clone(),
            nodes: unreachable,
        });
    }
    let order = tsp_order(&costs, mission.tasks.len());
    let mut out = mission.clone();
    out.tasks = order.iter().map(|&i| mission.tasks[i].clone()).collect();
    Ok(out)
}
