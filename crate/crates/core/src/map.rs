//! Topological map: positioned nodes joined by directed, costed edges that
//! can be switched off without being deleted.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::Vector3;
use ronda_perception::Point;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("empty input")]
    EmptyInput,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("map has no nodes")]
    EmptyMap,
    #[error("not found: {0}")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("invalid edit: {0}")]
    InvalidEdit(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("map violates invariants: {}", .0.join("; "))]
    Validation(Vec<String>),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn new(s: impl Into<String>) -> Self {
        NodeId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Waypoint,
    Inspection,
    Dock,
}

/// Behaviour used to move along an edge. Serialised as a bare string; any
/// name other than the three built-ins is a custom action.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TraversalAction {
    Walk,
    Stairs,
    Door,
    Custom(String),
}

impl TraversalAction {
    pub fn as_str(&self) -> &str {
        match self {
            TraversalAction::Walk => "walk",
            TraversalAction::Stairs => "stairs",
            TraversalAction::Door => "door",
            TraversalAction::Custom(name) => name,
        }
    }

    pub fn parse(s: &str) -> Self {
        match s {
            "walk" => TraversalAction::Walk,
            "stairs" => TraversalAction::Stairs,
            "door" => TraversalAction::Door,
            other => TraversalAction::Custom(other.to_string()),
        }
    }
}

impl fmt::Display for TraversalAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for TraversalAction {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for TraversalAction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s.is_empty() {
            return Err(serde::de::Error::custom("traversal action must be non-empty"));
        }
        Ok(TraversalAction::parse(&s))
    }
}

pub(crate) mod vec3 {
    use super::*;

    pub fn serialize<S: Serializer>(p: &Point, s: S) -> Result<S::Ok, S::Error> {
        [p.x, p.y, p.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Point, D::Error> {
        let [x, y, z] = <[f64; 3]>::deserialize(d)?;
        Ok(Vector3::new(x, y, z))
    }
}

// Field order is alphabetical so the serialised document has sorted keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    pub name: String,
    #[serde(with = "vec3")]
    pub position: Point,
}

impl Node {
    pub fn new(id: impl Into<String>, kind: NodeKind, position: Point) -> Self {
        let id = id.into();
        Self {
            name: id.clone(),
            id: NodeId(id),
            kind,
            position,
        }
    }
}

/// Identifies an edge: at most one edge per (source, target, action).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeKey {
    pub source: NodeId,
    pub target: NodeId,
    pub action: TraversalAction,
}

impl EdgeKey {
    pub fn new(source: impl Into<String>, target: impl Into<String>, action: TraversalAction) -> Self {
        Self {
            source: NodeId(source.into()),
            target: NodeId(target.into()),
            action,
        }
    }

    pub fn walk(source: &str, target: &str) -> Self {
        Self::new(source, target, TraversalAction::Walk)
    }
}

impl fmt::Display for EdgeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}[{}]", self.source, self.target, self.action)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub action: TraversalAction,
    pub active: bool,
    pub cost: f64,
    pub source: NodeId,
    pub target: NodeId,
}

impl Edge {
    pub fn key(&self) -> EdgeKey {
        EdgeKey {
            source: self.source.clone(),
            target: self.target.clone(),
            action: self.action.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "MapDocument", try_from = "MapDocument")]
pub struct TopologicalMap {
    pub frame_id: String,
    pub version: u64,
    nodes: BTreeMap<NodeId, Node>,
    edges: BTreeMap<EdgeKey, Edge>,
}

impl Default for TopologicalMap {
    fn default() -> Self {
        Self::new("map")
    }
}

impl TopologicalMap {
    pub fn new(frame_id: impl Into<String>) -> Self {
        Self {
            frame_id: frame_id.into(),
            version: 0,
            nodes: BTreeMap::new(),
            edges: BTreeMap::new(),
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    /// Edges in key order.
    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.values()
    }

    pub fn node(&self, id: &NodeId) -> Option<&Node> {
        self.nodes.get(id)
    }

    pub fn edge(&self, key: &EdgeKey) -> Option<&Edge> {
        self.edges.get(key)
    }

    pub fn contains_node(&self, id: &NodeId) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Outgoing edges of `id` in key order, active or not.
    pub fn outgoing<'a>(&'a self, id: &'a NodeId) -> impl Iterator<Item = &'a Edge> + 'a {
        self.edges.values().filter(move |e| &e.source == id)
    }

    pub fn distance(&self, a: &NodeId, b: &NodeId) -> Option<f64> {
        Some((self.nodes.get(a)?.position - self.nodes.get(b)?.position).norm())
    }

    /// Equality ignoring the version counter.
    pub fn same_content(&self, other: &TopologicalMap) -> bool {
        self.frame_id == other.frame_id && self.nodes == other.nodes && self.edges == other.edges
    }

    /// Insert without bumping the version; used by constructors and loaders.
    pub fn insert_node(&mut self, node: Node) -> Result<(), MapError> {
        check_node(&node).map_err(MapError::InvalidInput)?;
        if self.nodes.contains_key(&node.id) {
            return Err(MapError::Conflict(format!("node {} already exists", node.id)));
        }
        self.nodes.insert(node.id.clone(), node);
        Ok(())
    }

    /// Insert without bumping the version. `cost: None` means Euclidean length.
    pub fn insert_edge(
        &mut self,
        source: &NodeId,
        target: &NodeId,
        action: TraversalAction,
        cost: Option<f64>,
    ) -> Result<EdgeKey, MapError> {
        let edge = self.make_edge(source, target, action, cost, true)?;
        let key = edge.key();
        if self.edges.contains_key(&key) {
            return Err(MapError::Conflict(format!("edge {key} already exists")));
        }
        self.edges.insert(key.clone(), edge);
        Ok(key)
    }

    /// Two mirrored edges with the same action and cost.
    pub fn insert_edge_pair(
        &mut self,
        a: &NodeId,
        b: &NodeId,
        action: TraversalAction,
        cost: Option<f64>,
    ) -> Result<(), MapError> {
        self.insert_edge(a, b, action.clone(), cost)?;
        self.insert_edge(b, a, action, cost)?;
        Ok(())
    }

    fn make_edge(
        &self,
        source: &NodeId,
        target: &NodeId,
        action: TraversalAction,
        cost: Option<f64>,
        active: bool,
    ) -> Result<Edge, MapError> {
        if source == target {
            return Err(MapError::InvalidEdit(format!("self-loop on {source}")));
        }
        let dist = self
            .distance(source, target)
            .ok_or_else(|| MapError::InvalidEdit(format!("edge {source}->{target} has a missing endpoint")))?;
        let cost = cost.unwrap_or(dist);
        if !(cost >= 0.0 && cost.is_finite()) {
            return Err(MapError::InvalidEdit(format!("edge cost {cost} must be finite and non-negative")));
        }
        Ok(Edge {
            action,
            active,
            cost,
            source: source.clone(),
            target: target.clone(),
        })
    }

    /// All invariant violations, empty when the map is valid.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (id, node) in &self.nodes {
            if id != &node.id {
                out.push(format!("node key {id} does not match id {}", node.id));
            }
            if let Err(e) = check_node(node) {
                out.push(e);
            }
        }
        for (key, e) in &self.edges {
            if key != &e.key() {
                out.push(format!("edge key {key} does not match edge"));
            }
            if e.source == e.target {
                out.push(format!("edge {key} is a self-loop"));
            }
            for end in [&e.source, &e.target] {
                if !self.nodes.contains_key(end) {
                    out.push(format!("edge {key} references missing node {end}"));
                }
            }
            if !(e.cost >= 0.0 && e.cost.is_finite()) {
                out.push(format!("edge {key} has invalid cost {}", e.cost));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), MapError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(MapError::Validation(v))
        }
    }

    pub fn dock_nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values().filter(|n| n.kind == NodeKind::Dock)
    }
}

fn check_node(node: &Node) -> Result<(), String> {
    if node.id.0.is_empty() {
        return Err("node id must be non-empty".into());
    }
    if node.name.trim().is_empty() {
        return Err(format!("node {} has an empty name", node.id));
    }
    let p = node.position;
    if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
        return Err(format!("node {} has a non-finite position", node.id));
    }
    Ok(())
}

/// One node per pose (named `n0`, `n1`, …) with a bidirectional walk pair
/// between consecutive poses and between any two poses closer than
/// `link_threshold`.
pub fn build_from_pose_graph(poses: &[Point], link_threshold: f64) -> Result<TopologicalMap, MapError> {
    if poses.is_empty() {
        return Err(MapError::EmptyInput);
    }
    if !(link_threshold > 0.0 && link_threshold.is_finite()) {
        return Err(MapError::InvalidInput("link threshold must be positive".into()));
    }
    if let Some(i) = poses.iter().position(|p| !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite())) {
        return Err(MapError::InvalidInput(format!("pose {i} is not finite")));
    }
    let mut map = TopologicalMap::default();
    let ids: Vec<NodeId> = (0..poses.len()).map(|i| NodeId(format!("n{i}"))).collect();
    for (id, p) in ids.iter().zip(poses) {
        map.insert_node(Node::new(id.0.clone(), NodeKind::Waypoint, *p))?;
    }
    let mut linked = BTreeSet::new();
    for i in 0..poses.len() {
        for j in i + 1..poses.len() {
            if j == i + 1 || (poses[i] - poses[j]).norm() < link_threshold {
                linked.insert((i, j));
            }
        }
    }
    for (i, j) in linked {
        map.insert_edge_pair(&ids[i], &ids[j], TraversalAction::Walk, None)?;
    }
    Ok(map)
}

/// Closest node to `position`; ties go to the lexicographically smallest id.
pub fn nearest_node(map: &TopologicalMap, position: &Point) -> Result<NodeId, MapError> {
    map.nodes
        .values()
        .map(|n| ((n.position - position).norm(), &n.id))
        .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)))
        .map(|(_, id)| id.clone())
        .ok_or(MapError::EmptyMap)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum MapEdit {
    AddNode {
        node: Node,
    },
    RemoveNode {
        id: NodeId,
    },
    MoveNode {
        id: NodeId,
        #[serde(with = "vec3")]
        position: Point,
    },
    RenameNode {
        id: NodeId,
        name: String,
    },
    AddEdge {
        source: NodeId,
        target: NodeId,
        action: TraversalAction,
        /// Defaults to the Euclidean distance between the endpoints.
        #[serde(default)]
        cost: Option<f64>,
        #[serde(default = "default_true")]
        active: bool,
    },
    RemoveEdge {
        key: EdgeKey,
    },
    SetEdgeActive {
        key: EdgeKey,
        active: bool,
    },
    SetEdgeCost {
        key: EdgeKey,
        cost: f64,
    },
}

fn default_true() -> bool {
    true
}

impl MapEdit {
    pub fn add_edge(source: &str, target: &str, action: TraversalAction, cost: Option<f64>) -> Self {
        MapEdit::AddEdge {
            source: NodeId::from(source),
            target: NodeId::from(target),
            action,
            cost,
            active: true,
        }
    }

    /// Editor convenience: the two mirrored edges of a bidirectional link.
    pub fn bidirectional(a: &str, b: &str, action: TraversalAction, cost: Option<f64>) -> [MapEdit; 2] {
        [
            MapEdit::add_edge(a, b, action.clone(), cost),
            MapEdit::add_edge(b, a, action, cost),
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            MapEdit::AddNode { .. } => "add_node",
            MapEdit::RemoveNode { .. } => "remove_node",
            MapEdit::MoveNode { .. } => "move_node",
            MapEdit::RenameNode { .. } => "rename_node",
            MapEdit::AddEdge { .. } => "add_edge",
            MapEdit::RemoveEdge { .. } => "remove_edge",
            MapEdit::SetEdgeActive { .. } => "set_edge_active",
            MapEdit::SetEdgeCost { .. } => "set_edge_cost",
        }
    }
}

/// Result of a successful edit: the new map and the edits that undo it.
#[derive(Clone, Debug)]
pub struct AppliedEdit {
    pub map: TopologicalMap,
    pub undo: Vec<MapEdit>,
}

/// Apply `edit` to a copy of `map`. The version counter increases by one.
///
/// `move_node` also refreshes incident edge costs that still equal the
/// Euclidean length they had before the move; explicit overrides are kept.
pub fn apply_edit(map: &TopologicalMap, edit: &MapEdit) -> Result<AppliedEdit, MapError> {
    let mut m = map.clone();
    let undo = match edit {
        MapEdit::AddNode { node } => {
            if m.nodes.contains_key(&node.id) {
                return Err(MapError::Conflict(format!("node {} already exists", node.id)));
            }
            check_node(node).map_err(MapError::InvalidEdit)?;
            m.nodes.insert(node.id.clone(), node.clone());
            vec![MapEdit::RemoveNode { id: node.id.clone() }]
        }
        MapEdit::RemoveNode { id } => {
            let node = m.nodes.remove(id).ok_or_else(|| MapError::NotFound(format!("node {id}")))?;
            let incident: Vec<EdgeKey> = m
                .edges
                .keys()
                .filter(|k| &k.source == id || &k.target == id)
                .cloned()
                .collect();
            let mut undo = vec![MapEdit::AddNode { node }];
            for k in incident {
                let e = m.edges.remove(&k).expect("key listed above");
                undo.push(MapEdit::AddEdge {
                    source: e.source,
                    target: e.target,
                    action: e.action,
                    cost: Some(e.cost),
                    active: e.active,
                });
            }
            undo
        }
        MapEdit::MoveNode { id, position } => {
            if !(position.x.is_finite() && position.y.is_finite() && position.z.is_finite()) {
                return Err(MapError::InvalidEdit("position must be finite".into()));
            }
            let old = m.nodes.get(id).ok_or_else(|| MapError::NotFound(format!("node {id}")))?.position;
            let mut undo = vec![MapEdit::MoveNode {
                id: id.clone(),
                position: old,
            }];
            let positions: BTreeMap<NodeId, Point> = m.nodes.iter().map(|(k, n)| (k.clone(), n.position)).collect();
            for e in m.edges.values_mut().filter(|e| &e.source == id || &e.target == id) {
                let other = if &e.source == id { &e.target } else { &e.source };
                let before = (positions[other] - old).norm();
                if (e.cost - before).abs() <= 1e-9 {
                    undo.push(MapEdit::SetEdgeCost {
                        key: e.key(),
                        cost: e.cost,
                    });
                    e.cost = (positions[other] - position).norm();
                }
            }
            m.nodes.get_mut(id).unwrap().position = *position;
            // position first, then the exact prior costs
            undo
        }
        MapEdit::RenameNode { id, name } => {
            if name.trim().is_empty() {
                return Err(MapError::InvalidEdit("name must be non-empty".into()));
            }
            let node = m.nodes.get_mut(id).ok_or_else(|| MapError::NotFound(format!("node {id}")))?;
            let old = std::mem::replace(&mut node.name, name.clone());
            vec![MapEdit::RenameNode { id: id.clone(), name: old }]
        }
        MapEdit::AddEdge {
            source,
            target,
            action,
            cost,
            active,
        } => {
            let edge = m.make_edge(source, target, action.clone(), *cost, *active)?;
            let key = edge.key();
            if m.edges.contains_key(&key) {
                return Err(MapError::Conflict(format!("edge {key} already exists")));
            }
            m.edges.insert(key.clone(), edge);
            vec![MapEdit::RemoveEdge { key }]
        }
        MapEdit::RemoveEdge { key } => {
            let e = m.edges.remove(key).ok_or_else(|| MapError::NotFound(format!("edge {key}")))?;
            vec![MapEdit::AddEdge {
                source: e.source,
                target: e.target,
                action: e.action,
                cost: Some(e.cost),
                active: e.active,
            }]
        }
        MapEdit::SetEdgeActive { key, active } => {
            let e = m.edges.get_mut(key).ok_or_else(|| MapError::NotFound(format!("edge {key}")))?;
            let old = std::mem::replace(&mut e.active, *active);
            vec![MapEdit::SetEdgeActive {
                key: key.clone(),
                active: old,
            }]
        }
        MapEdit::SetEdgeCost { key, cost } => {
            if !(*cost >= 0.0 && cost.is_finite()) {
                return Err(MapError::InvalidEdit(format!("edge cost {cost} must be finite and non-negative")));
            }
            let e = m.edges.get_mut(key).ok_or_else(|| MapError::NotFound(format!("edge {key}")))?;
            let old = std::mem::replace(&mut e.cost, *cost);
            vec![MapEdit::SetEdgeCost {
                key: key.clone(),
                cost: old,
            }]
        }
    };
    m.version += 1;
    debug_assert!(m.violations().is_empty(), "{:?}", m.violations());
    Ok(AppliedEdit { map: m, undo })
}

/// Apply a list of undo edits in order.
pub fn apply_all(map: &TopologicalMap, edits: &[MapEdit]) -> Result<TopologicalMap, MapError> {
    edits
        .iter()
        .try_fold(map.clone(), |m, e| apply_edit(&m, e).map(|a| a.map))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapDocument {
    edges: Vec<Edge>,
    frame_id: String,
    nodes: Vec<Node>,
    version: u64,
}

impl From<TopologicalMap> for MapDocument {
    fn from(map: TopologicalMap) -> Self {
        MapDocument {
            edges: map.edges.into_values().collect(),
            frame_id: map.frame_id,
            nodes: map.nodes.into_values().collect(),
            version: map.version,
        }
    }
}

impl TryFrom<MapDocument> for TopologicalMap {
    type Error = MapError;

    fn try_from(doc: MapDocument) -> Result<Self, MapError> {
        let mut violations = Vec::new();
        let mut map = TopologicalMap::new(doc.frame_id);
        map.version = doc.version;
        for node in doc.nodes {
            if let Err(e) = check_node(&node) {
                violations.push(e);
            }
            if map.nodes.insert(node.id.clone(), node.clone()).is_some() {
                violations.push(format!("duplicate node id {}", node.id));
            }
        }
        for edge in doc.edges {
            let key = edge.key();
            if map.edges.insert(key.clone(), edge).is_some() {
                violations.push(format!("duplicate edge {key}"));
            }
        }
        violations.extend(map.violations());
        if violations.is_empty() {
            Ok(map)
        } else {
            violations.dedup();
            Err(MapError::Validation(violations))
        }
    }
}

/// Canonical JSON document: sorted keys, nodes by id, edges by key.
pub fn save_map(map: &TopologicalMap) -> String {
    serde_json::to_string_pretty(&MapDocument::from(map.clone())).expect("map serialises")
}

pub fn load_map(document: &str) -> Result<TopologicalMap, MapError> {
    let doc: MapDocument = serde_json::from_str(document).map_err(|e| MapError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    TopologicalMap::try_from(doc)
}
