//! Simulated world description, read from YAML (JSON also parses).
//!
//! ```yaml
//! map: site.json            # topological map used when the store has none
//! prior_map: prior.pcd      # static geometry the sensor sees
//! start: { node: dock }
//! battery: 0.8
//! params: { speed_mps: 0.8, seed: 3 }
//! objects:
//!   - { id: crate, centre: [4, 2, 0.5], extents: [1, 1, 1], from: 2024-05-01T09:00:00Z }
//! faults:
//!   - { kind: edge_blocked, source: w1, target: w2, from: 2024-05-01T10:00:00Z }
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use ronda_core::{
    load_map, FaultScript, NodeKind, SimClock, SimParams, SimRobot, SimWorld, Timestamp, TopologicalMap, WorldObject,
};
use ronda_perception::{pcd, PointCloud, Pose};
use serde::{Deserialize, Serialize};

use crate::OpsError;

/// Exactly one of the two.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Start {
    pub node: Option<String>,
    pub position: Option<[f64; 3]>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldFile {
    pub map: Option<PathBuf>,
    pub prior_map: Option<PathBuf>,
    pub start: Option<Start>,
    /// Defaults to true when starting on a dock node.
    pub docked: Option<bool>,
    pub battery: Option<f64>,
    pub start_time: Option<Timestamp>,
    pub params: SimParams,
    pub objects: Vec<WorldObject>,
    pub faults: FaultScript,
}

/// A world file with its referenced files read in.
#[derive(Clone, Debug, Default)]
pub struct World {
    pub file: WorldFile,
    pub map: Option<TopologicalMap>,
    pub prior: PointCloud,
}

impl World {
    pub fn parse(text: &str, base: &Path) -> Result<Self, String> {
        let file: WorldFile = serde_yaml::from_str(text).map_err(|e| e.to_string())?;
        if !file.faults.is_well_ordered() {
            return Err("a fault interval ends before it starts".into());
        }
        if let Some(s) = &file.start {
            if s.node.is_some() == s.position.is_some() {
                return Err("start needs exactly one of node or position".into());
            }
        }
        if let Some(b) = file.battery {
            if !(0.0..=1.0).contains(&b) {
                return Err(format!("battery must lie in [0, 1], got {b}"));
            }
        }
        let resolve = |p: &PathBuf| if p.is_relative() { base.join(p) } else { p.clone() };
        let map = match &file.map {
            Some(p) => {
                let path = resolve(p);
                let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
                Some(load_map(&text).map_err(|e| format!("{}: {e}", path.display()))?)
            }
            None => None,
        };
        let prior = match &file.prior_map {
            Some(p) => pcd::read(&resolve(p)).map_err(|e| e.to_string())?,
            None => PointCloud::default(),
        };
        Ok(Self { file, map, prior })
    }

    pub fn load(path: &Path) -> Result<Self, OpsError> {
        let text = fs::read_to_string(path).map_err(|e| OpsError::file(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| OpsError::file(path, e))
    }

    /// Builds the robot on `map`. `seed` overrides the file's.
    pub fn robot(&self, clock: SimClock, map: &TopologicalMap, seed: Option<u64>) -> Result<SimRobot, String> {
        let mut params = self.file.params.clone();
        if let Some(s) = seed {
            params.seed = s;
        }
        let start = self.file.start.as_ref();
        let (position, on_dock) = match (start.and_then(|s| s.node.as_ref()), start.and_then(|s| s.position)) {
            (Some(id), _) => {
                let node = map
                    .node(&id.as_str().into())
                    .ok_or_else(|| format!("start node {id} is not on the map"))?;
                (node.position, node.kind == NodeKind::Dock)
            }
            (None, Some(p)) => (Vector3::new(p[0], p[1], p[2]), false),
            (None, None) => match map.nodes().find(|n| n.kind == NodeKind::Dock).or_else(|| map.nodes().next()) {
                Some(n) => (n.position, n.kind == NodeKind::Dock),
                None => (Vector3::zeros(), false),
            },
        };
        let world = SimWorld {
            prior_map: self.prior.clone(),
            objects: self.file.objects.clone(),
        };
        let mut robot = SimRobot::new(clock, world, params, Pose::new(position, Default::default()));
        *robot.faults_mut() = self.file.faults.clone();
        if self.file.docked.unwrap_or(on_dock) {
            robot.place_docked(position);
        }
        if let Some(b) = self.file.battery {
            robot.set_battery(b);
        }
        Ok(robot)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ronda_core::scenario::site_map;
    use ronda_core::{Clock, Fault, RobotAdapter};

    #[test]
    fn yaml_world_parses() {
        let text = "
start: { node: ip1 }
battery: 0.5
params: { speed_mps: 0.5, seed: 9 }
objects:
  - { id: box, centre: [1, 2, 0.5], extents: [1, 1, 1], from: '2024-05-01T09:00:00Z' }
faults:
  - { kind: edge_blocked, source: w1, target: w2 }
  - { kind: scan_dropout, from: '2024-05-01T09:00:00Z', until: '2024-05-01T09:05:00Z' }
";
        let w = World::parse(text, Path::new(".")).unwrap();
        assert_eq!(w.file.params.seed, 9);
        assert!(w.file.objects[0].present.from.is_some());
        assert!(matches!(w.file.faults.0[0], Fault::EdgeBlocked { .. }));
        let map = site_map();
        let clock = SimClock::new(chrono::Utc::now());
        let robot = w.robot(clock.clone(), &map, Some(4)).unwrap();
        assert_eq!(robot.params().seed, 4);
        assert_eq!(robot.battery().level, 0.5);
        let ip1 = map.node(&"ip1".into()).unwrap().position;
        assert_eq!(robot.current_pose().translation, ip1);
        assert!(clock.now() <= chrono::Utc::now());
    }

    #[test]
    fn default_start_is_a_dock() {
        let w = World::parse("{}", Path::new(".")).unwrap();
        let robot = w.robot(SimClock::new(chrono::Utc::now()), &site_map(), None).unwrap();
        assert!(robot.battery().docked);
    }

    #[test]
    fn bad_worlds_are_rejected() {
        assert!(World::parse("gravity: 3", Path::new(".")).is_err());
        assert!(World::parse("battery: 2.0", Path::new(".")).is_err());
        assert!(World::parse("start: {}", Path::new(".")).is_err());
        assert!(World::parse("map: nowhere.json", Path::new("/nonexistent")).is_err());
        let w = World::parse("start: { node: attic }", Path::new(".")).unwrap();
        assert!(w.robot(SimClock::new(chrono::Utc::now()), &site_map(), None).is_err());
    }
}
