//! Deterministic simulated robot: straight-line motion along edges, a
//! battery with idle drain and dock charging, scripted faults and synthetic
//! scans of a static prior map plus time-windowed box objects.

use std::io::Write;
use std::path::PathBuf;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use ronda_perception::{Point, PointCloud, Pose};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::actions::{ActionResult, ActionSpec, ActionStatus, CancelToken, ExecContext, Params};
use crate::map::{vec3, EdgeKey, NodeKind, TopologicalMap, TraversalAction};
use crate::nav::{AdapterError, BatteryState, Hop, RobotAdapter, TraversalOutcome, TraversalStatus};
use crate::time::{as_hours, as_seconds, seconds, Clock, SimClock, Timestamp};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    pub speed_mps: f64,
    pub drain_per_m: f64,
    pub drain_per_idle_hour: f64,
    pub charge_per_hour: f64,
    /// Duration multiplier for stairs and door edges.
    pub slow_edge_multiplier: f64,
    pub dock_radius_m: f64,
    pub sensor_radius_m: f64,
    pub scan_noise_sigma_m: f64,
    /// Odometry over-reports travelled distance by this fraction.
    pub odometry_scale_error: f64,
    /// Sampled object surface points per square metre.
    pub object_point_density: f64,
    pub seed: u64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            speed_mps: 1.0,
            drain_per_m: 0.001,
            drain_per_idle_hour: 0.02,
            charge_per_hour: 0.5,
            slow_edge_multiplier: 2.0,
            dock_radius_m: 0.5,
            sensor_radius_m: 15.0,
            scan_noise_sigma_m: 0.005,
            odometry_scale_error: 0.0,
            object_point_density: 400.0,
            seed: 0,
        }
    }
}

/// Half-open interval `[from, until)`; missing ends are unbounded.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interval {
    #[serde(default)]
    pub from: Option<Timestamp>,
    #[serde(default)]
    pub until: Option<Timestamp>,
}

impl Interval {
    pub fn always() -> Self {
        Self::default()
    }

    pub fn between(from: Timestamp, until: Timestamp) -> Self {
        Self {
            from: Some(from),
            until: Some(until),
        }
    }

    pub fn contains(&self, t: Timestamp) -> bool {
        self.from.map_or(true, |f| t >= f) && self.until.map_or(true, |u| t < u)
    }

    /// True when the interval meets the closed range `[a, b]`.
    pub fn overlaps(&self, a: Timestamp, b: Timestamp) -> bool {
        self.from.map_or(true, |f| b >= f) && self.until.map_or(true, |u| a < u)
    }

    pub fn is_well_ordered(&self) -> bool {
        match (self.from, self.until) {
            (Some(f), Some(u)) => f <= u,
            _ => true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldObject {
    pub id: String,
    #[serde(with = "vec3")]
    pub centre: Point,
    /// Full side lengths, metres.
    #[serde(with = "vec3")]
    pub extents: Point,
    #[serde(default, flatten)]
    pub present: Interval,
}

impl WorldObject {
    pub fn new(id: &str, centre: Point, extents: Point) -> Self {
        Self {
            id: id.into(),
            centre,
            extents,
            present: Interval::always(),
        }
    }

    pub fn contains(&self, p: &Point) -> bool {
        let h = self.extents / 2.0;
        (0..3).all(|i| (p[i] - self.centre[i]).abs() <= h[i] + 1e-9)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Fault {
    /// Edges from `source` to `target` cannot be traversed during `during`.
    /// Without `action` every edge between the pair is blocked.
    EdgeBlocked {
        source: String,
        target: String,
        #[serde(default)]
        action: Option<TraversalAction>,
        #[serde(default, flatten)]
        during: Interval,
    },
    ScanDropout {
        #[serde(default, flatten)]
        during: Interval,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FaultScript(pub Vec<Fault>);

impl FaultScript {
    pub fn block(&mut self, edge: &EdgeKey, during: Interval) {
        self.0.push(Fault::EdgeBlocked {
            source: edge.source.0.clone(),
            target: edge.target.0.clone(),
            action: Some(edge.action.clone()),
            during,
        });
    }

    pub fn dropout(&mut self, during: Interval) {
        self.0.push(Fault::ScanDropout { during });
    }

    pub fn is_blocked(&self, edge: &EdgeKey, a: Timestamp, b: Timestamp) -> bool {
        self.0.iter().any(|f| match f {
            Fault::EdgeBlocked {
                source,
                target,
                action,
                during,
            } => {
                source == edge.source.as_str()
                    && target == edge.target.as_str()
                    && action.as_ref().map_or(true, |act| act == &edge.action)
                    && during.overlaps(a, b)
            }
            Fault::ScanDropout { .. } => false,
        })
    }

    pub fn scan_dropped(&self, t: Timestamp) -> bool {
        self.0
            .iter()
            .any(|f| matches!(f, Fault::ScanDropout { during } if during.contains(t)))
    }

    pub fn is_well_ordered(&self) -> bool {
        self.0.iter().all(|f| match f {
            Fault::EdgeBlocked { during, .. } | Fault::ScanDropout { during } => during.is_well_ordered(),
        })
    }
}

#[derive(Clone, Debug, Default)]
pub struct SimWorld {
    pub prior_map: PointCloud,
    pub objects: Vec<WorldObject>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cause", rename_all = "snake_case")]
pub enum BatteryCause {
    Idle { hours: f64 },
    Charge { hours: f64 },
    Motion { distance_m: f64 },
    /// Level overwritten by a test or scenario script.
    Set,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimEventKind {
    Battery { from: f64, to: f64, detail: BatteryCause },
    Traverse { edge: EdgeKey, status: TraversalStatus, duration_s: f64, distance_m: f64 },
    Docked,
    Undocked,
    Action { name: String, status: ActionStatus, duration_s: f64 },
    ScanUnavailable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub time: Timestamp,
    #[serde(flatten)]
    pub kind: SimEventKind,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Segment {
    t0: Timestamp,
    t1: Timestamp,
    from: Pose,
    to: Pose,
}

pub struct SimRobot {
    clock: SimClock,
    params: SimParams,
    world: SimWorld,
    faults: FaultScript,
    pose: Pose,
    initial_pose: Pose,
    battery: f64,
    docked: bool,
    last_update: Timestamp,
    segments: Vec<Segment>,
    log: Vec<SimEvent>,
    rng: ChaCha8Rng,
    artifact_seq: u64,
    fallback_artifacts: PathBuf,
}

fn lerp_pose(a: &Pose, b: &Pose, f: f64) -> Pose {
    Pose::new(a.translation + (b.translation - a.translation) * f, a.rotation.slerp(&b.rotation, f))
}

impl SimRobot {
    pub fn new(clock: SimClock, world: SimWorld, params: SimParams, start: Pose) -> Self {
        let now = clock.now();
        Self {
            rng: ChaCha8Rng::seed_from_u64(params.seed),
            clock,
            params,
            world,
            faults: FaultScript::default(),
            pose: start,
            initial_pose: start,
            battery: 1.0,
            docked: false,
            last_update: now,
            segments: Vec::new(),
            log: Vec::new(),
            artifact_seq: 0,
            fallback_artifacts: std::env::temp_dir().join("ronda-sim-artifacts"),
        }
    }

    /// Robot standing at `position` with an empty world.
    pub fn at(clock: SimClock, position: Point) -> Self {
        Self::new(
            clock,
            SimWorld::default(),
            SimParams::default(),
            Pose::new(position, Default::default()),
        )
    }

    pub fn clock(&self) -> &SimClock {
        &self.clock
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn faults_mut(&mut self) -> &mut FaultScript {
        &mut self.faults
    }

    pub fn world(&self) -> &SimWorld {
        &self.world
    }

    pub fn world_mut(&mut self) -> &mut SimWorld {
        &mut self.world
    }

    pub fn log(&self) -> &[SimEvent] {
        &self.log
    }

    pub fn pose(&self) -> Pose {
        self.pose
    }

    pub fn set_battery(&mut self, level: f64) {
        self.settle();
        let from = self.battery;
        self.battery = level.clamp(0.0, 1.0);
        self.push(SimEventKind::Battery {
            from,
            to: self.battery,
            detail: BatteryCause::Set,
        });
    }

    /// Place the robot docked at `position` without moving through space.
    pub fn place_docked(&mut self, position: Point) {
        self.settle();
        self.pose = Pose::new(position, self.pose.rotation);
        self.docked = true;
    }

    fn project(&self, now: Timestamp) -> (f64, Option<BatteryCause>) {
        let dt = now - self.last_update;
        if dt <= chrono::Duration::zero() {
            return (self.battery, None);
        }
        let hours = as_hours(dt);
        if self.docked {
            let to = (self.battery + self.params.charge_per_hour * hours).min(1.0);
            (to, Some(BatteryCause::Charge { hours }))
        } else {
            let to = (self.battery - self.params.drain_per_idle_hour * hours).max(0.0);
            (to, Some(BatteryCause::Idle { hours }))
        }
    }

    /// Bring the battery up to the clock's current time.
    fn settle(&mut self) {
        let now = self.clock.now();
        let (to, cause) = self.project(now);
        let Some(cause) = cause else { return };
        let from = self.battery;
        self.battery = to;
        self.last_update = now;
        // contiguous idle or charge spans are merged so long idle stretches
        // do not grow the log
        if let Some(SimEvent {
            kind: SimEventKind::Battery { to: last_to, detail, .. },
            ..
        }) = self.log.last_mut()
        {
            if *last_to == from {
                match (detail, cause) {
                    (BatteryCause::Idle { hours: h }, BatteryCause::Idle { hours })
                    | (BatteryCause::Charge { hours: h }, BatteryCause::Charge { hours }) => {
                        *h += hours;
                        *last_to = to;
                        return;
                    }
                    _ => {}
                }
            }
        }
        self.push(SimEventKind::Battery { from, to, detail: cause });
    }

    fn push(&mut self, kind: SimEventKind) {
        self.log.push(SimEvent {
            time: self.clock.now(),
            kind,
        });
    }

    fn drain_motion(&mut self, distance_m: f64) {
        if distance_m <= 0.0 {
            return;
        }
        let from = self.battery;
        self.battery = (from - self.params.drain_per_m * distance_m).max(0.0);
        self.push(SimEventKind::Battery {
            from,
            to: self.battery,
            detail: BatteryCause::Motion { distance_m },
        });
    }

    /// Advance simulated time to `t` in steps, stopping early when `cancel`
    /// trips. Returns the time reached.
    fn wait_until(&mut self, t: Timestamp, cancel: Option<&CancelToken>) -> Timestamp {
        let paced = self.clock.rate().is_some();
        if !paced {
            if cancel.map_or(false, |c| c.is_cancelled()) {
                return self.clock.now();
            }
            self.clock.advance_to(t);
            return t;
        }
        let step = seconds(self.clock.rate().unwrap() * 0.02).max(chrono::Duration::milliseconds(1));
        loop {
            let now = self.clock.now();
            if now >= t || cancel.map_or(false, |c| c.is_cancelled()) {
                return now;
            }
            self.clock.sleep_until((now + step).min(t));
        }
    }

    /// Ground-truth pose at simulated time `t` (not after the present).
    pub fn pose_at(&self, t: Timestamp) -> Pose {
        let mut pose = self.initial_pose;
        for s in &self.segments {
            if t < s.t0 {
                break;
            }
            if t < s.t1 {
                let f = as_seconds(t - s.t0) / as_seconds(s.t1 - s.t0);
                return lerp_pose(&s.from, &s.to, f);
            }
            pose = s.to;
        }
        if self.segments.is_empty() {
            self.pose
        } else {
            pose
        }
    }

    /// Pose reported by odometry at `t`: the true motion since the start
    /// with translations scaled by `1 + odometry_scale_error`.
    pub fn odometry_at(&self, t: Timestamp) -> Pose {
        let mut rel = self.initial_pose.inverse().compose(&self.pose_at(t));
        rel.translation *= 1.0 + self.params.odometry_scale_error;
        self.initial_pose.compose(&rel)
    }

    fn object_surface(&self, index: usize) -> Vec<Point> {
        let obj = &self.world.objects[index];
        let mut rng = ChaCha8Rng::seed_from_u64(self.params.seed ^ (0x9e37_79b9 + index as u64));
        let e = obj.extents;
        let faces = [(e.y * e.z, 0), (e.x * e.z, 1), (e.x * e.y, 2)];
        let mut pts = Vec::new();
        for (area, axis) in faces {
            let n = ((area * self.params.object_point_density).ceil() as usize).max(4);
            for side in [-0.5, 0.5] {
                for _ in 0..n {
                    let mut p = Vector3::new(
                        rng.gen_range(-0.5..=0.5),
                        rng.gen_range(-0.5..=0.5),
                        rng.gen_range(-0.5..=0.5),
                    );
                    p[axis] = side;
                    pts.push(obj.centre + p.component_mul(&e));
                }
            }
        }
        pts
    }

    /// Global-frame scan from `pose` at time `t`.
    pub fn scan_from(&mut self, pose: &Pose, t: Timestamp) -> Result<PointCloud, AdapterError> {
        if self.faults.scan_dropped(t) {
            self.push(SimEventKind::ScanUnavailable);
            return Err(AdapterError::ScanUnavailable);
        }
        let r2 = self.params.sensor_radius_m.powi(2);
        let origin = pose.translation;
        let mut pts: Vec<Point> = self
            .world
            .prior_map
            .points
            .iter()
            .filter(|p| (*p - origin).norm_squared() <= r2)
            .copied()
            .collect();
        for i in 0..self.world.objects.len() {
            if self.world.objects[i].present.contains(t) {
                pts.extend(self.object_surface(i).into_iter().filter(|p| (p - origin).norm_squared() <= r2));
            }
        }
        let sigma = self.params.scan_noise_sigma_m;
        if sigma > 0.0 {
            let noise = Normal::new(0.0, sigma).expect("sigma is positive");
            for p in &mut pts {
                *p += Vector3::new(
                    noise.sample(&mut self.rng),
                    noise.sample(&mut self.rng),
                    noise.sample(&mut self.rng),
                );
            }
        }
        Ok(PointCloud::new(pts))
    }

    /// Global-frame scan from the current pose.
    pub fn scan(&mut self) -> Result<PointCloud, AdapterError> {
        let (pose, now) = (self.pose, self.clock.now());
        self.scan_from(&pose, now)
    }

    /// Scan at time `t` expressed in the robot's own frame.
    pub fn sensor_scan_at(&mut self, t: Timestamp) -> Result<PointCloud, AdapterError> {
        let pose = self.pose_at(t);
        let global = self.scan_from(&pose, t)?;
        let local = global.transformed(&pose.inverse());
        Ok(PointCloud::with_frame(local.points, "base"))
    }

    fn artifact_dir(&self, ctx: &ExecContext) -> PathBuf {
        ctx.artifact_dir.clone().unwrap_or_else(|| self.fallback_artifacts.clone())
    }

    fn write_artifact(&mut self, ctx: &ExecContext, stem: &str, ext: &str, body: &[u8]) -> Result<PathBuf, String> {
        let dir = self.artifact_dir(ctx);
        std::fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        self.artifact_seq += 1;
        let path = dir.join(format!("{stem}_{:04}.{ext}", self.artifact_seq));
        let mut f = std::fs::File::create(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        f.write_all(body).map_err(|e| e.to_string())?;
        Ok(path)
    }

    fn run_action(&mut self, spec: &ActionSpec, ctx: &ExecContext) -> ActionResult {
        let p = &spec.parameters;
        let num = |k: &str, d: f64| p.get(k).and_then(|v| v.as_f64()).unwrap_or(d);
        let busy_s = match spec.name.as_str() {
            "capture_image" => 2.0,
            "read_temp_humidity" => 1.0,
            "record_radiation" => num("duration_s", 60.0).max(0.0),
            _ => 0.0,
        };
        let start = self.clock.now();
        let target = start + seconds(busy_s);
        let reached = self.wait_until(target.min(ctx.deadline), Some(&ctx.cancel));
        self.settle();
        let elapsed = as_seconds(reached - start);
        if reached < target {
            return if ctx.cancel.is_cancelled() {
                ActionResult::with_status(ActionStatus::Cancelled, elapsed, "cancelled")
            } else {
                ActionResult::with_status(ActionStatus::TimedOut, elapsed, "timed out")
            };
        }

        let mut out = Params::new();
        match spec.name.as_str() {
            "noop" => {}
            "capture_image" => {
                let camera = p.get("camera").and_then(|v| v.as_str()).unwrap_or("ptz").to_string();
                let (pan, tilt, zoom) = (num("pan", 0.0), num("tilt", 0.0), num("zoom", 1.0));
                let mut body = format!("P2\n# camera {camera} pan {pan} tilt {tilt} zoom {zoom}\n8 8\n255\n");
                for _ in 0..8 {
                    let row: Vec<String> = (0..8).map(|_| self.rng.gen_range(0..256u32).to_string()).collect();
                    body.push_str(&row.join(" "));
                    body.push('\n');
                }
                match self.write_artifact(ctx, "image", "pgm", body.as_bytes()) {
                    Ok(path) => {
                        out.insert("path".into(), json!(path.to_string_lossy()));
                        out.insert("camera".into(), json!(camera));
                        out.insert("pan".into(), json!(pan));
                        out.insert("tilt".into(), json!(tilt));
                        out.insert("zoom".into(), json!(zoom));
                    }
                    Err(e) => return ActionResult::failed(elapsed, e),
                }
            }
            "read_temp_humidity" => {
                let t: f64 = Normal::new(21.0, 2.0).unwrap().sample(&mut self.rng);
                let h: f64 = Normal::new(45.0, 8.0).unwrap().sample(&mut self.rng);
                out.insert("temperature_c".into(), json!(t.clamp(-20.0, 60.0)));
                out.insert("humidity_pct".into(), json!(h.clamp(0.0, 100.0)));
            }
            "record_radiation" => {
                let duration = num("duration_s", 60.0);
                let spectrum: Vec<u32> = (0..32).map(|_| self.rng.gen_range(0..(duration as u32 / 4 + 2))).collect();
                let counts: u32 = spectrum.iter().sum();
                let csv: String = spectrum.iter().enumerate().map(|(i, c)| format!("{i},{c}\n")).collect();
                match self.write_artifact(ctx, "spectrum", "csv", csv.as_bytes()) {
                    Ok(path) => {
                        out.insert("path".into(), json!(path.to_string_lossy()));
                        out.insert("duration_s".into(), json!(duration));
                        out.insert("counts".into(), json!(counts));
                        out.insert("dose_rate_usv_h".into(), json!(0.08 + self.rng.gen_range(0.0..0.04)));
                    }
                    Err(e) => return ActionResult::failed(elapsed, e),
                }
            }
            "dock" => {
                let result = match &ctx.map {
                    Some(map) => self.dock(&map.clone()),
                    None => Err(AdapterError::DockFailed("no map available".into())),
                };
                if let Err(e) = result {
                    return ActionResult::failed(elapsed, e.to_string());
                }
                out.insert("docked".into(), json!(true));
            }
            other => return ActionResult::failed(elapsed, format!("robot has no action {other}")),
        }
        ActionResult::succeeded(out, elapsed)
    }
}

impl RobotAdapter for SimRobot {
    fn now(&self) -> Timestamp {
        self.clock.now()
    }

    fn current_pose(&self) -> Pose {
        self.pose
    }

    fn traverse(&mut self, hop: &Hop, cancel: &CancelToken) -> Result<TraversalOutcome, AdapterError> {
        self.settle();
        if self.docked {
            return Err(AdapterError::PreconditionViolated("robot is docked".into()));
        }
        let gap = (self.pose.translation - hop.from).norm();
        if gap > 1e-6 {
            return Err(AdapterError::PreconditionViolated(format!(
                "robot is {gap:.3} m from the start of {}",
                hop.edge.key()
            )));
        }
        let key = hop.edge.key();
        let length = (hop.to - hop.from).norm();
        let multiplier = match hop.edge.action {
            TraversalAction::Stairs | TraversalAction::Door => self.params.slow_edge_multiplier,
            _ => 1.0,
        };
        let duration = seconds(length / self.params.speed_mps * multiplier);
        let t0 = self.clock.now();
        let t1 = t0 + duration;

        let outcome = |status, duration_s, distance_m| TraversalOutcome {
            edge: key.clone(),
            status,
            duration_s,
            distance_m,
        };

        if cancel.is_cancelled() {
            return Ok(outcome(TraversalStatus::Aborted, 0.0, 0.0));
        }

        let result = if self.faults.is_blocked(&key, t0, t1) {
            // the platform keeps trying for the nominal duration, then gives up
            self.wait_until(t1, None);
            self.settle();
            outcome(TraversalStatus::Blocked, as_seconds(duration), 0.0)
        } else {
            let d = hop.to - hop.from;
            let yaw = if d.xy().norm() > 1e-9 { d.y.atan2(d.x) } else { self.pose.yaw() };
            let start = self.pose;
            let end = Pose::planar(hop.to.x, hop.to.y, hop.to.z, yaw);
            let reached = self.wait_until(t1, Some(cancel));
            if reached >= t1 {
                self.segments.push(Segment { t0, t1, from: start, to: end });
                self.pose = end;
                self.last_update = t1;
                self.drain_motion(length);
                outcome(TraversalStatus::Succeeded, as_seconds(duration), length)
            } else {
                // cancelled part way: walk back to the source node
                let f = as_seconds(reached - t0) / as_seconds(duration).max(1e-12);
                let turn = lerp_pose(&start, &end, f);
                let back = reached + (reached - t0);
                self.segments.push(Segment { t0, t1: reached, from: start, to: turn });
                self.segments.push(Segment {
                    t0: reached,
                    t1: back,
                    from: turn,
                    to: start,
                });
                self.clock.advance_to(back);
                self.last_update = back;
                self.drain_motion(2.0 * f * length);
                outcome(TraversalStatus::Aborted, as_seconds(back - t0), 2.0 * f * length)
            }
        };
        self.push(SimEventKind::Traverse {
            edge: key,
            status: result.status,
            duration_s: result.duration_s,
            distance_m: result.distance_m,
        });
        Ok(result)
    }

    fn execute(&mut self, spec: &ActionSpec, ctx: &ExecContext) -> ActionResult {
        self.settle();
        let r = self.run_action(spec, ctx);
        self.push(SimEventKind::Action {
            name: spec.name.clone(),
            status: r.status,
            duration_s: r.duration_s,
        });
        r
    }

    fn battery(&self) -> BatteryState {
        let (level, _) = self.project(self.clock.now());
        BatteryState {
            level,
            docked: self.docked,
            charging: self.docked && level < 1.0,
        }
    }

    fn dock(&mut self, map: &TopologicalMap) -> Result<(), AdapterError> {
        self.settle();
        if self.docked {
            return Ok(());
        }
        let here = self.pose.translation;
        let near = map
            .nodes()
            .filter(|n| n.kind == NodeKind::Dock)
            .any(|n| (n.position - here).norm() <= self.params.dock_radius_m);
        if !near {
            return Err(AdapterError::DockFailed(format!(
                "no dock within {} m of ({:.2}, {:.2}, {:.2})",
                self.params.dock_radius_m, here.x, here.y, here.z
            )));
        }
        self.docked = true;
        self.push(SimEventKind::Docked);
        Ok(())
    }

    fn undock(&mut self) -> Result<(), AdapterError> {
        self.settle();
        if self.docked {
            self.docked = false;
            self.push(SimEventKind::Undocked);
        }
        Ok(())
    }

    fn idle_until(&mut self, t: Timestamp) {
        self.wait_until(t, None);
        self.settle();
    }

    fn localization_source(&mut self) -> Option<&mut dyn crate::localization::LocalizationSource> {
        Some(self)
    }
}
