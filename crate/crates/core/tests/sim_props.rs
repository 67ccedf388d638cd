use chrono::{Duration, TimeZone, Utc};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ronda_core::nav::FixedMapContext;
use ronda_core::scenario::site_map;
use ronda_core::sim::BatteryCause;
use ronda_core::{
    navigate_to, ActionSpec, CancelToken, ExecContext, Localizer, LocalizerEvent, LocalizerParams, NodeId,
    RobotAdapter, SimClock, SimEventKind, SimParams, SimRobot, SimWorld, Timestamp,
};
use ronda_perception::{Point, PointCloud, Pose};
use serde_json::json;

fn t0() -> Timestamp {
    Utc.with_ymd_and_hms(2024, 6, 3, 8, 0, 0).unwrap()
}

/// Walks a fixed tour of the site, taking readings at each stop.
fn scripted_run(seed: u64, dir: &std::path::Path) -> (SimRobot, Vec<serde_json::Value>) {
    let params = SimParams {
        seed,
        ..SimParams::default()
    };
    let mut robot = SimRobot::new(SimClock::new(t0()), SimWorld::default(), params, Pose::identity());
    let mut ctx = FixedMapContext::new(site_map());
    let mut payloads = Vec::new();
    for goal in ["w3", "ip1", "dock2", "ip5", "hall"] {
        let report = navigate_to(&mut ctx, &mut robot, &NodeId::from(goal)).unwrap();
        assert!(report.reached, "{goal}");
        for spec in [
            ActionSpec::new("read_temp_humidity"),
            ActionSpec::new("capture_image").with_param("camera", json!("ptz")),
        ] {
            let mut ec = ExecContext::new(robot.now(), 30.0, CancelToken::new());
            ec.artifact_dir = Some(dir.to_path_buf());
            let mut r = robot.execute(&spec, &ec);
            r.payload.remove("path");
            payloads.push(serde_json::to_value(&r).unwrap());
        }
    }
    (robot, payloads)
}

#[test]
fn same_seed_same_run() {
    let (a_dir, b_dir) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (a, pa) = scripted_run(7, a_dir.path());
    let (b, pb) = scripted_run(7, b_dir.path());
    assert_eq!(serde_json::to_value(a.log()).unwrap(), serde_json::to_value(b.log()).unwrap());
    assert_eq!(pa, pb);
    let image = |d: &std::path::Path| {
        let mut files: Vec<_> = std::fs::read_dir(d).unwrap().map(|e| e.unwrap().path()).collect();
        files.sort();
        files.iter().map(|f| std::fs::read(f).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(image(a_dir.path()), image(b_dir.path()));
    let (_, pc) = scripted_run(8, tempfile::tempdir().unwrap().path());
    assert_ne!(pa, pc, "a different seed gives different readings");
}

#[test]
fn battery_log_accounts_for_every_change() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let map = site_map();
    let stops = ["hall", "w1", "w2", "w3", "w4", "ip3", "dock2", "dock"];
    let params = SimParams::default();
    let mut robot = SimRobot::new(SimClock::new(t0()), SimWorld::default(), params.clone(), Pose::identity());
    let mut ctx = FixedMapContext::new(map.clone());
    let start_level = robot.battery().level;
    for _ in 0..60 {
        match rng.gen_range(0..4) {
            0 | 1 => {
                robot.undock().unwrap();
                let goal = stops[rng.gen_range(0..stops.len())];
                navigate_to(&mut ctx, &mut robot, &NodeId::from(goal)).unwrap();
            }
            2 => {
                let until = robot.now() + Duration::minutes(rng.gen_range(1..300));
                robot.idle_until(until);
            }
            _ => {
                let _ = robot.dock(&map);
            }
        }
    }
    robot.idle_until(robot.now() + Duration::seconds(1));
    let mut level = start_level;
    let mut moved = 0.0;
    for e in robot.log() {
        if let SimEventKind::Battery { from, to, detail } = &e.kind {
            assert_eq!(*from, level, "chain broken at {}", e.time);
            assert!((0.0..=1.0).contains(to));
            match detail {
                BatteryCause::Motion { distance_m } => {
                    moved += distance_m;
                    if *to > 0.0 {
                        assert!((from - to - params.drain_per_m * distance_m).abs() < 1e-12);
                    }
                }
                BatteryCause::Idle { hours } => {
                    assert!(to <= from);
                    assert!(*to == 0.0 || (from - to - params.drain_per_idle_hour * hours).abs() < 1e-9);
                }
                BatteryCause::Charge { hours } => {
                    assert!(to >= from);
                    assert!(*to == 1.0 || (to - from - params.charge_per_hour * hours).abs() < 1e-9);
                }
                BatteryCause::Set => {}
            }
            level = *to;
        }
    }
    assert_eq!(level, robot.battery().level);
    let walked: f64 = robot
        .log()
        .iter()
        .filter_map(|e| match &e.kind {
            SimEventKind::Traverse { distance_m, .. } => Some(*distance_m),
            _ => None,
        })
        .sum();
    assert!(moved > 0.0 && (moved - walked).abs() < 1e-9);
}

#[test]
fn pose_is_continuous_along_a_route() {
    let (robot, _) = scripted_run(3, tempfile::tempdir().unwrap().path());
    let speed = robot.params().speed_mps;
    let step = 0.05;
    let mut t = t0();
    let mut last = robot.pose_at(t);
    while t < robot.now() {
        t += Duration::milliseconds(50);
        let p = robot.pose_at(t);
        let jump = (p.translation - last.translation).norm();
        assert!(jump <= speed * step + 1e-9, "jump of {jump} m at {t}");
        last = p;
    }
    assert!((robot.pose_at(robot.now()).translation - robot.current_pose().translation).norm() < 1e-9);
}

#[test]
fn cancelled_traverse_leaves_robot_at_source() {
    let mut robot = SimRobot::at(SimClock::new(t0()), Vector3::zeros());
    let mut ctx = FixedMapContext::new(site_map());
    ctx.cancel.cancel();
    let report = navigate_to(&mut ctx, &mut robot, &NodeId::from("w2")).unwrap();
    assert!(!report.reached);
    assert_eq!(robot.current_pose().translation, Vector3::zeros());
}

/// Floor, four walls and two pillars: enough structure to pin all six
/// degrees of freedom.
fn room() -> PointCloud {
    let mut pts: Vec<Point> = Vec::new();
    let s = 0.1;
    for i in 0..=80 {
        for j in 0..=60 {
            pts.push(Vector3::new(i as f64 * s, j as f64 * s, 0.0));
        }
    }
    for k in 0..=25 {
        let z = k as f64 * s;
        for i in 0..=80 {
            pts.push(Vector3::new(i as f64 * s, 0.0, z));
            pts.push(Vector3::new(i as f64 * s, 6.0, z));
        }
        for j in 0..=60 {
            pts.push(Vector3::new(0.0, j as f64 * s, z));
            pts.push(Vector3::new(8.0, j as f64 * s, z));
        }
        for (cx, cy) in [(3.0, 1.5), (5.5, 4.0)] {
            for a in 0..24 {
                let th = a as f64 * std::f64::consts::TAU / 24.0;
                pts.push(Vector3::new(cx + 0.3 * th.cos(), cy + 0.3 * th.sin(), z));
            }
        }
    }
    PointCloud::new(pts)
}

#[test]
fn localizer_tracks_a_one_metre_walk() {
    let params = SimParams {
        speed_mps: 0.5,
        odometry_scale_error: 0.05,
        sensor_radius_m: 20.0,
        seed: 5,
        ..SimParams::default()
    };
    let start = Pose::planar(2.0, 3.0, 0.0, 0.0);
    let world = SimWorld {
        prior_map: room(),
        objects: Vec::new(),
    };
    let mut robot = SimRobot::new(SimClock::new(t0()), world, params, start);
    let hop = ronda_core::Hop {
        edge: ronda_core::Edge {
            action: ronda_core::TraversalAction::Walk,
            active: true,
            cost: 1.0,
            source: NodeId::from("a"),
            target: NodeId::from("b"),
        },
        from: Vector3::new(2.0, 3.0, 0.0),
        to: Vector3::new(3.0, 3.0, 0.0),
    };
    robot.traverse(&hop, &CancelToken::new()).unwrap();
    assert_eq!(robot.now(), t0() + Duration::seconds(2));
    let odometry = robot.odometry_at(t0());
    let mut loc = Localizer::new(&room(), LocalizerParams::default(), start, odometry, t0());
    let events = loc.track(&mut robot, t0() + Duration::seconds(2));
    let mut updates = 0;
    for e in &events {
        match e {
            LocalizerEvent::Update { state } => {
                updates += 1;
                let truth = robot.pose_at(state.last_update);
                let err = (state.pose.translation - truth.translation).norm();
                assert!(err < 0.02, "error {err} m at {}", state.last_update);
                assert!(!state.degraded);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
    assert_eq!(updates, 4);
    // odometry alone would be 5 cm out by now
    let drift = (robot.odometry_at(robot.now()).translation - robot.current_pose().translation).norm();
    assert!(drift > 0.04);
}
