use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command as Process, Output, Stdio};

use nalgebra::Vector3;
use ronda_core::scenario::site_map;
use ronda_core::{load_map, save_map, ActionSpec, Mission, Task};
use ronda_perception::{pcd, Point, PointCloud};
use serde_json::Value;

fn ronda(args: &[&str]) -> Output {
    Process::new(env!("CARGO_BIN_EXE_ronda"))
        .args(args)
        .env_remove("RONDA_DATA_DIR")
        .output()
        .unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn serve_without_config_is_a_usage_error() {
    let out = ronda(&["serve"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("Usage"), "{}", text(&out.stderr));
    let out = ronda(&["serve", "--config", "/nonexistent/ronda.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("Usage"));
}

#[test]
fn bad_config_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("ronda.toml");
    fs::write(&cfg, "time_scale = -1.0\n").unwrap();
    let out = ronda(&["serve", "--config", path(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("time_scale"), "{}", text(&out.stderr));
}

#[test]
fn empty_mission_runs_clean() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("empty.json");
    fs::write(&file, serde_json::to_string(&Mission::new("empty", "empty", vec![])).unwrap()).unwrap();
    let out = ronda(&["mission", "run", path(&file)]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("Completed"));
}

#[test]
fn mission_exit_code_follows_outcome() {
    let dir = tempfile::tempdir().unwrap();
    let map = dir.path().join("site.json");
    fs::write(&map, save_map(&site_map())).unwrap();
    let good = Mission::new(
        "tour",
        "tour",
        vec![
            Task::new("ip1", ActionSpec::new("read_temp_humidity")),
            Task::new("ip3", ActionSpec::new("capture_image").with_param("camera", "ptz".into())),
        ],
    );
    let file = dir.path().join("tour.json");
    fs::write(&file, serde_json::to_string(&good).unwrap()).unwrap();
    let out = ronda(&["mission", "run", path(&file), "--map", path(&map), "--seed", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}{}", text(&out.stdout), text(&out.stderr));

    let bad = Mission::new("lost", "lost", vec![Task::new("attic", ActionSpec::new("capture_image"))]);
    let file = dir.path().join("lost.yaml");
    fs::write(&file, serde_yaml::to_string(&bad).unwrap()).unwrap();
    let out = ronda(&["mission", "run", path(&file), "--map", path(&map)]);
    assert_eq!(out.status.code(), Some(1));

    // a scripted blockage with no way round fails the task
    let world = dir.path().join("world.yaml");
    fs::write(&world, "start: { node: dock }\nfaults:\n  - { kind: edge_blocked, source: ip5, target: w5 }\n  - { kind: edge_blocked, source: w5, target: ip5 }\n").unwrap();
    let far = Mission::new("far", "far", vec![Task::new("ip5", ActionSpec::new("capture_image").with_param("camera", "ptz".into()))]);
    let file = dir.path().join("far.json");
    fs::write(&file, serde_json::to_string(&far).unwrap()).unwrap();
    let ok = ronda(&["mission", "run", path(&file), "--map", path(&map)]);
    let blocked = ronda(&["mission", "run", path(&file), "--map", path(&map), "--sim", path(&world)]);
    assert_eq!(ok.status.code(), Some(0), "{}", text(&ok.stdout));
    assert_eq!(blocked.status.code(), Some(1), "{}", text(&blocked.stdout));

    let out = ronda(&["mission", "run", "/nonexistent.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("nonexistent.json"));
}

#[test]
fn replay_b1_prints_seventy() {
    let out = ronda(&["replay", "b1"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let s = text(&out.stdout);
    assert!(s.contains("scheduled executions: 70"), "{s}");
    assert!(s.contains("mtbi: 90.46 h"), "{s}");
}

#[test]
fn replay_jet_prints_mtbi() {
    let out = ronda(&["replay", "jet"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(text(&out.stdout).contains("mtbi: 140.00 h"), "{}", text(&out.stdout));
    assert_eq!(ronda(&["replay", "mars"]).status.code(), Some(2));
}

#[test]
fn posegraph_import_writes_a_map() {
    let dir = tempfile::tempdir().unwrap();
    let poses = dir.path().join("poses.txt");
    fs::write(&poses, "# x y z\n0 0 0\n1,0,0\n2 0\n\n2 1 0  # corner\n").unwrap();
    let out_map = dir.path().join("map.json");
    let out = ronda(&["map", "import-posegraph", path(&poses), "--threshold", "1.5", "--out", path(&out_map)]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let map = load_map(&fs::read_to_string(&out_map).unwrap()).unwrap();
    assert_eq!(map.node_count(), 4);
    assert!(map.edge(&ronda_core::EdgeKey::walk("n0", "n1")).is_some());
    // 1 and 3 are sqrt(2) apart, inside the threshold
    assert!(map.edge(&ronda_core::EdgeKey::walk("n1", "n3")).is_some());
    assert!(map.edge(&ronda_core::EdgeKey::walk("n0", "n3")).is_none());

    fs::write(&poses, "0 0 0\n1 two 0\n").unwrap();
    let out = ronda(&["map", "import-posegraph", path(&poses)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("line 2"));
}

fn floor_with(boxes: &[Point]) -> PointCloud {
    let mut pts = Vec::new();
    for i in 0..80 {
        for j in 0..80 {
            pts.push(Vector3::new(i as f64 * 0.05, j as f64 * 0.05, 0.0));
        }
    }
    for c in boxes {
        for i in 0..8 {
            for j in 0..8 {
                for k in 0..8 {
                    pts.push(c + Vector3::new(i as f64 * 0.05, j as f64 * 0.05, 0.05 + k as f64 * 0.05));
                }
            }
        }
    }
    PointCloud::new(pts)
}

#[test]
fn changedetect_writes_report_and_clusters() {
    let dir = tempfile::tempdir().unwrap();
    let before = dir.path().join("before.pcd");
    let after = dir.path().join("after.pcd");
    pcd::write(&before, &floor_with(&[Vector3::new(0.5, 0.5, 0.0)])).unwrap();
    pcd::write(&after, &floor_with(&[Vector3::new(2.5, 2.5, 0.0)])).unwrap();
    let out_dir = dir.path().join("report");
    let out = ronda(&[
        "changedetect",
        "--before",
        path(&before),
        "--after",
        path(&after),
        "--resolution",
        "0.1",
        "--out",
        path(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("added: 1, removed: 1"), "{}", text(&out.stdout));
    let report: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    let clusters = report["clusters"].as_array().unwrap();
    assert_eq!(clusters.len(), 2);
    for c in clusters {
        let cloud = pcd::read(&out_dir.join(c["file"].as_str().unwrap())).unwrap();
        assert_eq!(cloud.len() as u64, c["points"].as_u64().unwrap());
    }
    let out = ronda(&["changedetect", "--before", "/nope.pcd", "--after", path(&after), "--out", path(&out_dir)]);
    assert_eq!(out.status.code(), Some(1));
}

struct Served {
    child: Child,
    addr: String,
}

impl Drop for Served {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn serve(dir: &Path) -> Served {
    let cfg = dir.join("ronda.toml");
    fs::write(&cfg, "listen = \"127.0.0.1:0\"\ndata_dir = \"data\"\ntime_scale = 10.0\n").unwrap();
    let map = dir.join("site.json");
    fs::write(&map, save_map(&site_map())).unwrap();
    let world = dir.join("world.yaml");
    fs::write(&world, "map: site.json\n").unwrap();
    let mut child = Process::new(env!("CARGO_BIN_EXE_ronda"))
        .args(["serve", "--config", path(&cfg), "--sim", path(&world)])
        .env_remove("RONDA_DATA_DIR")
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").unwrap_or_else(|| panic!("{line}")).to_string();
    Served { child, addr }
}

#[test]
fn send_and_watch_talk_to_a_running_service() {
    let dir = tempfile::tempdir().unwrap();
    let mut served = serve(dir.path());
    let out = ronda(&["send", "--addr", &served.addr, r#"{"kind":"list_missions"}"#]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert_eq!(serde_json::from_slice::<Value>(&out.stdout).unwrap(), Value::Array(vec![]));
    let out = ronda(&["send", "--addr", &served.addr, r#"{"kind":"load_mission","mission_id":"x"}"#]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stdout).contains("not_found"));
    let out = ronda(&["send", "--addr", &served.addr, r#"{"kind":"save_mission","mission":{"id":"m","name":"m"}}"#]);
    assert_eq!(out.status.code(), Some(0));
    let out = ronda(&["watch", "--addr", &served.addr, "--count", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let first: Value = serde_json::from_str(text(&out.stdout).lines().next().unwrap()).unwrap();
    assert_eq!(first["seq"], 1);
    let out = ronda(&["send", "--addr", &served.addr, r#"{"kind":"shutdown"}"#]);
    assert_eq!(out.status.code(), Some(0), "{}{}", text(&out.stdout), text(&out.stderr));
    assert!(served.child.wait().unwrap().success());
    assert!(dir.path().join("data").join("missions").join("m.json").is_file());
}
