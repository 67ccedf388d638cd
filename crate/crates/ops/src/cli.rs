//! The `ronda` command line.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use chrono::TimeZone;
use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;
use ronda_core::scenario::{b1, jet, run_replay};
use ronda_core::{
    build_from_pose_graph, load_map, save_map, Command, Core, CoreConfig, EventBus, Mission, MissionOutcome, NullStore,
    Persisted, SimClock,
};
use ronda_perception::{pcd, run_pipeline, ChangeParams};
use serde_json::{json, Value};

use crate::client::Client;
use crate::config::{Config, DATA_DIR_ENV};
use crate::service::Service;
use crate::world::World;
use crate::OpsError;

#[derive(Debug, Parser)]
#[command(name = "ronda", version, about = "Autonomous inspection rounds for a legged robot")]
pub struct Cli {
    /// Seed for every stochastic component.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Top,
}

#[derive(Debug, Subcommand)]
pub enum Top {
    /// Run the service against a simulated robot.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// World file for the simulated robot.
        #[arg(long)]
        sim: Option<PathBuf>,
        /// Simulated seconds per real second.
        #[arg(long)]
        time_scale: Option<f64>,
        /// Overrides the configured listen address.
        #[arg(long)]
        listen: Option<String>,
        #[arg(long, env = DATA_DIR_ENV)]
        data_dir: Option<PathBuf>,
    },
    #[command(subcommand)]
    Mission(MissionCmd),
    #[command(subcommand)]
    Map(MapCmd),
    /// Compare two registered clouds and write the changed objects.
    Changedetect {
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        resolution: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a deployment schedule on the reference site and print its metrics.
    Replay { scenario: Scenario },
    /// Send one command (a JSON document) to a running service.
    Send {
        #[arg(long, default_value = "127.0.0.1:7420")]
        addr: String,
        command: String,
    },
    /// Print state events from a running service, one JSON line each.
    Watch {
        #[arg(long, default_value = "127.0.0.1:7420")]
        addr: String,
        #[arg(long, default_value_t = 0)]
        after: u64,
        /// Stop after this many events.
        #[arg(long)]
        count: Option<usize>,
    },
}

#[derive(Debug, Subcommand)]
pub enum MissionCmd {
    /// Run one mission headless on the simulator; exits 0 only if it completes.
    Run {
        file: PathBuf,
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        sim: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum MapCmd {
    /// Build a map from poses, one `x y z` line each.
    ImportPosegraph {
        poses: PathBuf,
        #[arg(long, default_value_t = 1.5)]
        threshold: f64,
        /// Where to write the map; standard output otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Scenario {
    B1,
    Jet,
}

pub fn main() -> i32 {
    let cli = Cli::parse();
    if let Top::Serve { config, .. } = &cli.command {
        if !config.is_file() {
            let mut cmd = Cli::command();
            cmd.build();
            let serve = cmd.find_subcommand_mut("serve").expect("serve subcommand");
            serve
                .error(ErrorKind::ValueValidation, format!("no such config file: {}", config.display()))
                .exit();
        }
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn run(cli: Cli) -> Result<i32, OpsError> {
    let seed = cli.seed;
    match cli.command {
        Top::Serve {
            config,
            sim,
            time_scale,
            listen,
            data_dir,
        } => serve(&config, sim.as_deref(), time_scale, listen, data_dir, seed),
        Top::Mission(MissionCmd::Run { file, map, sim }) => mission_run(&file, map.as_deref(), sim.as_deref(), seed),
        Top::Map(MapCmd::ImportPosegraph { poses, threshold, out }) => import_posegraph(&poses, threshold, out.as_deref()),
        Top::Changedetect {
            before,
            after,
            resolution,
            out,
        } => changedetect(&before, &after, resolution, &out),
        Top::Replay { scenario } => {
            let replay = match scenario {
                Scenario::B1 => b1(),
                Scenario::Jet => jet(),
            };
            println!("{}", run_replay(&replay, seed.unwrap_or(0)));
            Ok(0)
        }
        Top::Send { addr, command } => send(&addr, &command),
        Top::Watch { addr, after, count } => watch(&addr, after, count),
    }
}

fn serve(
    config_path: &Path,
    sim: Option<&Path>,
    time_scale: Option<f64>,
    listen: Option<String>,
    data_dir: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<i32, OpsError> {
    let mut config = Config::load(config_path)?;
    if let Some(t) = time_scale {
        if !(t > 0.0 && t.is_finite()) {
            return Err(OpsError::Other(format!("--time-scale must be positive, got {t}")));
        }
        config.time_scale = t;
    }
    if let Some(l) = listen {
        config.listen = l;
    }
    if let Some(d) = data_dir {
        config.data_dir = d;
    }
    let world = match sim {
        Some(p) => World::load(p)?,
        None => World::default(),
    };
    let service = Service::start(&config, &world, seed)?;
    println!("listening on {}", service.addr);
    io::stdout().flush()?;
    service.wait();
    Ok(0)
}

fn read_mission(path: &Path) -> Result<Mission, OpsError> {
    let text = fs::read_to_string(path).map_err(|e| OpsError::file(path, e))?;
    let yaml = matches!(path.extension().and_then(|e| e.to_str()), Some("yaml" | "yml"));
    let mission: Mission = if yaml {
        serde_yaml::from_str(&text).map_err(|e| OpsError::file(path, e))?
    } else {
        serde_json::from_str(&text).map_err(|e| OpsError::file(path, e))?
    };
    mission.validate().map_err(|e| OpsError::file(path, e))?;
    Ok(mission)
}

fn mission_run(file: &Path, map_path: Option<&Path>, sim: Option<&Path>, seed: Option<u64>) -> Result<i32, OpsError> {
    let mission = read_mission(file)?;
    let world = match sim {
        Some(p) => World::load(p)?,
        None => World::default(),
    };
    let map = match map_path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| OpsError::file(p, e))?;
            load_map(&text).map_err(|e| OpsError::file(p, e))?
        }
        None => world.map.clone().unwrap_or_default(),
    };
    let start = world
        .file
        .start_time
        .unwrap_or_else(|| chrono::Utc.with_ymd_and_hms(2024, 1, 1, 8, 0, 0).unwrap());
    let clock = SimClock::new(start);
    let robot = world.robot(clock.clone(), &map, seed).map_err(OpsError::Other)?;
    let persisted = Persisted {
        map: Some(map),
        ..Persisted::default()
    };
    let (mut core, _handle) = Core::new(
        robot,
        Arc::new(clock),
        CoreConfig::default(),
        Box::new(NullStore),
        EventBus::default(),
        persisted,
    )
    .map_err(|e| OpsError::Other(e.to_string()))?;
    let record = core.run_mission_now(mission);
    for (i, t) in record.tasks.iter().enumerate() {
        let detail = t.detail.as_deref().map(|d| format!(" ({d})")).unwrap_or_default();
        println!("task {i} {} {}: {:?}{detail}", t.node, t.action, t.status);
    }
    let outcome = record.outcome.unwrap_or(MissionOutcome::Aborted);
    println!("mission {}: {outcome:?}, walked {:.1} m", record.mission_id, record.distance_walked);
    Ok(if outcome == MissionOutcome::Completed { 0 } else { 1 })
}

/// Whitespace- or comma-separated numbers, two or three per line. Blank
/// lines and `#` comments are skipped.
pub fn parse_poses(text: &str) -> Result<Vec<Vector3<f64>>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let nums: Result<Vec<f64>, _> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(str::parse::<f64>)
            .collect();
        let nums = nums.map_err(|e| format!("line {}: {e}", i + 1))?;
        match nums.as_slice() {
            [x, y] => out.push(Vector3::new(*x, *y, 0.0)),
            [x, y, z] => out.push(Vector3::new(*x, *y, *z)),
            _ => return Err(format!("line {}: expected 2 or 3 numbers, got {}", i + 1, nums.len())),
        }
    }
    Ok(out)
}

fn import_posegraph(poses: &Path, threshold: f64, out: Option<&Path>) -> Result<i32, OpsError> {
    let text = fs::read_to_string(poses).map_err(|e| OpsError::file(poses, e))?;
    let points = parse_poses(&text).map_err(|e| OpsError::file(poses, e))?;
    let map = build_from_pose_graph(&points, threshold).map_err(|e| OpsError::file(poses, e))?;
    let doc = save_map(&map);
    match out {
        Some(p) => fs::write(p, doc).map_err(|e| OpsError::file(p, e))?,
        None => println!("{doc}"),
    }
    eprintln!("{} nodes, {} edges", map.node_count(), map.edges().count());
    Ok(0)
}

fn changedetect(before: &Path, after: &Path, resolution: f64, out: &Path) -> Result<i32, OpsError> {
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(OpsError::Other(format!("--resolution must be positive, got {resolution}")));
    }
    let a = pcd::read(before).map_err(|e| OpsError::Other(e.to_string()))?;
    let b = pcd::read(after).map_err(|e| OpsError::Other(e.to_string()))?;
    let report = run_pipeline(&a, &b, &ChangeParams::with_resolution(resolution)).map_err(|e| OpsError::Other(e.to_string()))?;
    fs::create_dir_all(out).map_err(|e| OpsError::file(out, e))?;
    let mut clusters = Vec::new();
    for c in report.added.iter().chain(&report.removed) {
        let name = format!("{}.pcd", c.id);
        let path = out.join(&name);
        pcd::write(&path, &c.points).map_err(|e| OpsError::Other(e.to_string()))?;
        clusters.push(json!({
            "id": c.id,
            "change_kind": c.change_kind,
            "points": c.points.len(),
            "centroid": [c.centroid.x, c.centroid.y, c.centroid.z],
            "bbox": c.bbox,
            "file": name,
        }));
    }
    let doc = json!({
        "before": before.display().to_string(),
        "after": after.display().to_string(),
        "added": report.added.len(),
        "removed": report.removed.len(),
        "clusters": clusters,
        "correspondences": report.correspondences,
        "params": report.params,
    });
    let path = out.join("report.json");
    fs::write(&path, serde_json::to_vec_pretty(&doc).expect("report serializes")).map_err(|e| OpsError::file(&path, e))?;
    println!("added: {}, removed: {}", report.added.len(), report.removed.len());
    Ok(0)
}

fn send(addr: &str, command: &str) -> Result<i32, OpsError> {
    let command: Command =
        serde_json::from_str(command).map_err(|e| OpsError::Other(format!("bad command document: {e}")))?;
    let mut client = Client::connect(addr)?;
    let reply = client.request(command)?;
    client.close();
    match reply {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("json"));
            Ok(0)
        }
        Err(e) => {
            let v: Value = serde_json::to_value(&e).expect("json");
            println!("{v}");
            Ok(1)
        }
    }
}

fn watch(addr: &str, after: u64, count: Option<usize>) -> Result<i32, OpsError> {
    let mut client = Client::connect(addr)?;
    client.subscribe(after)?;
    let mut seen = 0;
    while count.map_or(true, |c| seen < c) {
        match client.next_event(Duration::from_secs(3600)) {
            Ok(e) => {
                println!("{}", serde_json::to_string(&e).expect("json"));
                seen += 1;
            }
            Err(e) if e.kind() == io::ErrorKind::TimedOut => continue,
            Err(e) => return Err(e.into()),
        }
    }
    Ok(0)
}
