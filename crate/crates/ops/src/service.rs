//! Wires storage, the simulated robot, the core and the TCP server together.

use std::net::SocketAddr;
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use chrono::Utc;
use ronda_core::{BatteryMonitor, Clock, Core, CoreHandle, EventBus, Localizer, RobotAdapter, SimClock, Store};

use crate::config::Config;
use crate::server::{Inflight, Server};
use crate::store::DirStore;
use crate::world::World;
use crate::OpsError;

pub struct Service {
    pub addr: SocketAddr,
    pub handle: CoreHandle,
    inflight: Inflight,
    core: thread::JoinHandle<()>,
}

impl Service {
    /// Loads the data directory, starts the core on its own thread and
    /// begins accepting connections. Fails before anything runs if any
    /// stored file is unreadable.
    pub fn start(config: &Config, world: &World, seed: Option<u64>) -> Result<Self, OpsError> {
        let config = config.clone();
        let world = world.clone();
        let (ready_tx, ready_rx) = mpsc::channel();
        let core = thread::spawn(move || {
            let built = build(&config, &world, seed);
            let (mut core, server) = match built {
                Ok(b) => b,
                Err(e) => {
                    let _ = ready_tx.send(Err(e));
                    return;
                }
            };
            let addr = server.local_addr();
            let handle = server.handle().clone();
            let inflight = server.inflight();
            server.spawn();
            let _ = ready_tx.send(addr.map(|a| (a, handle, inflight)).map_err(OpsError::Io));
            core.run();
        });
        match ready_rx.recv() {
            Ok(Ok((addr, handle, inflight))) => Ok(Self {
                addr,
                handle,
                inflight,
                core,
            }),
            Ok(Err(e)) => {
                let _ = core.join();
                Err(e)
            }
            Err(_) => Err(OpsError::Other("service thread died during start-up".into())),
        }
    }

    /// Blocks until the core stops and the replies it gave have been sent.
    pub fn wait(self) {
        let _ = self.core.join();
        self.inflight.drain(Duration::from_secs(2));
    }
}

fn build(config: &Config, world: &World, seed: Option<u64>) -> Result<(Core<ronda_core::SimRobot>, Server), OpsError> {
    let start = config.start_time.or(world.file.start_time).unwrap_or_else(Utc::now);
    let clock = SimClock::paced(start, config.time_scale);
    let mut store = DirStore::open(&config.data_dir)?;
    let mut persisted = store.load_all(clock.now())?;
    if persisted.map.is_none() {
        if let Some(map) = &world.map {
            store
                .put_map(map)
                .map_err(|e| OpsError::Other(format!("seeding the map: {e}")))?;
            persisted.map = Some(map.clone());
        }
    }
    let map = persisted.map.clone().unwrap_or_default();
    let robot = world
        .robot(clock.clone(), &map, seed.or(Some(config.seed)))
        .map_err(OpsError::Other)?;
    let odometry = robot.odometry_at(clock.now());
    let initial = robot.current_pose();
    let (mut core, handle) = Core::new(
        robot,
        Arc::new(clock.clone()),
        config.core_config(),
        Box::new(store),
        EventBus::default(),
        persisted,
    )
    .map_err(|e| OpsError::Other(e.to_string()))?;
    if config.battery.enabled {
        core.add_monitor(Box::new(
            BatteryMonitor::new(config.battery.low, config.battery.resume).map_err(OpsError::Other)?,
        ));
    }
    if config.localizer.enabled {
        if world.prior.is_empty() {
            return Err(OpsError::Other("the localizer needs a prior_map in the world file".into()));
        }
        core.set_localizer(Localizer::new(
            &world.prior,
            config.localizer.params.clone(),
            initial,
            odometry,
            clock.now(),
        ));
    }
    let server = Server::bind(config.listen.as_str(), handle).map_err(OpsError::Io)?;
    Ok((core, server))
}
