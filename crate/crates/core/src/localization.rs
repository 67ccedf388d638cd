//! Pose tracking against a prior point-cloud map: each tick composes the
//! odometry increment onto the previous estimate and refines it with ICP.

use chrono::Duration;
use ronda_perception::{downsample, icp_register, IcpParams, PointCloud, Pose};
use serde::{Deserialize, Serialize};

use crate::nav::AdapterError;
use crate::sim::SimRobot;
use crate::time::{seconds, Timestamp};

/// Odometry and scans sampled at arbitrary past instants.
pub trait LocalizationSource {
    fn odometry_at(&self, t: Timestamp) -> Pose;
    /// Scan in the robot's own frame.
    fn sensor_scan_at(&mut self, t: Timestamp) -> Result<PointCloud, AdapterError>;
}

impl LocalizationSource for SimRobot {
    fn odometry_at(&self, t: Timestamp) -> Pose {
        SimRobot::odometry_at(self, t)
    }

    fn sensor_scan_at(&mut self, t: Timestamp) -> Result<PointCloud, AdapterError> {
        SimRobot::sensor_scan_at(self, t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalizerParams {
    pub rate_hz: f64,
    pub prior_voxel_m: f64,
    pub icp: IcpParams,
    /// Fitness (m²) above which a registration counts as failed.
    pub max_fitness: f64,
    /// Consecutive failed ticks before the track is declared lost.
    pub lost_after: usize,
}

impl Default for LocalizerParams {
    fn default() -> Self {
        Self {
            rate_hz: 2.0,
            prior_voxel_m: 0.05,
            icp: IcpParams {
                max_iterations: 30,
                correspondence_radius: 0.5,
                convergence_eps: 1e-6,
            },
            max_fitness: 0.01,
            lost_after: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizerState {
    pub pose: Pose,
    /// Mean squared correspondence distance of the last registration, m².
    pub fitness: f64,
    pub last_update: Timestamp,
    pub degraded: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LocalizerEvent {
    Update { state: LocalizerState },
    Lost { at: Timestamp, failures: usize },
    Recovered { at: Timestamp },
}

pub struct Localizer {
    prior: PointCloud,
    params: LocalizerParams,
    state: LocalizerState,
    last_odometry: Pose,
    failures: usize,
}

impl Localizer {
    /// `initial` is the known starting pose (operator input or the dock),
    /// `odometry` the odometry reading at `start`.
    pub fn new(prior_map: &PointCloud, params: LocalizerParams, initial: Pose, odometry: Pose, start: Timestamp) -> Self {
        Self {
            prior: downsample(prior_map, params.prior_voxel_m),
            params,
            state: LocalizerState {
                pose: initial,
                fitness: 0.0,
                last_update: start,
                degraded: false,
            },
            last_odometry: odometry,
            failures: 0,
        }
    }

    pub fn state(&self) -> &LocalizerState {
        &self.state
    }

    pub fn prior(&self) -> &PointCloud {
        &self.prior
    }

    pub fn period(&self) -> Duration {
        seconds(1.0 / self.params.rate_hz)
    }

    /// One update at time `t`. Emits the new state plus a lost or
    /// recovered notice when the track changes health.
    pub fn tick(&mut self, source: &mut dyn LocalizationSource, t: Timestamp) -> Vec<LocalizerEvent> {
        let odom = source.odometry_at(t);
        let delta = self.last_odometry.inverse().compose(&odom);
        self.last_odometry = odom;
        let prior_pose = self.state.pose.compose(&delta);

        let registered = source
            .sensor_scan_at(t)
            .ok()
            .filter(|scan| !scan.is_empty())
            .and_then(|scan| icp_register(&scan, &self.prior, &prior_pose, &self.params.icp).ok())
            .filter(|r| r.fitness <= self.params.max_fitness);

        let mut events = Vec::new();
        match registered {
            Some(r) => {
                self.state.pose = r.pose;
                self.state.fitness = r.fitness;
                self.failures = 0;
                if self.state.degraded {
                    self.state.degraded = false;
                    events.push(LocalizerEvent::Recovered { at: t });
                }
            }
            None => {
                self.state.pose = prior_pose;
                self.failures += 1;
                if self.failures == self.params.lost_after {
                    self.state.degraded = true;
                    events.push(LocalizerEvent::Lost {
                        at: t,
                        failures: self.failures,
                    });
                }
            }
        }
        self.state.last_update = t;
        events.insert(
            0,
            LocalizerEvent::Update {
                state: self.state.clone(),
            },
        );
        events
    }

    /// Run ticks at the configured rate over `(last_update, until]`.
    pub fn track(&mut self, source: &mut dyn LocalizationSource, until: Timestamp) -> Vec<LocalizerEvent> {
        let mut out = Vec::new();
        let mut t = self.state.last_update + self.period();
        while t <= until {
            out.extend(self.tick(source, t));
            t += self.period();
        }
        out
    }
}
