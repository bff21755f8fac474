//! Closed-loop kidnapped-robot simulation and the built-in scenarios.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::grid::{raycast, OccupancyGrid, Pose2};
use crate::mcl::{init_uniform, ring_angles, wrap_angle, MclConfig, OdometryNoise, RangeScan};
use crate::NavError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinMap {
    /// 12 × 9 m room with off-centre furniture; no two places look alike.
    Room,
    /// 80 m featureless corridor, 2 m wide.
    Corridor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapSource {
    Builtin(BuiltinMap),
    /// PGM with a JSON sidecar; relative paths resolve against the scenario file.
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    pub beams: usize,
    pub max_range: f64,
    /// Per-beam Gaussian range noise, metres.
    pub range_noise: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            beams: 12,
            max_range: 5.0,
            range_noise: 0.02,
        }
    }
}

/// Unannounced teleport of the robot before step `step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Kidnap {
    pub step: usize,
    pub to: Pose2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub map: MapSource,
    /// Closed loop of `(x, z)` targets, visited in order.
    pub waypoints: Vec<[f64; 2]>,
    /// Metres travelled per step.
    #[serde(default = "default_step_length")]
    pub step_length: f64,
    pub steps: usize,
    #[serde(default)]
    pub kidnaps: Vec<Kidnap>,
    /// Error on the odometry the robot reports.
    #[serde(default = "default_robot_noise")]
    pub robot_noise: OdometryNoise,
    #[serde(default)]
    pub mcl: MclConfig,
    #[serde(default)]
    pub sensor: SensorConfig,
}

fn default_step_length() -> f64 {
    0.2
}

fn default_robot_noise() -> OdometryNoise {
    OdometryNoise { sigma_xy: 0.01, sigma_yaw: 0.01 }
}

/// Steps allowed for convergence in the built-in scenarios.
pub const CONVERGENCE_STEPS: usize = 80;

pub fn builtin_map(which: BuiltinMap) -> OccupancyGrid {
    match which {
        BuiltinMap::Room => {
            let mut g = OccupancyGrid::new(120, 90, 10.0).expect("valid size");
            g.add_border();
            g.fill_rect(2.0, 2.0, 4.0, 3.0, true);
            g.fill_rect(7.0, 0.0, 7.4, 4.0, true);
            g.fill_rect(9.0, 6.0, 11.0, 7.0, true);
            g.fill_rect(4.0, 6.0, 4.5, 6.5, true);
            g.fill_rect(0.0, 5.5, 1.0, 5.8, true);
            g
        }
        BuiltinMap::Corridor => {
            let mut g = OccupancyGrid::new(802, 22, 10.0).expect("valid size");
            g.add_border();
            g
        }
    }
}

pub fn builtin_scenario(which: BuiltinMap) -> Scenario {
    let waypoints = match which {
        BuiltinMap::Room => vec![[1.2, 1.2], [5.5, 1.2], [5.5, 4.5], [9.5, 4.5], [7.5, 8.0], [2.0, 7.5]],
        BuiltinMap::Corridor => vec![[35.0, 1.1], [45.0, 1.1]],
    };
    Scenario {
        map: MapSource::Builtin(which),
        waypoints,
        step_length: default_step_length(),
        steps: CONVERGENCE_STEPS,
        kidnaps: Vec::new(),
        robot_noise: default_robot_noise(),
        mcl: MclConfig::default(),
        sensor: SensorConfig::default(),
    }
}

impl Scenario {
    pub fn from_json(s: &str) -> Result<Self, NavError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String, NavError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Loads the map, resolving relative file paths against `base`.
    pub fn load_map(&self, base: Option<&Path>) -> Result<OccupancyGrid, NavError> {
        match &self.map {
            MapSource::Builtin(b) => Ok(builtin_map(*b)),
            MapSource::File(p) => {
                let path = match base {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p.clone(),
                };
                OccupancyGrid::load(&path)
            }
        }
    }

    pub fn validate(&self, grid: &OccupancyGrid) -> Result<(), NavError> {
        self.mcl.validate()?;
        if self.waypoints.len() < 2 {
            return Err(NavError::InvalidArgument("at least two waypoints are needed".into()));
        }
        if !(self.step_length > 0.0) || self.sensor.beams == 0 || !(self.sensor.max_range > 0.0) {
            return Err(NavError::InvalidArgument("step_length, beams and max_range must be positive".into()));
        }
        for w in &self.waypoints {
            if !grid.is_free_point(w[0], w[1]) {
                return Err(NavError::InvalidPose { x: w[0], z: w[1] });
            }
        }
        for k in &self.kidnaps {
            if !grid.is_free_point(k.to.x, k.to.z) {
                return Err(NavError::InvalidPose { x: k.to.x, z: k.to.z });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimStep {
    pub step: usize,
    pub truth: Pose2,
    pub estimate: Pose2,
    /// The filter's own convergence test.
    pub converged: bool,
    /// Distance from estimate to truth.
    pub error: f64,
    /// Share of particles within the convergence radius of the truth.
    pub near_truth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimLog {
    pub steps: Vec<SimStep>,
}

impl SimLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,true_x,true_z,true_yaw,est_x,est_z,est_yaw,converged\n");
        for r in &self.steps {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.step,
                r.truth.x,
                r.truth.z,
                r.truth.yaw,
                r.estimate.x,
                r.estimate.z,
                r.estimate.yaw,
                u8::from(r.converged)
            );
        }
        s
    }

    /// First step at which at least `fraction` of the particles sit within
    /// the convergence radius of the truth.
    pub fn first_localized(&self, fraction: f64) -> Option<usize> {
        self.steps.iter().find(|s| s.near_truth >= fraction).map(|s| s.step)
    }
}

/// Runs the robot along the waypoint loop for `scenario.steps` steps. The
/// filter starts uniform (the robot's start is unknown to it), receives noisy
/// odometry and a noisy scan each step, and is never told about kidnaps.
pub fn simulate_kidnapped(grid: &OccupancyGrid, scenario: &Scenario, seed: u64) -> Result<SimLog, NavError> {
    scenario.validate(grid)?;
    let mut world_rng = ChaCha8Rng::seed_from_u64(seed);
    let filter_seed: u64 = world_rng.random();
    let mut set = init_uniform(grid, &scenario.mcl, filter_seed)?;
    let angles = ring_angles(scenario.sensor.beams);
    let gauss = |sigma: f64, rng: &mut ChaCha8Rng| -> f64 {
        if sigma > 0.0 {
            Normal::new(0.0, sigma).expect("sigma checked").sample(rng)
        } else {
            0.0
        }
    };

    let w0 = scenario.waypoints[0];
    let w1 = scenario.waypoints[1];
    let mut truth = Pose2::new(w0[0], w0[1], (w1[1] - w0[1]).atan2(w1[0] - w0[0]));
    let mut target = 1;
    let mut log = SimLog { steps: Vec::with_capacity(scenario.steps) };

    for step in 1..=scenario.steps {
        if let Some(k) = scenario.kidnaps.iter().find(|k| k.step == step) {
            truth = k.to;
        }
        let goal = scenario.waypoints[target];
        let (gx, gz) = (goal[0] - truth.x, goal[1] - truth.z);
        let remaining = gx.hypot(gz);
        let dist = remaining.min(scenario.step_length);
        let heading = if remaining > 1e-9 { gz.atan2(gx) } else { truth.yaw };
        let dyaw = wrap_angle(heading - truth.yaw);
        let next = Pose2::new(truth.x + dist * heading.cos(), truth.z + dist * heading.sin(), heading);
        if grid.is_free_point(next.x, next.z) {
            truth = next;
        } else {
            return Err(NavError::InvalidPose { x: next.x, z: next.z });
        }
        if remaining <= scenario.step_length {
            target = (target + 1) % scenario.waypoints.len();
        }

        let reported = (
            dist * dyaw.cos() + gauss(scenario.robot_noise.sigma_xy, &mut world_rng),
            dist * dyaw.sin() + gauss(scenario.robot_noise.sigma_xy, &mut world_rng),
            dyaw + gauss(scenario.robot_noise.sigma_yaw, &mut world_rng),
        );
        let mut ranges = Vec::with_capacity(angles.len());
        for a in &angles {
            let r = raycast(grid, &truth, *a, scenario.sensor.max_range)?;
            let noisy = r + gauss(scenario.sensor.range_noise, &mut world_rng);
            ranges.push(noisy.clamp(0.0, scenario.sensor.max_range));
        }
        let scan = RangeScan {
            angles: angles.clone(),
            ranges,
            max_range: scenario.sensor.max_range,
        };

        set.motion_update(grid, reported, scenario.mcl.odometry_noise);
        set.sensor_update(grid, &scan)?;
        let c = set.convergence();
        log.steps.push(SimStep {
            step,
            truth,
            estimate: c.estimate,
            converged: c.converged,
            error: c.estimate.distance(&truth),
            near_truth: set.fraction_within(truth.x, truth.z, scenario.mcl.convergence_radius),
        });
    }
    Ok(log)
}
