//! Monte Carlo Localization over an occupancy grid.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::{raycast, OccupancyGrid, Pose2};
use crate::NavError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub pose: Pose2,
    pub weight: f64,
}

/// Zero-mean Gaussian odometry error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdometryNoise {
    /// Metres, per axis.
    pub sigma_xy: f64,
    /// Radians.
    pub sigma_yaw: f64,
}

impl OdometryNoise {
    pub const ZERO: OdometryNoise = OdometryNoise { sigma_xy: 0.0, sigma_yaw: 0.0 };
}

/// Where removed particles go.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reinit {
    /// Copy of a survivor from the most populated pose bin.
    Modal,
    /// Uniform over free space.
    RandomLegal,
    /// Weighted barycentre of the survivors.
    Barycentre,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorMode {
    /// Keep a particle only if its mean absolute beam discrepancy is ≤ τ.
    Threshold,
    /// Gaussian likelihood on the discrepancy followed by systematic resampling.
    Likelihood { sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MclConfig {
    pub particles: usize,
    pub odometry_noise: OdometryNoise,
    /// Sensor tolerance τ, metres.
    pub tolerance: f64,
    pub reinit: Reinit,
    /// Share of removed particles always re-seeded uniformly.
    pub random_fraction: f64,
    pub sensor_mode: SensorMode,
    /// Spread added to re-seeded copies.
    pub reinit_jitter: OdometryNoise,
    /// Radius `r` for convergence and mode binning, metres.
    pub convergence_radius: f64,
    pub convergence_fraction: f64,
}

impl Default for MclConfig {
    fn default() -> Self {
        MclConfig {
            particles: 500,
            odometry_noise: OdometryNoise { sigma_xy: 0.03, sigma_yaw: 0.03 },
            tolerance: 0.25,
            reinit: Reinit::Modal,
            random_fraction: 0.1,
            sensor_mode: SensorMode::Threshold,
            reinit_jitter: OdometryNoise { sigma_xy: 0.05, sigma_yaw: 0.05 },
            convergence_radius: 0.5,
            convergence_fraction: 0.9,
        }
    }
}

impl MclConfig {
    pub fn validate(&self) -> Result<(), NavError> {
        let bad = |m: &str| Err(NavError::InvalidArgument(m.to_string()));
        if self.particles == 0 {
            return bad("particles must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.random_fraction) {
            return bad("random_fraction must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.convergence_fraction) {
            return bad("convergence_fraction must lie in [0, 1]");
        }
        if !(self.tolerance >= 0.0 && self.convergence_radius > 0.0) {
            return bad("tolerance must be non-negative and convergence_radius positive");
        }
        for n in [self.odometry_noise, self.reinit_jitter] {
            if !(n.sigma_xy >= 0.0 && n.sigma_yaw >= 0.0) {
                return bad("noise sigmas must be non-negative");
            }
        }
        if let SensorMode::Likelihood { sigma } = self.sensor_mode {
            if !(sigma > 0.0) {
                return bad("likelihood sigma must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeScan {
    /// Beam angles relative to the heading, radians.
    pub angles: Vec<f64>,
    pub ranges: Vec<f64>,
    pub max_range: f64,
}

impl RangeScan {
    pub fn validate(&self) -> Result<(), NavError> {
        if self.angles.is_empty() || self.angles.len() != self.ranges.len() {
            return Err(NavError::InvalidArgument("scan needs one range per beam and at least one beam".into()));
        }
        if self.ranges.iter().any(|r| !(0.0..=self.max_range).contains(r)) {
            return Err(NavError::InvalidArgument("ranges must lie in [0, max_range]".into()));
        }
        Ok(())
    }
}

/// `n` beams evenly spread over the full circle.
pub fn ring_angles(n: usize) -> Vec<f64> {
    (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect()
}

/// Noise-free scan at `pose`.
pub fn ideal_scan(grid: &OccupancyGrid, pose: &Pose2, angles: &[f64], max_range: f64) -> Result<RangeScan, NavError> {
    let ranges = angles
        .iter()
        .map(|a| raycast(grid, pose, *a, max_range))
        .collect::<Result<_, _>>()?;
    Ok(RangeScan {
        angles: angles.to_vec(),
        ranges,
        max_range,
    })
}

/// Mean absolute difference between the scan and what `pose` would see.
pub fn scan_discrepancy(grid: &OccupancyGrid, pose: &Pose2, scan: &RangeScan) -> f64 {
    let mut total = 0.0;
    for (a, r) in scan.angles.iter().zip(&scan.ranges) {
        match raycast(grid, pose, *a, scan.max_range) {
            Ok(expected) => total += (expected - r).abs(),
            Err(_) => return f64::INFINITY,
        }
    }
    total / scan.angles.len() as f64
}

pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w == PI {
        -PI
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: bool,
    /// Weighted barycentre with circular-mean yaw.
    pub estimate: Pose2,
    /// Weighted RMS distance to the barycentre, metres.
    pub dispersion: f64,
}

#[derive(Debug, Clone)]
pub struct ParticleSet {
    particles: Vec<Particle>,
    config: MclConfig,
    free: Vec<(usize, usize)>,
    rng: ChaCha8Rng,
}

/// N particles uniform over free space with uniform yaw.
pub fn init_uniform(grid: &OccupancyGrid, config: &MclConfig, seed: u64) -> Result<ParticleSet, NavError> {
    config.validate()?;
    let free = grid.free_cells();
    if free.is_empty() {
        return Err(NavError::NoFreeSpace);
    }
    let mut set = ParticleSet {
        particles: Vec::with_capacity(config.particles),
        config: config.clone(),
        free,
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    for _ in 0..config.particles {
        let pose = set.random_legal(grid);
        set.particles.push(Particle { pose, weight: 1.0 });
    }
    Ok(set)
}

impl ParticleSet {
    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn config(&self) -> &MclConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    fn random_legal(&mut self, grid: &OccupancyGrid) -> Pose2 {
        let (r, c) = self.free[self.rng.random_range(0..self.free.len())];
        let s = grid.cell_size();
        let (cx, cz) = grid.cell_center(r, c);
        Pose2 {
            x: cx + s * (self.rng.random::<f64>() - 0.5),
            z: cz + s * (self.rng.random::<f64>() - 0.5),
            yaw: self.rng.random_range(-PI..PI),
        }
    }

    fn gaussian(&mut self, sigma: f64) -> f64 {
        if sigma == 0.0 {
            return 0.0;
        }
        Normal::new(0.0, sigma).expect("sigma checked").sample(&mut self.rng)
    }

    /// Moves every particle by `(dx, dz, dyaw)` in its own frame (dx forward,
    /// dz to the left of the heading) plus Gaussian noise. A particle whose
    /// move would leave free space stays put with weight 0.
    pub fn motion_update(&mut self, grid: &OccupancyGrid, delta: (f64, f64, f64), noise: OdometryNoise) {
        let (dx, dz, dyaw) = delta;
        for i in 0..self.particles.len() {
            let (ex, ez, eyaw) = (self.gaussian(noise.sigma_xy), self.gaussian(noise.sigma_xy), self.gaussian(noise.sigma_yaw));
            let p = &mut self.particles[i];
            let (s, c) = p.pose.yaw.sin_cos();
            let moved = Pose2 {
                x: p.pose.x + dx * c - dz * s + ex,
                z: p.pose.z + dx * s + dz * c + ez,
                yaw: wrap_angle(p.pose.yaw + dyaw + eyaw),
            };
            if grid.is_free_point(moved.x, moved.z) {
                p.pose = moved;
            } else {
                p.weight = 0.0;
            }
        }
    }

    /// Filters the set against a scan. Discrepancies are computed in parallel;
    /// all random draws happen afterwards in particle order.
    pub fn sensor_update(&mut self, grid: &OccupancyGrid, scan: &RangeScan) -> Result<(), NavError> {
        scan.validate()?;
        let disc: Vec<f64> = self
            .particles
            .par_iter()
            .map(|p| if p.weight > 0.0 { scan_discrepancy(grid, &p.pose, scan) } else { f64::INFINITY })
            .collect();
        match self.config.sensor_mode {
            SensorMode::Threshold => self.threshold_update(grid, &disc),
            SensorMode::Likelihood { sigma } => self.likelihood_update(grid, &disc, sigma),
        }
        Ok(())
    }

    fn threshold_update(&mut self, grid: &OccupancyGrid, disc: &[f64]) {
        let tol = self.config.tolerance;
        let mut removed = Vec::new();
        for (i, p) in self.particles.iter_mut().enumerate() {
            if disc[i] <= tol {
                p.weight = 1.0;
            } else {
                removed.push(i);
            }
        }
        if removed.len() == self.particles.len() {
            for i in removed {
                let pose = self.random_legal(grid);
                self.particles[i] = Particle { pose, weight: 1.0 };
            }
            return;
        }
        let n_random = (self.config.random_fraction * removed.len() as f64).round() as usize;
        let survivors: Vec<Pose2> = self
            .particles
            .iter()
            .zip(disc)
            .filter(|(_, d)| **d <= tol)
            .map(|(p, _)| p.pose)
            .collect();
        let anchor = match self.config.reinit {
            Reinit::Modal => Anchor::Bin(modal_bin(&survivors, self.config.convergence_radius)),
            Reinit::Barycentre => {
                let b = barycentre(&survivors.iter().map(|p| Particle { pose: *p, weight: 1.0 }).collect::<Vec<_>>());
                Anchor::Pose(if grid.is_free_point(b.x, b.z) {
                    b
                } else {
                    *survivors
                        .iter()
                        .min_by(|a, c| a.distance(&b).total_cmp(&c.distance(&b)))
                        .expect("survivors non-empty")
                })
            }
            Reinit::RandomLegal => Anchor::Random,
        };
        for (k, i) in removed.into_iter().enumerate() {
            let pose = if k < n_random {
                self.random_legal(grid)
            } else {
                match &anchor {
                    Anchor::Random => self.random_legal(grid),
                    Anchor::Pose(p) => self.jittered(grid, *p),
                    Anchor::Bin(members) => {
                        let p = survivors[members[self.rng.random_range(0..members.len())]];
                        self.jittered(grid, p)
                    }
                }
            };
            self.particles[i] = Particle { pose, weight: 1.0 };
        }
    }

    fn jittered(&mut self, grid: &OccupancyGrid, p: Pose2) -> Pose2 {
        let j = self.config.reinit_jitter;
        let q = Pose2 {
            x: p.x + self.gaussian(j.sigma_xy),
            z: p.z + self.gaussian(j.sigma_xy),
            yaw: wrap_angle(p.yaw + self.gaussian(j.sigma_yaw)),
        };
        if grid.is_free_point(q.x, q.z) {
            q
        } else {
            p
        }
    }

    fn likelihood_update(&mut self, grid: &OccupancyGrid, disc: &[f64], sigma: f64) {
        let n = self.particles.len();
        let w: Vec<f64> = self
            .particles
            .iter()
            .zip(disc)
            .map(|(p, d)| if d.is_finite() { p.weight * (-0.5 * (d / sigma).powi(2)).exp() } else { 0.0 })
            .collect();
        let total: f64 = w.iter().sum();
        let n_random = (self.config.random_fraction * n as f64).round() as usize;
        let mut next = Vec::with_capacity(n);
        if total > 0.0 {
            // systematic resampling
            let step = total / n as f64;
            let mut u = self.rng.random::<f64>() * step;
            let mut acc = w[0];
            let mut j = 0;
            for _ in 0..n - n_random {
                while u > acc && j + 1 < n {
                    j += 1;
                    acc += w[j];
                }
                next.push(Particle { pose: self.particles[j].pose, weight: 1.0 });
                u += step;
            }
        }
        while next.len() < n {
            let pose = self.random_legal(grid);
            next.push(Particle { pose, weight: 1.0 });
        }
        self.particles = next;
    }

    /// Share of particles within `radius` of `(x, z)`.
    pub fn fraction_within(&self, x: f64, z: f64, radius: f64) -> f64 {
        let near = self
            .particles
            .iter()
            .filter(|p| (p.pose.x - x).hypot(p.pose.z - z) <= radius)
            .count();
        near as f64 / self.particles.len() as f64
    }

    pub fn convergence(&self) -> Convergence {
        convergence(&self.particles, self.config.convergence_radius, self.config.convergence_fraction)
    }
}

enum Anchor {
    Random,
    Pose(Pose2),
    Bin(Vec<usize>),
}

/// Members of the most populated `(x, z, yaw)` bin; ties go to the smallest bin key.
fn modal_bin(poses: &[Pose2], size: f64) -> Vec<usize> {
    let mut bins: BTreeMap<(i64, i64, i64), Vec<usize>> = BTreeMap::new();
    for (i, p) in poses.iter().enumerate() {
        let key = (
            (p.x / size).floor() as i64,
            (p.z / size).floor() as i64,
            ((p.yaw + PI) / (PI / 4.0)).floor() as i64 % 8,
        );
        bins.entry(key).or_default().push(i);
    }
    let mut best: Option<Vec<usize>> = None;
    for members in bins.into_values() {
        if best.as_ref().is_none_or(|b| members.len() > b.len()) {
            best = Some(members);
        }
    }
    best.unwrap_or_default()
}

/// Weighted mean position and circular-mean yaw. All-zero weights count equally.
pub fn barycentre(particles: &[Particle]) -> Pose2 {
    let total: f64 = particles.iter().map(|p| p.weight).sum();
    let w = |p: &Particle| if total > 0.0 { p.weight / total } else { 1.0 / particles.len() as f64 };
    // offsets from the first particle keep a single-point cloud exact
    let base = particles[0].pose;
    let (mut x, mut z, mut s, mut c) = (0.0, 0.0, 0.0, 0.0);
    for p in particles {
        let wi = w(p);
        x += wi * (p.pose.x - base.x);
        z += wi * (p.pose.z - base.z);
        s += wi * p.pose.yaw.sin();
        c += wi * p.pose.yaw.cos();
    }
    Pose2 { x: base.x + x, z: base.z + z, yaw: s.atan2(c) }
}

/// Converged when at least `fraction` of the particles lie within `radius`
/// of the weighted barycentre.
pub fn convergence(particles: &[Particle], radius: f64, fraction: f64) -> Convergence {
    if particles.is_empty() {
        return Convergence {
            converged: false,
            estimate: Pose2::new(f64::NAN, f64::NAN, f64::NAN),
            dispersion: f64::NAN,
        };
    }
    let estimate = barycentre(particles);
    let total: f64 = particles.iter().map(|p| p.weight).sum();
    let n = particles.len() as f64;
    let mut sq = 0.0;
    let mut near = 0usize;
    for p in particles {
        let d = p.pose.distance(&estimate);
        sq += if total > 0.0 { p.weight / total } else { 1.0 / n } * d * d;
        if d <= radius {
            near += 1;
        }
    }
    Convergence {
        converged: near as f64 >= fraction * n,
        estimate,
        dispersion: sq.sqrt(),
    }
}
