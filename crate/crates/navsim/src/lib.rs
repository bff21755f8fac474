//! Planar robot simulation on occupancy grids: range sensing, Monte Carlo
//! Localization and grid path planning.

pub mod grid;
pub mod mcl;
pub mod plan;
pub mod sim;

use thiserror::Error;

pub use grid::{raycast, OccupancyGrid, Pose2};
pub use mcl::{init_uniform, MclConfig, Particle, ParticleSet, RangeScan};
pub use plan::{dijkstra_plan, Plan};
pub use sim::{simulate_kidnapped, Scenario, SimLog};

#[derive(Debug, Error)]
pub enum NavError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid pose: ({x}, {z}) is not in free space")]
    InvalidPose { x: f64, z: f64 },
    #[error("map has no free cell")]
    NoFreeSpace,
    #[error("no path")]
    NoPath,
    #[error("invalid endpoint: cell ({row}, {col}) is blocked or outside the map")]
    InvalidEndpoint { row: usize, col: usize },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("map image: {0}")]
    Image(#[from] image::ImageError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
