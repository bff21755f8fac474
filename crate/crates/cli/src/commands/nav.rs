//! mcl-sim and plan.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use geoloss_navsim::grid::OccupancyGrid;
use geoloss_navsim::plan::dijkstra_plan;
use geoloss_navsim::sim::{builtin_map, builtin_scenario, simulate_kidnapped, BuiltinMap, Scenario, CONVERGENCE_STEPS};
use geoloss_navsim::NavError;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::run::{load_config, runtime, CliError, RunContext};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MclCmdConfig {
    /// Scenario JSON; when absent the built-in scenario for `map` runs.
    pub scenario: Option<PathBuf>,
    pub map: BuiltinMap,
    pub runs: usize,
    pub steps: Option<usize>,
    pub particles: Option<usize>,
    /// Run `i` uses seed `seed + i`.
    pub seed: u64,
}

impl Default for MclCmdConfig {
    fn default() -> Self {
        MclCmdConfig {
            scenario: None,
            map: BuiltinMap::Room,
            runs: 1,
            steps: None,
            particles: None,
            seed: 0,
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct MclArgs {
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Built-in map: room or corridor.
    #[arg(long, value_parser = parse_builtin)]
    pub map: Option<BuiltinMap>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub particles: Option<usize>,
}

pub fn parse_builtin(s: &str) -> Result<BuiltinMap, String> {
    match s {
        "room" => Ok(BuiltinMap::Room),
        "corridor" => Ok(BuiltinMap::Corridor),
        other => Err(format!("unknown map `{other}` (expected room or corridor)")),
    }
}

fn nav_config_error(e: NavError) -> CliError {
    match e {
        NavError::InvalidArgument(_) | NavError::InvalidPose { .. } | NavError::Json(_) => CliError::config("scenario", e),
        other => runtime(other),
    }
}

pub fn mcl_cmd(ctx: &mut RunContext, config: Option<&Path>, args: &MclArgs, seed: Option<u64>) -> Result<(), CliError> {
    let mut cfg: MclCmdConfig = load_config(config)?;
    if let Some(p) = &args.scenario {
        cfg.scenario = Some(p.clone());
    }
    if let Some(m) = args.map {
        cfg.map = m;
    }
    if let Some(v) = args.runs {
        cfg.runs = v;
    }
    if args.steps.is_some() {
        cfg.steps = args.steps;
    }
    if args.particles.is_some() {
        cfg.particles = args.particles;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    ctx.seed = cfg.seed;
    ctx.record_config(&cfg)?;
    if cfg.runs == 0 {
        return Err(CliError::config("runs", "must be at least 1"));
    }

    let (mut scenario, grid) = match &cfg.scenario {
        Some(p) => {
            ctx.input(p);
            let text = std::fs::read_to_string(p).map_err(|e| runtime(anyhow::anyhow!("{}: {e}", p.display())))?;
            let s = Scenario::from_json(&text).map_err(nav_config_error)?;
            let grid = s.load_map(p.parent()).map_err(runtime)?;
            (s, grid)
        }
        None => (builtin_scenario(cfg.map), builtin_map(cfg.map)),
    };
    if let Some(n) = cfg.steps {
        scenario.steps = n;
    }
    if let Some(n) = cfg.particles {
        scenario.mcl.particles = n;
    }
    scenario.validate(&grid).map_err(nav_config_error)?;

    let horizon = CONVERGENCE_STEPS.min(scenario.steps);
    let mut runs = String::from("run,seed,first_localized,final_error_m,final_near_truth,final_converged\n");
    let mut localized = 0;
    for i in 0..cfg.runs {
        let s = cfg.seed.wrapping_add(i as u64);
        let log = simulate_kidnapped(&grid, &scenario, s).map_err(runtime)?;
        if i == 0 {
            ctx.write("trajectory.csv", log.to_csv())?;
        }
        let first = log.first_localized(scenario.mcl.convergence_fraction);
        if first.is_some_and(|f| f <= horizon) {
            localized += 1;
        }
        let last = log.steps.last().expect("at least one step");
        let _ = writeln!(
            runs,
            "{i},{s},{},{},{},{}",
            first.map(|f| f.to_string()).unwrap_or_default(),
            last.error,
            last.near_truth,
            u8::from(last.converged)
        );
    }
    ctx.write("runs.csv", runs)?;
    ctx.write_json("scenario.json", &scenario)?;
    ctx.write_json(
        "summary.json",
        &json!({ "runs": cfg.runs, "localized_within_horizon": localized, "horizon_steps": horizon }),
    )?;
    println!("{localized}/{} runs localized within {horizon} steps", cfg.runs);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanCmdConfig {
    /// PGM occupancy map with a JSON sidecar; overrides `builtin`.
    pub map_file: Option<PathBuf>,
    pub builtin: BuiltinMap,
    /// `[row, col]`
    pub start: [usize; 2],
    pub goal: [usize; 2],
    /// Metres.
    pub inflation_radius: f64,
}

impl Default for PlanCmdConfig {
    fn default() -> Self {
        PlanCmdConfig {
            map_file: None,
            builtin: BuiltinMap::Room,
            start: [12, 12],
            goal: [80, 110],
            inflation_radius: 0.2,
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub map_file: Option<PathBuf>,
    #[arg(long, value_parser = parse_builtin)]
    pub map: Option<BuiltinMap>,
    /// Start cell as `row,col`.
    #[arg(long, value_delimiter = ',')]
    pub start: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub goal: Option<Vec<usize>>,
    #[arg(long)]
    pub radius: Option<f64>,
}

pub fn plan_cmd(ctx: &mut RunContext, config: Option<&Path>, args: &PlanArgs, seed: Option<u64>) -> Result<(), CliError> {
    let mut cfg: PlanCmdConfig = load_config(config)?;
    if let Some(p) = &args.map_file {
        cfg.map_file = Some(p.clone());
    }
    if let Some(m) = args.map {
        cfg.builtin = m;
    }
    for (key, arg, slot) in [("start", &args.start, &mut cfg.start), ("goal", &args.goal, &mut cfg.goal)] {
        match arg.as_deref() {
            Some([r, c]) => *slot = [*r, *c],
            Some(_) => return Err(CliError::config(key, "expected `row,col`")),
            None => {}
        }
    }
    if let Some(r) = args.radius {
        cfg.inflation_radius = r;
    }
    ctx.seed = seed.unwrap_or(0);
    ctx.record_config(&cfg)?;
    if !(cfg.inflation_radius >= 0.0 && cfg.inflation_radius.is_finite()) {
        return Err(CliError::config("inflation_radius", "must be finite and non-negative"));
    }
    let grid = match &cfg.map_file {
        Some(p) => {
            ctx.input(p);
            OccupancyGrid::load(p).map_err(runtime)?
        }
        None => builtin_map(cfg.builtin),
    };
    let start = (cfg.start[0], cfg.start[1]);
    let goal = (cfg.goal[0], cfg.goal[1]);
    let plan = dijkstra_plan(&grid, start, goal, cfg.inflation_radius).map_err(|e| match e {
        NavError::InvalidEndpoint { row, col } => {
            let key = if (row, col) == start { "start" } else { "goal" };
            CliError::config(key, e)
        }
        other => runtime(other),
    })?;
    ctx.write("path.csv", plan.to_csv(&grid))?;
    ctx.write_json(
        "plan.json",
        &json!({
            "cells": plan.cells.len(),
            "straight_moves": plan.cost.straight,
            "diagonal_moves": plan.cost.diagonal,
            "cost_cells": plan.cost.value(),
            "cost_m": plan.cost.value() / grid.resolution(),
        }),
    )?;
    println!("path of {} cells, cost {:.4} m", plan.cells.len(), plan.cost.value() / grid.resolution());
    Ok(())
}
