//! train, compare-losses, gridsearch and eval.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use geoloss_core::datasets::SceneDataset;
use geoloss_core::eval::{evaluate_predictions, histogram_csv, histogram_svg, median_errors, ErrorRecord};
use geoloss_core::learn::{
    compare_formulations, comparison_csv, generate_scene_dataset, grid_csv, grid_search, init_model, test_errors, train, GridSearchSpec,
    RegressorConfig, SyntheticScene, TrainConfig, DEFAULT_DATA_SEED, DEFAULT_TEST_SAMPLES, DEFAULT_TRAIN_SAMPLES,
};
use geoloss_core::datasets::Observation;
use geoloss_core::losses::{AlphaReading, LossFormulation, LossWeights};
use geoloss_core::pose::{Pose, Position, Quaternion};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::run::{load_config, runtime, CliError, RunContext};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Scene dataset JSON; when absent a synthetic scene is generated.
    pub path: Option<PathBuf>,
    pub synthetic: SyntheticScene,
    pub train_samples: usize,
    pub test_samples: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            path: None,
            synthetic: SyntheticScene::default(),
            train_samples: DEFAULT_TRAIN_SAMPLES,
            test_samples: DEFAULT_TEST_SAMPLES,
            seed: DEFAULT_DATA_SEED,
        }
    }
}

impl DataConfig {
    fn load(&self, ctx: &mut RunContext) -> Result<SceneDataset, CliError> {
        match &self.path {
            Some(p) => {
                ctx.input(p);
                let text = std::fs::read_to_string(p).map_err(|e| runtime(anyhow::anyhow!("{}: {e}", p.display())))?;
                SceneDataset::from_json(&text).map_err(runtime)
            }
            None => {
                self.synthetic.validate().map_err(|e| CliError::config("data.synthetic", e))?;
                generate_scene_dataset(&self.synthetic, self.train_samples, self.test_samples, self.seed).map_err(|e| CliError::config("data", e))
            }
        }
    }
}

fn check_input_dim(model: &RegressorConfig, dataset: &SceneDataset) -> Result<(), CliError> {
    let dim = dataset.samples.iter().find_map(|s| match &s.observation {
        Observation::Features(v) => Some(v.len()),
        Observation::Image(_) => None,
    });
    match dim {
        Some(d) if d != model.input_dim => Err(CliError::config("model.input_dim", format!("is {}, but observations have {d} features", model.input_dim))),
        None => Err(CliError::config("data.path", "dataset has no feature observations")),
        _ => Ok(()),
    }
}

fn check_training(t: &TrainConfig) -> Result<(), CliError> {
    if t.batch_size == 0 {
        return Err(CliError::config("training.batch_size", "must be at least 1"));
    }
    if !(t.learning_rate >= 0.0 && t.learning_rate.is_finite()) {
        return Err(CliError::config("training.learning_rate", "must be finite and non-negative"));
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainCmdConfig {
    pub data: DataConfig,
    pub model: RegressorConfig,
    /// `training.seed` is the run's root seed.
    pub training: TrainConfig,
    pub loss_id: u8,
    /// Replaces the tabulated weights of `loss_id`.
    pub weights: Option<LossWeights>,
    pub alpha: AlphaReading,
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub loss_id: Option<u8>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Scene dataset JSON to train on instead of the synthetic scene.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

fn prediction_csv(model_preds: &[(Pose, Pose)]) -> String {
    let mut s = String::from("index,pred_x,pred_y,pred_z,pred_qw,pred_qx,pred_qy,pred_qz,true_x,true_y,true_z,true_qw,true_qx,true_qy,true_qz\n");
    for (i, (p, t)) in model_preds.iter().enumerate() {
        let (a, b) = (p.rotation, t.rotation);
        let _ = writeln!(
            s,
            "{i},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            p.position.x, p.position.y, p.position.z, a.w, a.x, a.y, a.z, t.position.x, t.position.y, t.position.z, b.w, b.x, b.y, b.z
        );
    }
    s
}

pub fn train_cmd(ctx: &mut RunContext, config: Option<&Path>, args: &TrainArgs, seed: Option<u64>) -> Result<(), CliError> {
    let mut cfg: TrainCmdConfig = load_config(config)?;
    if let Some(v) = args.loss_id {
        cfg.loss_id = v;
    }
    if let Some(v) = args.iterations {
        cfg.training.iterations = v;
    }
    if let Some(v) = args.batch_size {
        cfg.training.batch_size = v;
    }
    if let Some(p) = &args.dataset {
        cfg.data.path = Some(p.clone());
    }
    if let Some(s) = seed {
        cfg.training.seed = s;
    }
    ctx.seed = cfg.training.seed;
    ctx.record_config(&cfg)?;
    check_training(&cfg.training)?;
    let mut f = match cfg.weights {
        Some(w) => LossFormulation::with_weights(cfg.loss_id, w).map_err(|e| CliError::config("weights", e))?,
        None => LossFormulation::new(cfg.loss_id).map_err(|e| CliError::config("loss_id", e))?,
    };
    f.alpha = cfg.alpha;

    let dataset = cfg.data.load(ctx)?;
    check_input_dim(&cfg.model, &dataset)?;
    let init = init_model(&cfg.model, &dataset, cfg.training.seed).map_err(runtime)?;
    let out = train(&init, &dataset, &f, &cfg.training).map_err(runtime)?;
    let (median_position, median_rotation) = test_errors(&out.model, &dataset).map_err(runtime)?;

    let test: Vec<_> = dataset.test().collect();
    let obs: Vec<&[f64]> = test
        .iter()
        .filter_map(|s| match &s.observation {
            Observation::Features(v) => Some(v.as_slice()),
            Observation::Image(_) => None,
        })
        .collect();
    let preds = out.model.forward_batch(&obs).map_err(runtime)?;
    let pairs: Vec<(Pose, Pose)> = preds.iter().zip(&test).map(|(p, s)| (p[2], s.pose)).collect();

    ctx.ensure_dir()?;
    out.model.save(&ctx.dir.join("model.bin")).map_err(runtime)?;
    ctx.output("model.bin");
    ctx.write_json("model.json", &cfg.model)?;
    ctx.write("loss_curve.csv", out.loss_curve_csv())?;
    ctx.write("predictions.csv", prediction_csv(&pairs))?;
    ctx.write_json(
        "metrics.json",
        &json!({
            "loss_id": cfg.loss_id,
            "formula": f.formula(),
            "median_position_m": median_position,
            "median_rotation_deg": median_rotation,
            "final_loss": out.loss_curve.last(),
            "scene_extent_m": dataset.extent.extent(),
        }),
    )?;
    println!("loss {} ({}): median position {median_position:.4} m, median rotation {median_rotation:.3} deg", cfg.loss_id, f.formula());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareCmdConfig {
    pub data: DataConfig,
    pub model: RegressorConfig,
    pub training: TrainConfig,
    pub ids: Vec<u8>,
}

impl Default for CompareCmdConfig {
    fn default() -> Self {
        CompareCmdConfig {
            data: DataConfig::default(),
            model: RegressorConfig::default(),
            training: TrainConfig::default(),
            ids: (0..=9).collect(),
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct CompareArgs {
    /// Comma-separated formulation ids.
    #[arg(long, value_delimiter = ',')]
    pub ids: Option<Vec<u8>>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

pub fn compare_cmd(ctx: &mut RunContext, config: Option<&Path>, args: &CompareArgs, seed: Option<u64>) -> Result<(), CliError> {
    let mut cfg: CompareCmdConfig = load_config(config)?;
    if let Some(ids) = &args.ids {
        cfg.ids = ids.clone();
    }
    if let Some(v) = args.iterations {
        cfg.training.iterations = v;
    }
    if let Some(p) = &args.dataset {
        cfg.data.path = Some(p.clone());
    }
    if let Some(s) = seed {
        cfg.training.seed = s;
    }
    ctx.seed = cfg.training.seed;
    ctx.record_config(&cfg)?;
    check_training(&cfg.training)?;
    if cfg.ids.is_empty() {
        return Err(CliError::config("ids", "at least one formulation id is needed"));
    }
    for id in &cfg.ids {
        LossFormulation::new(*id).map_err(|e| CliError::config("ids", e))?;
    }
    let dataset = cfg.data.load(ctx)?;
    check_input_dim(&cfg.model, &dataset)?;
    let rows = compare_formulations(&cfg.ids, &dataset, &cfg.model, &cfg.training).map_err(runtime)?;
    ctx.write("comparison.csv", comparison_csv(&rows))?;
    for r in &rows {
        println!("{:>2}  {:<40} {:.4} m  {:.3} deg", r.id, r.formula, r.median_position, r.median_rotation_deg);
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridCmdConfig {
    pub data: DataConfig,
    pub model: RegressorConfig,
    pub training: TrainConfig,
    pub grid: GridSearchSpec,
}

#[derive(Debug, clap::Args)]
pub struct GridArgs {
    /// Comma-separated rotational-term scales.
    #[arg(long, value_delimiter = ',')]
    pub rot_scales: Option<Vec<f64>>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

pub fn grid_cmd(ctx: &mut RunContext, config: Option<&Path>, args: &GridArgs, seed: Option<u64>) -> Result<(), CliError> {
    let mut cfg: GridCmdConfig = load_config(config)?;
    if let Some(v) = &args.rot_scales {
        cfg.grid.rot_scales = v.clone();
    }
    if let Some(v) = args.iterations {
        cfg.training.iterations = v;
    }
    if let Some(p) = &args.dataset {
        cfg.data.path = Some(p.clone());
    }
    if let Some(s) = seed {
        cfg.training.seed = s;
    }
    ctx.seed = cfg.training.seed;
    ctx.record_config(&cfg)?;
    check_training(&cfg.training)?;
    LossFormulation::new(cfg.grid.base_id).map_err(|e| CliError::config("grid.base_id", e))?;
    for (key, empty) in [
        ("grid.rot_scales", cfg.grid.rot_scales.is_empty()),
        ("grid.geo_scales", cfg.grid.geo_scales.is_empty()),
        ("grid.omega_scales", cfg.grid.omega_scales.is_empty()),
        ("grid.beta_scales", cfg.grid.beta_scales.is_empty()),
    ] {
        if empty {
            return Err(CliError::config(key, "needs at least one value"));
        }
    }
    for cell in cfg.grid.cells() {
        cell.weights().validate().map_err(|e| CliError::config("grid", e))?;
    }
    let dataset = cfg.data.load(ctx)?;
    check_input_dim(&cfg.model, &dataset)?;
    let rows = grid_search(&cfg.grid, &dataset, &cfg.model, &cfg.training).map_err(runtime)?;
    ctx.write("grid.csv", grid_csv(&rows))?;
    if let Some(best) = rows.first() {
        println!(
            "best cell {} (rot_scale {}): {:.4} m, {:.3} deg",
            best.cell_index, best.cell.rot_scale, best.median_position, best.median_rotation_deg
        );
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalCmdConfig {
    /// CSV as written by `train` (`predictions.csv`).
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct PredictionRow {
    pred_x: f64,
    pred_y: f64,
    pred_z: f64,
    pred_qw: f64,
    pred_qx: f64,
    pred_qy: f64,
    pred_qz: f64,
    true_x: f64,
    true_y: f64,
    true_z: f64,
    true_qw: f64,
    true_qx: f64,
    true_qy: f64,
    true_qz: f64,
}

pub fn read_predictions(path: &Path) -> anyhow::Result<Vec<(Pose, Pose)>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<PredictionRow>().enumerate() {
        let r = row.map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        let line = i + 2;
        let q = |w, x, y, z| Quaternion::new(w, x, y, z).map_err(|e| anyhow::anyhow!("{}:{line}: {e}", path.display()));
        out.push((
            Pose::new(Position::new(r.pred_x, r.pred_y, r.pred_z), q(r.pred_qw, r.pred_qx, r.pred_qy, r.pred_qz)?),
            Pose::new(Position::new(r.true_x, r.true_y, r.true_z), q(r.true_qw, r.true_qx, r.true_qy, r.true_qz)?),
        ));
    }
    Ok(out)
}

fn errors_csv(records: &[ErrorRecord]) -> String {
    let mut s = String::from("index,positional_error_m,rotational_error_deg\n");
    for (i, r) in records.iter().enumerate() {
        let _ = writeln!(s, "{i},{},{}", r.positional_error, r.rotational_error);
    }
    s
}

pub fn eval_cmd(ctx: &mut RunContext, config: Option<&Path>, args: &EvalArgs, seed: Option<u64>) -> Result<(), CliError> {
    let mut cfg: EvalCmdConfig = load_config(config)?;
    if let Some(p) = &args.predictions {
        cfg.predictions = Some(p.clone());
    }
    ctx.seed = seed.unwrap_or(0);
    ctx.record_config(&cfg)?;
    let path = cfg.predictions.clone().ok_or_else(|| CliError::config("predictions", "a predictions CSV is required"))?;
    ctx.input(&path);
    let pairs = read_predictions(&path).map_err(runtime)?;
    if pairs.is_empty() {
        return Err(runtime(anyhow::anyhow!("{}: no predictions", path.display())));
    }
    let records = evaluate_predictions(&pairs);
    let (pos, rot) = median_errors(&records).map_err(runtime)?;
    let positional: Vec<f64> = records.iter().map(|r| r.positional_error).collect();
    let rotational: Vec<f64> = records.iter().map(|r| r.rotational_error).collect();
    ctx.write("errors.csv", errors_csv(&records))?;
    ctx.write("histogram.csv", histogram_csv(&records).map_err(runtime)?)?;
    ctx.write("position_cdf.svg", histogram_svg(&positional, "Positional error", "error (m)").map_err(runtime)?)?;
    ctx.write("rotation_cdf.svg", histogram_svg(&rotational, "Rotational error", "error (deg)").map_err(runtime)?)?;
    ctx.write_json(
        "summary.json",
        &json!({ "samples": records.len(), "median_position_m": pos, "median_rotation_deg": rot }),
    )?;
    println!("{} samples: median position {pos:.4} m, median rotation {rot:.3} deg", records.len());
    Ok(())
}
