//! pathmetrics and parse-colmap.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use geoloss_core::datasets::{model_to_dataset, parse_colmap_dir, recon_stats, SplitMode};
use geoloss_core::pathmetrics::{
    compound_path_report, line_fit_residuals, path_svg, xz_spread, yaw_concentration, yaw_histogram, PathTrace, DEFAULT_ARROW_STRIDE, YAW_BINS,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::run::{load_config, runtime, CliError, RunContext};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathCmdConfig {
    /// CSV with header `t,x,y,z,qw,qx,qy,qz`.
    pub trace: Option<PathBuf>,
    /// Samples per averaged heading arrow.
    pub stride: usize,
    /// Metres per second above which a step is flagged.
    pub max_speed: f64,
}

impl Default for PathCmdConfig {
    fn default() -> Self {
        PathCmdConfig {
            trace: None,
            stride: DEFAULT_ARROW_STRIDE,
            max_speed: 3.0,
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct PathArgs {
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub stride: Option<usize>,
}

pub fn pathmetrics_cmd(ctx: &mut RunContext, config: Option<&Path>, args: &PathArgs, seed: Option<u64>) -> Result<(), CliError> {
    let mut cfg: PathCmdConfig = load_config(config)?;
    if let Some(p) = &args.trace {
        cfg.trace = Some(p.clone());
    }
    if let Some(s) = args.stride {
        cfg.stride = s;
    }
    ctx.seed = seed.unwrap_or(0);
    ctx.record_config(&cfg)?;
    if cfg.stride == 0 {
        return Err(CliError::config("stride", "must be at least 1"));
    }
    if !(cfg.max_speed > 0.0) {
        return Err(CliError::config("max_speed", "must be positive"));
    }
    let path = cfg.trace.clone().ok_or_else(|| CliError::config("trace", "a trace CSV is required"))?;
    ctx.input(&path);
    let text = std::fs::read_to_string(&path).map_err(|e| runtime(anyhow::anyhow!("{}: {e}", path.display())))?;
    let trace = PathTrace::from_csv(&text).map_err(|e| runtime(anyhow::anyhow!("{}: {e}", path.display())))?;

    let spread = xz_spread(&trace).map_err(runtime)?;
    let fit = line_fit_residuals(&trace).ok();
    let report = compound_path_report(&trace, cfg.stride, cfg.max_speed).map_err(runtime)?;
    let concentration = yaw_concentration(&trace).ok();
    let hist = yaw_histogram(&trace).ok();

    if let Some(h) = &hist {
        let mut s = String::from("bin,start_deg,count,removed\n");
        for k in 0..YAW_BINS {
            let _ = writeln!(s, "{k},{},{},{}", k * 10, h.counts[k], u8::from(h.removed_bins.contains(&k)));
        }
        ctx.write("yaw_histogram.csv", s)?;
    }
    let mut arrows = String::from("x,z,yaw_deg\n");
    for a in &report.arrows {
        let _ = writeln!(arrows, "{},{},{}", a.x, a.z, a.yaw_deg);
    }
    ctx.write("arrows.csv", arrows)?;
    ctx.write("path.svg", path_svg(&report, fit.as_ref(), "Regressed path"))?;
    ctx.write_json(
        "summary.json",
        &json!({
            "samples": trace.len(),
            "xz_spread_m": spread,
            "line_fit_total_sq_m2": fit.map(|f| f.total_squared_residuals),
            "line_fit_per_sample_m2": fit.map(|f| f.per_sample),
            "polyline_length_m": report.polyline_length,
            "speed_flags": report.speed_flags,
            "yaw_circular_mean_deg": concentration.map(|c| c.0),
            "yaw_circular_std_deg": concentration.map(|c| c.1),
            "yaw_bin_std": hist.as_ref().map(|h| h.std),
            "yaw_bin_std_filtered": hist.as_ref().map(|h| h.filtered_std),
            "yaw_bins_removed": hist.as_ref().map(|h| h.removed_bins.clone()),
        }),
    )?;
    println!("{} samples, spread {spread:.4} m, length {:.3} m", trace.len(), report.polyline_length);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ColmapCmdConfig {
    /// Directory with `cameras.txt`, `images.txt` and `points3D.txt`.
    pub model_dir: Option<PathBuf>,
    pub test_fraction: f64,
    pub split: SplitMode,
    pub seed: u64,
}

impl Default for ColmapCmdConfig {
    fn default() -> Self {
        ColmapCmdConfig {
            model_dir: None,
            test_fraction: 0.25,
            split: SplitMode::Random,
            seed: 0,
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct ColmapArgs {
    #[arg(long)]
    pub model_dir: Option<PathBuf>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
}

pub fn colmap_cmd(ctx: &mut RunContext, config: Option<&Path>, args: &ColmapArgs, seed: Option<u64>) -> Result<(), CliError> {
    let mut cfg: ColmapCmdConfig = load_config(config)?;
    if let Some(p) = &args.model_dir {
        cfg.model_dir = Some(p.clone());
    }
    if let Some(f) = args.test_fraction {
        cfg.test_fraction = f;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    ctx.seed = cfg.seed;
    ctx.record_config(&cfg)?;
    if !(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0) {
        return Err(CliError::config("test_fraction", "must lie in (0, 1)"));
    }
    let dir = cfg.model_dir.clone().ok_or_else(|| CliError::config("model_dir", "a model directory is required"))?;
    ctx.input(&dir);
    let model = parse_colmap_dir(&dir).map_err(runtime)?;
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into());
    let dataset = model_to_dataset(&model, &name, cfg.test_fraction, cfg.seed, cfg.split).map_err(runtime)?;

    let mut images = String::from("image_id,name,camera_id,x,y,z,qw,qx,qy,qz,points2d,split\n");
    for (i, (id, im)) in model.images.iter().enumerate() {
        let p = im.pose();
        let q = p.rotation;
        let split = if dataset.split.test.contains(&i) { "test" } else { "train" };
        let _ = writeln!(
            images,
            "{id},{},{},{},{},{},{},{},{},{},{},{split}",
            im.name,
            im.camera_id,
            p.position.x,
            p.position.y,
            p.position.z,
            q.w,
            q.x,
            q.y,
            q.z,
            im.points2d.len()
        );
    }
    ctx.write("images.csv", images)?;
    ctx.write("model/cameras.txt", model.cameras_text())?;
    ctx.write("model/images.txt", model.images_text())?;
    ctx.write("model/points3D.txt", model.points_text())?;
    ctx.write("dataset.json", dataset.to_json().map_err(runtime)? + "\n")?;
    let stats = recon_stats(&model, &[]);
    ctx.write_json("stats.json", &stats)?;
    println!(
        "{} cameras, {} images, {} points; {} train / {} test",
        model.cameras.len(),
        model.images.len(),
        model.points.len(),
        dataset.split.train.len(),
        dataset.split.test.len()
    );
    Ok(())
}
