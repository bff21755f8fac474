//! sift: keypoint extraction, database building and matching localization.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use geoloss_core::pose::Pose;
use geoloss_features::matching::{descriptors_to_bytes, PoseDatabase};
use geoloss_features::{extract, localize_by_matching, Descriptor, FeatureError, Image, SiftConfig, DEFAULT_RATIO};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::run::{load_config, runtime, CliError, RunContext};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosedImage {
    pub image: PathBuf,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SiftCmdConfig {
    /// Query image (PGM).
    pub image: Option<PathBuf>,
    /// Existing database directory to localize the query against.
    pub database: Option<PathBuf>,
    /// Posed images to extract into a new database under the run directory.
    pub build: Vec<PosedImage>,
    pub ratio: f64,
    pub sift: SiftConfig,
}

impl Default for SiftCmdConfig {
    fn default() -> Self {
        SiftCmdConfig {
            image: None,
            database: None,
            build: Vec::new(),
            ratio: DEFAULT_RATIO,
            sift: SiftConfig::default(),
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct SiftArgs {
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub database: Option<PathBuf>,
    #[arg(long)]
    pub ratio: Option<f64>,
}

fn load_image(ctx: &mut RunContext, p: &Path) -> Result<Image, CliError> {
    ctx.input(p);
    Image::load(p).map_err(|e| runtime(anyhow::anyhow!("{}: {e}", p.display())))
}

fn extract_descriptors(img: &Image, cfg: &SiftConfig, p: &Path) -> Result<(String, Vec<Descriptor>), CliError> {
    let feats = extract(img, cfg).map_err(|e| runtime(anyhow::anyhow!("{}: {e}", p.display())))?;
    let mut csv = String::from("index,x,y,octave,scale,sigma,orientation_deg,response\n");
    for (i, f) in feats.iter().enumerate() {
        let k = &f.keypoint;
        let _ = writeln!(csv, "{i},{},{},{},{},{},{},{}", k.x, k.y, k.octave, k.scale, k.sigma, k.orientation, k.response);
    }
    Ok((csv, feats.into_iter().map(|f| f.descriptor).collect()))
}

pub fn sift_cmd(ctx: &mut RunContext, config: Option<&Path>, args: &SiftArgs, seed: Option<u64>) -> Result<(), CliError> {
    let mut cfg: SiftCmdConfig = load_config(config)?;
    if let Some(p) = &args.image {
        cfg.image = Some(p.clone());
    }
    if let Some(p) = &args.database {
        cfg.database = Some(p.clone());
    }
    if let Some(r) = args.ratio {
        cfg.ratio = r;
    }
    ctx.seed = seed.unwrap_or(0);
    ctx.record_config(&cfg)?;
    cfg.sift.validate().map_err(|e| CliError::config("sift", e))?;
    if !(cfg.ratio > 0.0 && cfg.ratio <= 1.0) {
        return Err(CliError::config("ratio", "must lie in (0, 1]"));
    }
    if cfg.image.is_none() && cfg.build.is_empty() {
        return Err(CliError::config("image", "give a query image, a build list, or both"));
    }

    let mut built = None;
    if !cfg.build.is_empty() {
        let images: Vec<Image> = cfg.build.iter().map(|e| load_image(ctx, &e.image)).collect::<Result<_, _>>()?;
        let extracted: Vec<(String, Vec<Descriptor>)> = images
            .par_iter()
            .zip(&cfg.build)
            .map(|(img, e)| extract_descriptors(img, &cfg.sift, &e.image))
            .collect::<Result<_, _>>()?;
        let mut db = PoseDatabase::default();
        for (i, ((_, ds), e)) in extracted.into_iter().zip(&cfg.build).enumerate() {
            db.push(format!("{i:04}"), ds, e.pose);
        }
        db.save(&ctx.dir.join("database")).map_err(runtime)?;
        ctx.output("database/index.json");
        for e in &db.entries {
            ctx.output(&format!("database/{}.desc", e.name));
        }
        println!("database of {} images", db.entries.len());
        built = Some(db);
    }

    if let Some(p) = cfg.image.clone() {
        let img = load_image(ctx, &p)?;
        let (csv, ds) = extract_descriptors(&img, &cfg.sift, &p)?;
        ctx.write("keypoints.csv", csv)?;
        ctx.write("descriptors.desc", descriptors_to_bytes(&ds))?;
        println!("{} features", ds.len());
        let db = match (&cfg.database, built) {
            (Some(dir), _) => {
                ctx.input(dir);
                Some(PoseDatabase::load(dir).map_err(runtime)?)
            }
            (None, b) => b,
        };
        if let Some(db) = db {
            let loc = localize_by_matching(&ds, &db, cfg.ratio).map_err(|e| match e {
                FeatureError::NoMatch => runtime(anyhow::anyhow!("no match")),
                other => runtime(other),
            })?;
            ctx.write_json(
                "localization.json",
                &json!({
                    "index": loc.index,
                    "name": db.entries[loc.index].name,
                    "matches": loc.matches,
                    "query_features": ds.len(),
                    "pose": loc.pose,
                }),
            )?;
            println!("matched database image {} with {} matches", loc.index, loc.matches);
        }
    }
    Ok(())
}
