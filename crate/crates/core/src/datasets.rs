//! Pose-labelled dataset ingestion.
//!
//! Supported sources:
//! * COLMAP sparse models in text form (`cameras.txt`, `images.txt`,
//!   `points3D.txt`),
//! * 7-Scenes style `frame-XXXXXX.pose.txt` files (4×4 camera-to-world matrix),
//! * a JSON manifest of a [`SceneDataset`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pose::{orthonormality_drift, CameraIntrinsics, Pose, Position, Quaternion, RigidTransform};

/// Rotation blocks drifting further than this are snapped to the nearest rotation.
pub const REORTHONORMALIZE_TOL: f64 = 1e-6;
/// Rotation blocks drifting further than this are rejected.
pub const CORRUPT_POSE_TOL: f64 = 1e-2;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error("unsupported camera model `{0}`")]
    UnsupportedModel(String),
    #[error("image {image} references unknown camera {camera}")]
    UnresolvedCamera { image: u32, camera: u32 },
    #[error("model contains no images")]
    EmptyModel,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("corrupt pose: {0}")]
    CorruptPose(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}

fn read(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CameraModel {
    SimplePinhole,
    Pinhole,
}

impl CameraModel {
    fn parse(s: &str) -> Result<Self, DatasetError> {
        match s {
            "SIMPLE_PINHOLE" => Ok(CameraModel::SimplePinhole),
            "PINHOLE" => Ok(CameraModel::Pinhole),
            other => Err(DatasetError::UnsupportedModel(other.to_string())),
        }
    }

    fn name(self) -> &'static str {
        match self {
            CameraModel::SimplePinhole => "SIMPLE_PINHOLE",
            CameraModel::Pinhole => "PINHOLE",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub model: CameraModel,
    pub width: u32,
    pub height: u32,
    pub intrinsics: CameraIntrinsics,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point2D {
    pub x: f64,
    pub y: f64,
    /// `-1` when the observation was not triangulated.
    pub point3d_id: i64,
}

/// A registered image. `rotation`/`translation` map world to camera.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub rotation: Quaternion,
    pub translation: Vector3<f64>,
    pub camera_id: u32,
    pub name: String,
    pub points2d: Vec<Point2D>,
}

impl Image {
    pub fn world_to_camera(&self) -> RigidTransform {
        RigidTransform::from_quaternion(self.rotation, self.translation)
    }

    /// Camera pose in the world (centre `−Rᵀt`, orientation `Rᵀ`).
    pub fn pose(&self) -> Pose {
        Pose::new(
            self.world_to_camera().camera_center(),
            self.rotation.conjugate(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Point3D {
    pub position: Position,
    pub color: [u8; 3],
    pub error: f64,
    /// `(image id, point2d index)` pairs.
    pub track: Vec<(u32, u32)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseModel {
    pub cameras: BTreeMap<u32, Camera>,
    pub images: BTreeMap<u32, Image>,
    pub points: BTreeMap<u64, Point3D>,
}

struct Lines<'a> {
    file: &'a str,
    text: &'a str,
}

impl<'a> Lines<'a> {
    /// Non-comment lines with 1-based line numbers.
    fn content(&self) -> impl Iterator<Item = (usize, &'a str)> {
        self.text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
            .filter(|(_, l)| !l.trim_start().starts_with('#'))
    }

    fn err(&self, line: usize, message: impl Into<String>) -> DatasetError {
        DatasetError::Parse {
            file: self.file.to_string(),
            line,
            message: message.into(),
        }
    }

    fn num<T: std::str::FromStr>(&self, line: usize, field: &str, what: &str) -> Result<T, DatasetError> {
        field
            .parse()
            .map_err(|_| self.err(line, format!("cannot parse {what} from `{field}`")))
    }
}

fn parse_cameras(src: &Lines) -> Result<BTreeMap<u32, Camera>, DatasetError> {
    let mut out = BTreeMap::new();
    for (ln, line) in src.content() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        if f.len() < 4 {
            return Err(src.err(ln, format!("expected CAMERA_ID MODEL WIDTH HEIGHT PARAMS[], got {} fields", f.len())));
        }
        let id: u32 = src.num(ln, f[0], "camera id")?;
        let model = CameraModel::parse(f[1])?;
        let width = src.num(ln, f[2], "width")?;
        let height = src.num(ln, f[3], "height")?;
        let params: Vec<f64> = f[4..]
            .iter()
            .map(|p| src.num(ln, p, "camera parameter"))
            .collect::<Result<_, _>>()?;
        let expected = match model {
            CameraModel::SimplePinhole => 3,
            CameraModel::Pinhole => 4,
        };
        if params.len() != expected {
            return Err(src.err(ln, format!("{} needs {expected} parameters, got {}", model.name(), params.len())));
        }
        let intrinsics = match model {
            CameraModel::SimplePinhole => CameraIntrinsics::new(params[0], params[0], params[1], params[2]),
            CameraModel::Pinhole => CameraIntrinsics::new(params[0], params[1], params[2], params[3]),
        }
        .map_err(|e| src.err(ln, e.to_string()))?;
        if out
            .insert(id, Camera { model, width, height, intrinsics })
            .is_some()
        {
            return Err(src.err(ln, format!("duplicate camera id {id}")));
        }
    }
    Ok(out)
}

fn parse_images(src: &Lines) -> Result<BTreeMap<u32, Image>, DatasetError> {
    let mut out = BTreeMap::new();
    let mut lines = src.content();
    while let Some((ln, line)) = lines.next() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        if f.len() < 10 {
            return Err(src.err(
                ln,
                format!("expected IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME, got {} fields", f.len()),
            ));
        }
        let id: u32 = src.num(ln, f[0], "image id")?;
        let mut v = [0.0; 7];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = src.num(ln, f[1 + k], "pose component")?;
        }
        let rotation = Quaternion::new(v[0], v[1], v[2], v[3]).map_err(|e| src.err(ln, e.to_string()))?;
        let camera_id = src.num(ln, f[8], "camera id")?;
        let name = f[9..].join(" ");

        let mut points2d = Vec::new();
        if let Some((pln, pline)) = lines.next() {
            let p: Vec<&str> = pline.split_whitespace().collect();
            if p.len() % 3 != 0 {
                return Err(src.err(pln, "POINTS2D line must hold X Y POINT3D_ID triples"));
            }
            for t in p.chunks(3) {
                points2d.push(Point2D {
                    x: src.num(pln, t[0], "keypoint x")?,
                    y: src.num(pln, t[1], "keypoint y")?,
                    point3d_id: src.num(pln, t[2], "point3d id")?,
                });
            }
        }
        let image = Image {
            rotation,
            translation: Vector3::new(v[4], v[5], v[6]),
            camera_id,
            name,
            points2d,
        };
        if out.insert(id, image).is_some() {
            return Err(src.err(ln, format!("duplicate image id {id}")));
        }
    }
    Ok(out)
}

fn parse_points(src: &Lines) -> Result<BTreeMap<u64, Point3D>, DatasetError> {
    let mut out = BTreeMap::new();
    for (ln, line) in src.content() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        if f.len() < 8 || (f.len() - 8) % 2 != 0 {
            return Err(src.err(ln, format!("expected POINT3D_ID X Y Z R G B ERROR TRACK[], got {} fields", f.len())));
        }
        let id: u64 = src.num(ln, f[0], "point id")?;
        let position = Position::new(
            src.num(ln, f[1], "x")?,
            src.num(ln, f[2], "y")?,
            src.num(ln, f[3], "z")?,
        );
        let color = [
            src.num(ln, f[4], "red")?,
            src.num(ln, f[5], "green")?,
            src.num(ln, f[6], "blue")?,
        ];
        let error = src.num(ln, f[7], "reprojection error")?;
        let track = f[8..]
            .chunks(2)
            .map(|t| Ok((src.num(ln, t[0], "track image id")?, src.num(ln, t[1], "track point2d index")?)))
            .collect::<Result<_, DatasetError>>()?;
        if out
            .insert(id, Point3D { position, color, error, track })
            .is_some()
        {
            return Err(src.err(ln, format!("duplicate point id {id}")));
        }
    }
    Ok(out)
}

/// Parses the three text files of a sparse model from strings.
pub fn parse_colmap_str(cameras: &str, images: &str, points: &str) -> Result<SparseModel, DatasetError> {
    let model = SparseModel {
        cameras: parse_cameras(&Lines { file: "cameras.txt", text: cameras })?,
        images: parse_images(&Lines { file: "images.txt", text: images })?,
        points: parse_points(&Lines { file: "points3D.txt", text: points })?,
    };
    for (id, img) in &model.images {
        if !model.cameras.contains_key(&img.camera_id) {
            return Err(DatasetError::UnresolvedCamera {
                image: *id,
                camera: img.camera_id,
            });
        }
    }
    Ok(model)
}

pub fn parse_colmap_text(cameras: &Path, images: &Path, points: &Path) -> Result<SparseModel, DatasetError> {
    parse_colmap_str(&read(cameras)?, &read(images)?, &read(points)?).map_err(|e| match e {
        DatasetError::Parse { file, line, message } => {
            let path = [cameras, images, points]
                .into_iter()
                .find(|p| p.file_name().is_some_and(|n| n.to_string_lossy() == file))
                .map(|p| p.display().to_string())
                .unwrap_or(file);
            DatasetError::Parse { file: path, line, message }
        }
        other => other,
    })
}

/// Reads `cameras.txt`, `images.txt` and `points3D.txt` from a directory.
pub fn parse_colmap_dir(dir: &Path) -> Result<SparseModel, DatasetError> {
    parse_colmap_text(&dir.join("cameras.txt"), &dir.join("images.txt"), &dir.join("points3D.txt"))
}

impl SparseModel {
    pub fn cameras_text(&self) -> String {
        let mut s = String::from("# Camera list with one line of data per camera:\n#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n");
        let _ = writeln!(s, "# Number of cameras: {}", self.cameras.len());
        for (id, c) in &self.cameras {
            let k = &c.intrinsics;
            let _ = match c.model {
                CameraModel::SimplePinhole => writeln!(s, "{id} SIMPLE_PINHOLE {} {} {} {} {}", c.width, c.height, k.fx, k.cx, k.cy),
                CameraModel::Pinhole => writeln!(s, "{id} PINHOLE {} {} {} {} {} {}", c.width, c.height, k.fx, k.fy, k.cx, k.cy),
            };
        }
        s
    }

    pub fn images_text(&self) -> String {
        let mut s = String::from(
            "# Image list with two lines of data per image:\n#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n#   POINTS2D[] as (X, Y, POINT3D_ID)\n",
        );
        let _ = writeln!(s, "# Number of images: {}", self.images.len());
        for (id, im) in &self.images {
            let q = im.rotation;
            let t = im.translation;
            let _ = writeln!(s, "{id} {} {} {} {} {} {} {} {} {}", q.w, q.x, q.y, q.z, t.x, t.y, t.z, im.camera_id, im.name);
            let pts: Vec<String> = im.points2d.iter().map(|p| format!("{} {} {}", p.x, p.y, p.point3d_id)).collect();
            let _ = writeln!(s, "{}", pts.join(" "));
        }
        s
    }

    pub fn points_text(&self) -> String {
        let mut s = String::from("# 3D point list with one line of data per point:\n#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n");
        let _ = writeln!(s, "# Number of points: {}", self.points.len());
        for (id, p) in &self.points {
            let _ = write!(
                s,
                "{id} {} {} {} {} {} {} {}",
                p.position.x, p.position.y, p.position.z, p.color[0], p.color[1], p.color[2], p.error
            );
            for (img, idx) in &p.track {
                let _ = write!(s, " {img} {idx}");
            }
            s.push('\n');
        }
        s
    }

    pub fn write_dir(&self, dir: &Path) -> Result<(), DatasetError> {
        for (name, body) in [
            ("cameras.txt", self.cameras_text()),
            ("images.txt", self.images_text()),
            ("points3D.txt", self.points_text()),
        ] {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|source| DatasetError::Io { path, source })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl BoundingBox {
    pub fn of(points: impl IntoIterator<Item = Position>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = BoundingBox {
            min: first.into(),
            max: first.into(),
        };
        for p in it {
            for k in 0..3 {
                b.min[k] = b.min[k].min(p[k]);
                b.max[k] = b.max[k].max(p[k]);
            }
        }
        Some(b)
    }

    pub fn size(&self) -> [f64; 3] {
        std::array::from_fn(|k| self.max[k] - self.min[k])
    }

    /// Largest side length.
    pub fn extent(&self) -> f64 {
        self.size().into_iter().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observation {
    Features(Vec<f64>),
    Image(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub observation: Observation,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneDataset {
    pub name: String,
    pub extent: BoundingBox,
    pub samples: Vec<Sample>,
    pub split: Split,
}

impl SceneDataset {
    pub fn train(&self) -> impl Iterator<Item = &Sample> {
        self.split.train.iter().map(|i| &self.samples[*i])
    }

    pub fn test(&self) -> impl Iterator<Item = &Sample> {
        self.split.test.iter().map(|i| &self.samples[*i])
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let n = self.samples.len();
        let mut seen = vec![false; n];
        for &i in self.split.train.iter().chain(&self.split.test) {
            if i >= n {
                return Err(DatasetError::InvalidArgument(format!("split index {i} out of range")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(DatasetError::InvalidArgument(format!("sample {i} appears twice in the split")));
            }
        }
        for s in &self.samples {
            let q = s.pose.rotation;
            let norm = q.to_array().iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 || q.w < 0.0 {
                return Err(DatasetError::InvalidArgument("sample quaternion is not a canonical unit quaternion".into()));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, DatasetError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, DatasetError> {
        let d: SceneDataset = serde_json::from_str(s)?;
        d.validate()?;
        Ok(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Seeded random permutation.
    #[default]
    Random,
    /// Images sorted by name; the last block becomes the test set.
    Sequential,
}

/// Splits `n` indices; `keys` orders them for [`SplitMode::Sequential`].
pub fn split_indices(n: usize, test_fraction: f64, seed: u64, mode: SplitMode, keys: &[&str]) -> Result<Split, DatasetError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DatasetError::InvalidArgument(format!("test fraction must lie in (0, 1), got {test_fraction}")));
    }
    let n_test = ((test_fraction * n as f64).round() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    match mode {
        SplitMode::Random => order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed)),
        SplitMode::Sequential => {
            order.sort_by(|a, b| keys[*a].cmp(keys[*b]).then(a.cmp(b)));
            order.rotate_left(n - n_test);
        }
    }
    let mut test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok(Split { train, test })
}

/// Turns a sparse model into a pose-labelled dataset of image references.
pub fn model_to_dataset(m: &SparseModel, name: &str, test_fraction: f64, seed: u64, mode: SplitMode) -> Result<SceneDataset, DatasetError> {
    if m.images.is_empty() {
        return Err(DatasetError::EmptyModel);
    }
    let samples: Vec<Sample> = m
        .images
        .values()
        .map(|im| Sample {
            observation: Observation::Image(im.name.clone()),
            pose: im.pose(),
        })
        .collect();
    let names: Vec<&str> = m.images.values().map(|im| im.name.as_str()).collect();
    let split = split_indices(samples.len(), test_fraction, seed, mode, &names)?;
    let extent = BoundingBox::of(samples.iter().map(|s| s.pose.position)).expect("non-empty");
    Ok(SceneDataset {
        name: name.to_string(),
        extent,
        samples,
        split,
    })
}

/// Parses a 4×4 camera-to-world matrix (16 whitespace-separated reals).
pub fn parse_7scenes_pose(text: &str) -> Result<Pose, DatasetError> {
    let v: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| DatasetError::CorruptPose(format!("cannot parse `{t}`"))))
        .collect::<Result<_, _>>()?;
    if v.len() != 16 {
        return Err(DatasetError::CorruptPose(format!("expected 16 values, got {}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(DatasetError::CorruptPose("non-finite entry".into()));
    }
    let bottom = [v[12], v[13], v[14], v[15]];
    if bottom.iter().zip([0.0, 0.0, 0.0, 1.0]).any(|(a, b)| (a - b).abs() > CORRUPT_POSE_TOL) {
        return Err(DatasetError::CorruptPose(format!("bottom row {bottom:?} is not homogeneous")));
    }
    let mut r = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
    let t = Position::new(v[3], v[7], v[11]);
    let drift = orthonormality_drift(&r).max((r.determinant() - 1.0).abs());
    if drift > CORRUPT_POSE_TOL {
        return Err(DatasetError::CorruptPose(format!("rotation drift {drift:e}")));
    }
    if drift > REORTHONORMALIZE_TOL {
        r = nearest_rotation(&r);
    }
    let q = Quaternion::from_matrix(&r).map_err(|e| DatasetError::CorruptPose(e.to_string()))?;
    Ok(Pose::new(t, q))
}

pub fn load_7scenes_pose(path: &Path) -> Result<Pose, DatasetError> {
    parse_7scenes_pose(&read(path)?)
}

/// Closest rotation in the Frobenius sense (`U·Vᵀ` from the SVD).
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        r = u2 * vt;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReconStats {
    pub registered_images: usize,
    pub mean_sift_per_image: f64,
    pub matched_pairs: usize,
    pub mean_matches_per_pair: f64,
    pub reconstructed_points: usize,
}

/// Summary statistics of a reconstruction. Keypoints per image are taken
/// from the image's 2D observations; pairs with zero matches are ignored.
pub fn recon_stats(m: &SparseModel, pair_match_counts: &[((u32, u32), usize)]) -> ReconStats {
    let registered_images = m.images.len();
    let mean_sift_per_image = if registered_images == 0 {
        0.0
    } else {
        m.images.values().map(|i| i.points2d.len()).sum::<usize>() as f64 / registered_images as f64
    };
    let matched: Vec<usize> = pair_match_counts.iter().map(|(_, c)| *c).filter(|c| *c > 0).collect();
    let mean_matches_per_pair = if matched.is_empty() {
        0.0
    } else {
        matched.iter().sum::<usize>() as f64 / matched.len() as f64
    };
    ReconStats {
        registered_images,
        mean_sift_per_image,
        matched_pairs: matched.len(),
        mean_matches_per_pair,
        reconstructed_points: m.points.len(),
    }
}
