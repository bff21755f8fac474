//! A desk-scale pose regressor and the experiments built on it.
//!
//! Observations are synthetic feature vectors: a fixed random map of
//! sinusoids of the camera position and viewing direction, plus noise. The
//! regressor is a tanh MLP with three affine output heads attached at
//! increasing depth, each emitting a position and a quaternion. Training
//! backpropagates the analytic loss gradients of [`crate::losses`] through
//! the network with the tape in [`crate::autodiff`] and updates with Adam.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tape, Var};
use crate::datasets::{BoundingBox, Observation, Sample, SceneDataset, Split};
use crate::eval::{evaluate_predictions, median_errors, EvalError};
use crate::losses::{value_and_gradient, LossError, LossFormulation, LossInputs, LossWeights, DEFAULT_BETA, DEFAULT_OMEGA};
use crate::pose::{Pose, Position, Quaternion};

pub const MODEL_MAGIC: [u8; 4] = *b"GLRM";
pub const MODEL_VERSION: u32 = 1;
/// Training samples of the default synthetic scene.
pub const DEFAULT_TRAIN_SAMPLES: usize = 3000;
pub const DEFAULT_TEST_SAMPLES: usize = 500;
pub const DEFAULT_DATA_SEED: u64 = 1;
const HEAD_OUTPUTS: usize = 7;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid argument: observation has dimension {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training diverged at iteration {iteration} (loss {loss})")]
    Diverged { iteration: usize, loss: f64 },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("model file: {0}")]
    ModelFile(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticScene {
    /// Box side lengths; the box spans `[0, extent]` on each axis.
    pub extent: [f64; 3],
    pub observation_dim: usize,
    pub encoder_seed: u64,
    pub noise_sigma: f64,
}

impl Default for SyntheticScene {
    /// A lab-sized room (3.3 × 2.7 × 4.6).
    fn default() -> Self {
        SyntheticScene {
            extent: [3.3, 2.7, 4.6],
            observation_dim: 48,
            encoder_seed: 0,
            noise_sigma: 0.01,
        }
    }
}

impl SyntheticScene {
    pub fn validate(&self) -> Result<(), LearnError> {
        if self.extent.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(LearnError::InvalidArgument(format!("scene extent must be positive, got {:?}", self.extent)));
        }
        if self.observation_dim < 8 {
            return Err(LearnError::InvalidArgument(format!("observation_dim must be at least 8, got {}", self.observation_dim)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(LearnError::InvalidArgument("noise_sigma must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Largest side of the scene box.
    pub fn max_extent(&self) -> f64 {
        self.extent.iter().copied().fold(0.0, f64::max)
    }

    pub fn bounding_box(&self) -> BoundingBox {
        BoundingBox {
            min: [0.0; 3],
            max: self.extent,
        }
    }
}

/// The fixed pose → observation map of a scene.
#[derive(Debug, Clone)]
pub struct SceneEncoder {
    position_freq: Vec<Vector3<f64>>,
    view_freq: Vec<Vector3<f64>>,
    phase: Vec<f64>,
}

impl SceneEncoder {
    pub fn new(scene: &SyntheticScene) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(scene.encoder_seed);
        let mut position_freq = Vec::with_capacity(scene.observation_dim);
        let mut view_freq = Vec::with_capacity(scene.observation_dim);
        let mut phase = Vec::with_capacity(scene.observation_dim);
        for i in 0..scene.observation_dim {
            // even features see position, odd ones the viewing direction
            let a = Vector3::from_fn(|k, _| {
                let g: f64 = StandardNormal.sample(&mut rng);
                0.5 * g * std::f64::consts::PI / scene.extent[k]
            });
            let b = Vector3::from_fn(|_, _| {
                let g: f64 = StandardNormal.sample(&mut rng);
                1.5 * g
            });
            if i % 2 == 0 {
                position_freq.push(a);
                view_freq.push(Vector3::zeros());
            } else {
                position_freq.push(Vector3::zeros());
                view_freq.push(b);
            }
            phase.push(rng.random_range(0.0..std::f64::consts::TAU));
        }
        SceneEncoder {
            position_freq,
            view_freq,
            phase,
        }
    }

    pub fn dim(&self) -> usize {
        self.phase.len()
    }

    /// Noise-free observation of a pose.
    pub fn observe(&self, pose: &Pose) -> Vec<f64> {
        let view = *pose.view_direction().vector();
        (0..self.dim())
            .map(|k| (self.position_freq[k].dot(&pose.position) + self.view_freq[k].dot(&view) + self.phase[k]).sin())
            .collect()
    }
}

/// Uniform position in the box, uniform yaw, small pitch and roll.
fn sample_pose(scene: &SyntheticScene, rng: &mut ChaCha8Rng) -> Pose {
    let position = Position::new(
        rng.random_range(0.0..scene.extent[0]),
        rng.random_range(0.0..scene.extent[1]),
        rng.random_range(0.0..scene.extent[2]),
    );
    let tilt = Normal::new(0.0, 5f64.to_radians()).expect("valid sigma");
    let yaw = Quaternion::from_yaw(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI));
    let pitch = Quaternion::from_axis_angle(Vector3::x(), tilt.sample(rng)).expect("unit axis");
    let roll = Quaternion::from_axis_angle(Vector3::z(), tilt.sample(rng)).expect("unit axis");
    Pose::new(position, yaw.mul(pitch).mul(roll))
}

/// The default scene with its default sample counts and seed.
pub fn default_scene_dataset() -> Result<SceneDataset, LearnError> {
    generate_scene_dataset(&SyntheticScene::default(), DEFAULT_TRAIN_SAMPLES, DEFAULT_TEST_SAMPLES, DEFAULT_DATA_SEED)
}

/// Samples `n_train + n_test` labelled observations; the first `n_train`
/// form the training split.
pub fn generate_scene_dataset(scene: &SyntheticScene, n_train: usize, n_test: usize, seed: u64) -> Result<SceneDataset, LearnError> {
    scene.validate()?;
    if n_train == 0 || n_test == 0 {
        return Err(LearnError::InvalidArgument("n_train and n_test must be at least 1".into()));
    }
    let encoder = SceneEncoder::new(scene);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, scene.noise_sigma).map_err(|e| LearnError::InvalidArgument(e.to_string()))?;
    let samples: Vec<Sample> = (0..n_train + n_test)
        .map(|_| {
            let pose = sample_pose(scene, &mut rng);
            let mut obs = encoder.observe(&pose);
            if scene.noise_sigma > 0.0 {
                for v in obs.iter_mut() {
                    *v += noise.sample(&mut rng);
                }
            }
            Sample {
                observation: Observation::Features(obs),
                pose,
            }
        })
        .collect();
    Ok(SceneDataset {
        name: format!("synthetic-{}", scene.encoder_seed),
        extent: scene.bounding_box(),
        samples,
        split: Split {
            train: (0..n_train).collect(),
            test: (n_train..n_train + n_test).collect(),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressorConfig {
    pub input_dim: usize,
    /// Widths of the trunk layers.
    pub hidden: Vec<usize>,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        RegressorConfig {
            input_dim: SyntheticScene::default().observation_dim,
            hidden: vec![64, 64, 64],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    /// `in × out`
    weight: Array2<f64>,
    /// `1 × out`
    bias: Array2<f64>,
}

impl Dense {
    fn glorot(inputs: usize, outputs: usize, gain: f64, rng: &mut ChaCha8Rng) -> Self {
        let limit = gain * (6.0 / (inputs + outputs) as f64).sqrt();
        Dense {
            weight: Array2::from_shape_fn((inputs, outputs), |_| rng.random_range(-limit..limit)),
            bias: Array2::zeros((1, outputs)),
        }
    }
}

/// Tanh MLP trunk with three pose heads.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorModel {
    config: RegressorConfig,
    trunk: Vec<Dense>,
    heads: Vec<Dense>,
}

struct Graph {
    tape: Tape,
    params: Vec<Var>,
    positions: [Var; 3],
    quats: [Var; 3],
}

impl RegressorModel {
    pub fn new(config: RegressorConfig, seed: u64) -> Result<Self, LearnError> {
        if config.input_dim == 0 || config.hidden.is_empty() || config.hidden.contains(&0) {
            return Err(LearnError::InvalidArgument(format!("bad regressor shape {config:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trunk = Vec::new();
        let mut width = config.input_dim;
        for &h in &config.hidden {
            trunk.push(Dense::glorot(width, h, 1.0, &mut rng));
            width = h;
        }
        let heads = (0..3)
            .map(|i| {
                let attach = config.hidden[Self::attach_layer(config.hidden.len(), i)];
                let mut d = Dense::glorot(attach, HEAD_OUTPUTS, 0.1, &mut rng);
                d.bias[[0, 3]] = 1.0;
                d
            })
            .collect();
        Ok(RegressorModel { config, trunk, heads })
    }

    /// Index of the trunk layer feeding head `head` (0-based).
    fn attach_layer(layers: usize, head: usize) -> usize {
        ((head + 1) * layers).div_ceil(3) - 1
    }

    pub fn config(&self) -> &RegressorConfig {
        &self.config
    }

    /// Sets every head's output bias to the given pose.
    pub fn set_head_bias(&mut self, position: &Position, rotation: Quaternion) {
        let q = rotation.to_array();
        for h in &mut self.heads {
            for k in 0..3 {
                h.bias[[0, k]] = position[k];
            }
            for k in 0..4 {
                h.bias[[0, 3 + k]] = q[k];
            }
        }
    }

    /// Zeroes the head weight matrices, leaving biases.
    pub fn zero_head_weights(&mut self) {
        for h in &mut self.heads {
            h.weight.fill(0.0);
        }
    }

    fn arrays(&self) -> impl Iterator<Item = &Array2<f64>> {
        self.trunk
            .iter()
            .chain(&self.heads)
            .flat_map(|d| [&d.weight, &d.bias])
    }

    fn arrays_mut(&mut self) -> impl Iterator<Item = &mut Array2<f64>> {
        self.trunk
            .iter_mut()
            .chain(self.heads.iter_mut())
            .flat_map(|d| [&mut d.weight, &mut d.bias])
    }

    pub fn param_count(&self) -> usize {
        self.arrays().map(|a| a.len()).sum()
    }

    /// Flattened parameters: trunk layers then heads, weight before bias, row-major.
    pub fn params(&self) -> Vec<f64> {
        self.arrays().flat_map(|a| a.iter().copied()).collect()
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<(), LearnError> {
        if values.len() != self.param_count() {
            return Err(LearnError::InvalidArgument(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                values.len()
            )));
        }
        let mut it = values.iter();
        for a in self.arrays_mut() {
            for v in a.iter_mut() {
                *v = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    fn build(&self, x: Array2<f64>) -> Graph {
        let mut tape = Tape::new();
        let params: Vec<Var> = self.arrays().map(|a| tape.leaf(a.clone())).collect();
        let mut h = tape.leaf(x);
        let mut layer_out = Vec::with_capacity(self.trunk.len());
        for l in 0..self.trunk.len() {
            let z = tape.matmul(h, params[2 * l]);
            let z = tape.add_row(z, params[2 * l + 1]);
            h = tape.tanh(z);
            layer_out.push(h);
        }
        let base = 2 * self.trunk.len();
        let mut positions = Vec::with_capacity(3);
        let mut quats = Vec::with_capacity(3);
        for i in 0..3 {
            let src = layer_out[Self::attach_layer(self.trunk.len(), i)];
            let o = tape.matmul(src, params[base + 2 * i]);
            let o = tape.add_row(o, params[base + 2 * i + 1]);
            positions.push(tape.columns(o, 0, 3));
            let q = tape.columns(o, 3, 4);
            quats.push(tape.normalize_rows(q));
        }
        Graph {
            tape,
            params,
            positions: positions.try_into().expect("three heads"),
            quats: quats.try_into().expect("three heads"),
        }
    }

    fn check_dim(&self, got: usize) -> Result<(), LearnError> {
        if got != self.config.input_dim {
            return Err(LearnError::DimensionMismatch {
                expected: self.config.input_dim,
                got,
            });
        }
        Ok(())
    }

    /// Head predictions for one observation. Quaternions are unit length.
    pub fn forward(&self, observation: &[f64]) -> Result<[Pose; 3], LearnError> {
        Ok(self.forward_batch(&[observation])?.remove(0))
    }

    pub fn forward_batch(&self, observations: &[&[f64]]) -> Result<Vec<[Pose; 3]>, LearnError> {
        let x = self.stack(observations)?;
        let g = self.build(x);
        Ok(raw_predictions(&g)
            .into_iter()
            .map(|heads| {
                heads.map(|(p, q)| {
                    let rot = Quaternion::from_array(q).unwrap_or_default();
                    Pose::new(p, rot)
                })
            })
            .collect())
    }

    fn stack(&self, observations: &[&[f64]]) -> Result<Array2<f64>, LearnError> {
        let d = self.config.input_dim;
        let mut x = Array2::zeros((observations.len(), d));
        for (r, o) in observations.iter().enumerate() {
            self.check_dim(o.len())?;
            x.row_mut(r).assign(&ndarray::ArrayView1::from(*o));
        }
        Ok(x)
    }

    /// Mean loss over a batch and its gradient for every parameter array.
    pub fn loss_and_gradients(&self, f: &LossFormulation, observations: &[&[f64]], truths: &[Pose]) -> Result<(f64, Vec<Array2<f64>>), LearnError> {
        if observations.len() != truths.len() || observations.is_empty() {
            return Err(LearnError::InvalidArgument("batch needs one truth per observation".into()));
        }
        let x = self.stack(observations)?;
        let g = self.build(x);
        let preds = raw_predictions(&g);
        let b = truths.len();
        let scale = 1.0 / b as f64;
        let mut seeds_p: [Array2<f64>; 3] = std::array::from_fn(|_| Array2::zeros((b, 3)));
        let mut seeds_q: [Array2<f64>; 3] = std::array::from_fn(|_| Array2::zeros((b, 4)));
        let mut total = 0.0;
        for (r, (heads, truth)) in preds.iter().zip(truths).enumerate() {
            // Raw (normalized, not re-signed) head outputs keep the gradient
            // aligned with the network's own parameterization.
            let predicted = heads.map(|(p, q)| {
                Pose::new(p, Quaternion { w: q[0], x: q[1], y: q[2], z: q[3] })
            });
            let (v, grad) = value_and_gradient(f, &LossInputs::new(predicted, *truth));
            total += v;
            for i in 0..3 {
                for k in 0..3 {
                    seeds_p[i][[r, k]] = grad.position[i][k] * scale;
                }
                for k in 0..4 {
                    seeds_q[i][[r, k]] = grad.rotation[i][k] * scale;
                }
            }
        }
        let mut seeds = Vec::with_capacity(6);
        for i in 0..3 {
            seeds.push((g.positions[i], std::mem::take(&mut seeds_p[i])));
            seeds.push((g.quats[i], std::mem::take(&mut seeds_q[i])));
        }
        let mut grads = g.tape.backward(&seeds);
        let param_grads = g
            .params
            .iter()
            .map(|v| grads.take(*v).unwrap_or_else(|| Array2::zeros(g.tape.value(*v).dim())))
            .collect();
        Ok((total * scale, param_grads))
    }

    /// Flat binary: 16-byte header (magic, version u32, parameter count u64,
    /// little endian) followed by the parameters as f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let params = self.params();
        let mut out = Vec::with_capacity(16 + 8 * params.len());
        out.extend_from_slice(&MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(params.len() as u64).to_le_bytes());
        for p in params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    /// Loads parameters saved by [`Self::to_bytes`] into a model of the given shape.
    pub fn from_bytes(config: RegressorConfig, bytes: &[u8]) -> Result<Self, LearnError> {
        if bytes.len() < 16 || bytes[..4] != MODEL_MAGIC {
            return Err(LearnError::ModelFile("missing GLRM header".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != MODEL_VERSION {
            return Err(LearnError::ModelFile(format!("unsupported version {version}")));
        }
        let count = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if body.len() != count * 8 {
            return Err(LearnError::ModelFile(format!("header declares {count} parameters, body holds {} bytes", body.len())));
        }
        let mut model = RegressorModel::new(config, 0)?;
        if model.param_count() != count {
            return Err(LearnError::ModelFile(format!(
                "file holds {count} parameters, architecture needs {}",
                model.param_count()
            )));
        }
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        model.set_params(&values)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), LearnError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(config: RegressorConfig, path: &Path) -> Result<Self, LearnError> {
        Self::from_bytes(config, &fs::read(path)?)
    }
}

fn raw_predictions(g: &Graph) -> Vec<[(Position, [f64; 4]); 3]> {
    let rows = g.tape.value(g.positions[0]).nrows();
    (0..rows)
        .map(|r| {
            std::array::from_fn(|i| {
                let p = g.tape.value(g.positions[i]);
                let q = g.tape.value(g.quats[i]);
                (
                    Position::new(p[[r, 0]], p[[r, 1]], p[[r, 2]]),
                    [q[[r, 0]], q[[r, 1]], q[[r, 2]], q[[r, 3]]],
                )
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 75,
            iterations: 30_000,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

/// Adam with β = (0.9, 0.999), ε = 1e-8.
#[derive(Debug, Clone)]
struct Adam {
    lr: f64,
    step: i32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(lr: f64, model: &RegressorModel) -> Self {
        let zeros: Vec<Array2<f64>> = model.arrays().map(|a| Array2::zeros(a.dim())).collect();
        Adam {
            lr,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn update(&mut self, model: &mut RegressorModel, grads: &[Array2<f64>]) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        let lr = self.lr;
        for (((p, g), m), v) in model.arrays_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
                *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
            });
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: RegressorModel,
    /// Mean batch loss per iteration.
    pub loss_curve: Vec<f64>,
}

impl TrainOutcome {
    pub fn loss_curve_csv(&self) -> String {
        let mut s = String::from("iteration,loss\n");
        for (i, l) in self.loss_curve.iter().enumerate() {
            let _ = writeln!(s, "{i},{l}");
        }
        s
    }
}

fn features_of(s: &Sample) -> Result<&[f64], LearnError> {
    match &s.observation {
        Observation::Features(v) => Ok(v),
        Observation::Image(name) => Err(LearnError::InvalidArgument(format!(
            "sample `{name}` has no feature vector"
        ))),
    }
}

/// Mini-batch training. Runs single-threaded; identical inputs give
/// bit-identical parameters.
pub fn train(model: &RegressorModel, dataset: &SceneDataset, formulation: &LossFormulation, cfg: &TrainConfig) -> Result<TrainOutcome, LearnError> {
    if cfg.batch_size == 0 {
        return Err(LearnError::InvalidArgument("batch_size must be at least 1".into()));
    }
    if !(cfg.learning_rate >= 0.0 && cfg.learning_rate.is_finite()) {
        return Err(LearnError::InvalidArgument("learning rate must be finite and non-negative".into()));
    }
    formulation.weights.validate()?;
    let train: Vec<(&[f64], Pose)> = dataset
        .train()
        .map(|s| Ok((features_of(s)?, s.pose)))
        .collect::<Result<_, LearnError>>()?;
    if train.is_empty() {
        return Err(LearnError::InvalidArgument("training split is empty".into()));
    }
    let mut model = model.clone();
    let mut adam = Adam::new(cfg.learning_rate, &model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let batch = cfg.batch_size.min(train.len());
    let mut loss_curve = Vec::with_capacity(cfg.iterations);
    let mut obs: Vec<&[f64]> = Vec::with_capacity(batch);
    let mut truths: Vec<Pose> = Vec::with_capacity(batch);

    for iteration in 0..cfg.iterations {
        obs.clear();
        truths.clear();
        for _ in 0..batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let (o, p) = train[order[cursor]];
            obs.push(o);
            truths.push(p);
            cursor += 1;
        }
        let (loss, grads) = model.loss_and_gradients(formulation, &obs, &truths)?;
        if !loss.is_finite() || grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(LearnError::Diverged { iteration, loss });
        }
        loss_curve.push(loss);
        adam.update(&mut model, &grads);
    }
    Ok(TrainOutcome { model, loss_curve })
}

/// A freshly initialized model whose heads start at the mean training pose.
pub fn init_model(config: &RegressorConfig, dataset: &SceneDataset, seed: u64) -> Result<RegressorModel, LearnError> {
    let mut model = RegressorModel::new(config.clone(), seed)?;
    let n = dataset.split.train.len().max(1) as f64;
    let centre = dataset.train().fold(Position::zeros(), |acc, s| acc + s.pose.position) / n;
    model.set_head_bias(&centre, Quaternion::IDENTITY);
    Ok(model)
}

/// Median positional and rotational test error of head 3.
pub fn test_errors(model: &RegressorModel, dataset: &SceneDataset) -> Result<(f64, f64), LearnError> {
    let test: Vec<&Sample> = dataset.test().collect();
    if test.is_empty() {
        return Err(LearnError::InvalidArgument("test split is empty".into()));
    }
    let obs: Vec<&[f64]> = test.iter().map(|s| features_of(s)).collect::<Result<_, _>>()?;
    let preds = model.forward_batch(&obs)?;
    let pairs: Vec<(Pose, Pose)> = preds.iter().zip(&test).map(|(p, s)| (p[2], s.pose)).collect();
    Ok(median_errors(&evaluate_predictions(&pairs))?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub id: u8,
    pub formula: String,
    pub median_position: f64,
    pub median_rotation_deg: f64,
    pub final_loss: f64,
}

/// Trains one model per formulation from the same initialization and batch
/// order and reports head-3 median test errors.
pub fn compare_formulations(ids: &[u8], dataset: &SceneDataset, model_cfg: &RegressorConfig, cfg: &TrainConfig) -> Result<Vec<ComparisonRow>, LearnError> {
    let formulations: Vec<LossFormulation> = ids.iter().map(|id| LossFormulation::new(*id)).collect::<Result<_, _>>()?;
    let init = init_model(model_cfg, dataset, cfg.seed)?;
    formulations
        .par_iter()
        .map(|f| {
            let out = train(&init, dataset, f, cfg)?;
            let (median_position, median_rotation_deg) = test_errors(&out.model, dataset)?;
            Ok(ComparisonRow {
                id: f.id(),
                formula: f.formula(),
                median_position,
                median_rotation_deg,
                final_loss: *out.loss_curve.last().unwrap_or(&f64::NAN),
            })
        })
        .collect()
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut s = String::from("id,formulation,median_position_m,median_rotation_deg\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.id, r.formula, r.median_position, r.median_rotation_deg);
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSearchSpec {
    /// Base formulation whose weights are swept.
    pub base_id: u8,
    pub rot_scales: Vec<f64>,
    pub geo_scales: Vec<[f64; 2]>,
    /// Multipliers on the tabulated ω.
    pub omega_scales: Vec<f64>,
    /// Multipliers on the tabulated β.
    pub beta_scales: Vec<f64>,
}

impl Default for GridSearchSpec {
    fn default() -> Self {
        GridSearchSpec {
            base_id: 6,
            rot_scales: vec![1.2, 1.5, 1.8],
            geo_scales: vec![[1.0, 1.0]],
            omega_scales: vec![1.0],
            beta_scales: vec![1.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub rot_scale: f64,
    pub geo_scales: [f64; 2],
    pub omega_scale: f64,
    pub beta_scale: f64,
}

impl GridCell {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            omega: DEFAULT_OMEGA.map(|w| w * self.omega_scale),
            beta: DEFAULT_BETA.map(|b| b * self.beta_scale),
            rot_scale: self.rot_scale,
            geo_scales: self.geo_scales,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    /// Position of the cell in the Cartesian product.
    pub cell_index: usize,
    pub cell: GridCell,
    pub median_position: f64,
    pub median_rotation_deg: f64,
}

impl GridSearchSpec {
    /// Cartesian product, rot_scale varying slowest.
    pub fn cells(&self) -> Vec<GridCell> {
        let mut out = Vec::new();
        for &rot_scale in &self.rot_scales {
            for &geo_scales in &self.geo_scales {
                for &omega_scale in &self.omega_scales {
                    for &beta_scale in &self.beta_scales {
                        out.push(GridCell {
                            rot_scale,
                            geo_scales,
                            omega_scale,
                            beta_scale,
                        });
                    }
                }
            }
        }
        out
    }

    fn validate(&self) -> Result<(), LearnError> {
        if self.rot_scales.is_empty() || self.geo_scales.is_empty() || self.omega_scales.is_empty() || self.beta_scales.is_empty() {
            return Err(LearnError::InvalidArgument("every grid axis needs at least one value".into()));
        }
        LossFormulation::new(self.base_id)?;
        Ok(())
    }
}

/// Exhaustive sweep. Every cell trains from the same initialization and seed;
/// rows are ranked by median positional error, then rotational error, then
/// cell order.
pub fn grid_search(spec: &GridSearchSpec, dataset: &SceneDataset, model_cfg: &RegressorConfig, cfg: &TrainConfig) -> Result<Vec<GridRow>, LearnError> {
    spec.validate()?;
    let init = init_model(model_cfg, dataset, cfg.seed)?;
    let mut rows: Vec<GridRow> = spec
        .cells()
        .into_par_iter()
        .enumerate()
        .map(|(cell_index, cell)| {
            let f = LossFormulation::with_weights(spec.base_id, cell.weights())?;
            let out = train(&init, dataset, &f, cfg)?;
            let (median_position, median_rotation_deg) = test_errors(&out.model, dataset)?;
            Ok(GridRow {
                cell_index,
                cell,
                median_position,
                median_rotation_deg,
            })
        })
        .collect::<Result<_, LearnError>>()?;
    rank_rows(&mut rows);
    Ok(rows)
}

pub fn rank_rows(rows: &mut [GridRow]) {
    rows.sort_by(|a, b| {
        a.median_position
            .total_cmp(&b.median_position)
            .then(a.median_rotation_deg.total_cmp(&b.median_rotation_deg))
            .then(a.cell_index.cmp(&b.cell_index))
    });
}

pub fn grid_csv(rows: &[GridRow]) -> String {
    let mut s = String::from("rank,cell,rot_scale,geo_sq_scale,geo_lin_scale,omega_scale,beta_scale,median_position_m,median_rotation_deg\n");
    for (rank, r) in rows.iter().enumerate() {
        let c = &r.cell;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            rank + 1,
            r.cell_index,
            c.rot_scale,
            c.geo_scales[0],
            c.geo_scales[1],
            c.omega_scale,
            c.beta_scale,
            r.median_position,
            r.median_rotation_deg
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_scene() -> SyntheticScene {
        SyntheticScene {
            observation_dim: 12,
            ..SyntheticScene::default()
        }
    }

    #[test]
    fn dataset_is_deterministic() {
        let s = tiny_scene();
        let a = generate_scene_dataset(&s, 20, 5, 3).unwrap();
        let b = generate_scene_dataset(&s, 20, 5, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_scene_dataset(&s, 20, 5, 4).unwrap());
        a.validate().unwrap();
        assert!(generate_scene_dataset(&s, 0, 5, 3).is_err());
        let bad = SyntheticScene { observation_dim: 4, ..s };
        assert!(generate_scene_dataset(&bad, 1, 1, 0).is_err());
    }

    #[test]
    fn noiseless_observations_depend_only_on_pose() {
        let s = SyntheticScene { noise_sigma: 0.0, ..tiny_scene() };
        let enc = SceneEncoder::new(&s);
        let p = Pose::new(Position::new(1.0, 1.0, 1.0), Quaternion::from_yaw(0.4));
        assert_eq!(enc.observe(&p), enc.observe(&p));
        let d = generate_scene_dataset(&s, 5, 1, 9).unwrap();
        for smp in &d.samples {
            assert_eq!(smp.observation, Observation::Features(enc.observe(&smp.pose)));
        }
    }

    #[test]
    fn distant_poses_are_distinguishable() {
        let s = SyntheticScene { noise_sigma: 0.0, ..SyntheticScene::default() };
        let d = generate_scene_dataset(&s, 200, 1, 2).unwrap();
        let min_sep = s.max_extent() / 10.0;
        let mut checked = 0;
        for a in &d.samples {
            for b in &d.samples {
                if (a.pose.position - b.pose.position).norm() > min_sep {
                    let (Observation::Features(x), Observation::Features(y)) = (&a.observation, &b.observation) else { unreachable!() };
                    let dist: f64 = x.iter().zip(y).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
                    assert!(dist > 0.0);
                    checked += 1;
                }
            }
        }
        assert!(checked > 1000);
    }

    #[test]
    fn zeroed_heads_output_normalized_bias() {
        let mut m = RegressorModel::new(RegressorConfig { input_dim: 8, hidden: vec![6, 5] }, 1).unwrap();
        m.zero_head_weights();
        m.set_head_bias(&Position::new(1.0, 2.0, 3.0), Quaternion::IDENTITY);
        for h in &mut m.heads {
            h.bias[[0, 3]] = 2.0;
            h.bias[[0, 5]] = 2.0;
        }
        let out = m.forward(&[0.3; 8]).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        for p in out {
            assert_eq!(p.position, Position::new(1.0, 2.0, 3.0));
            let q = p.rotation.to_array();
            assert!((q[0] - s).abs() < 1e-15 && (q[2] - s).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_checks_dimension() {
        let m = RegressorModel::new(RegressorConfig { input_dim: 8, hidden: vec![4] }, 1).unwrap();
        assert!(matches!(m.forward(&[0.0; 7]), Err(LearnError::DimensionMismatch { expected: 8, got: 7 })));
        let a = m.forward(&[0.1; 8]).unwrap();
        let b = m.forward(&[0.1; 8]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn heads_attach_at_increasing_depth() {
        assert_eq!((0..3).map(|i| RegressorModel::attach_layer(3, i)).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!((0..3).map(|i| RegressorModel::attach_layer(2, i)).collect::<Vec<_>>(), vec![0, 1, 1]);
        assert_eq!((0..3).map(|i| RegressorModel::attach_layer(1, i)).collect::<Vec<_>>(), vec![0, 0, 0]);
    }

    #[test]
    fn output_slope_matches_finite_difference() {
        let m = RegressorModel::new(RegressorConfig { input_dim: 8, hidden: vec![6, 5] }, 4).unwrap();
        let x: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).sin()).collect();
        // loss = ‖p̂₃ − 0‖ under a single-head weighting isolates one output path
        let mut w = LossWeights::default();
        w.omega = [0.0, 0.0, 1.0];
        w.beta = [0.0; 3];
        let f = LossFormulation::with_weights(0, w).unwrap();
        let truth = Pose::identity();
        let (_, grads) = m.loss_and_gradients(&f, &[&x], &[truth]).unwrap();
        let flat: Vec<f64> = grads.iter().flat_map(|g| g.iter().copied()).collect();
        let params = m.params();
        let h = 1e-6;
        for idx in [0, 7, 40, params.len() - 20, params.len() - 5] {
            let mut plus = m.clone();
            let mut pp = params.clone();
            pp[idx] += h;
            plus.set_params(&pp).unwrap();
            let mut minus = m.clone();
            pp[idx] -= 2.0 * h;
            minus.set_params(&pp).unwrap();
            let norm = |mm: &RegressorModel| mm.forward(&x).unwrap()[2].position.norm();
            let fd = (norm(&plus) - norm(&minus)) / (2.0 * h);
            assert!((fd - flat[idx]).abs() < 1e-7 * (1.0 + fd.abs()), "param {idx}: {fd} vs {}", flat[idx]);
        }
    }

    #[test]
    fn model_bytes_round_trip() {
        let cfg = RegressorConfig { input_dim: 8, hidden: vec![4, 3] };
        let m = RegressorModel::new(cfg.clone(), 2).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..4], b"GLRM");
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize, m.param_count());
        assert_eq!(bytes.len(), 16 + 8 * m.param_count());
        assert_eq!(RegressorModel::from_bytes(cfg, &bytes).unwrap(), m);
        let other = RegressorConfig { input_dim: 8, hidden: vec![5] };
        assert!(RegressorModel::from_bytes(other.clone(), &bytes).is_err());
        assert!(RegressorModel::from_bytes(other, b"nope").is_err());
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let s = tiny_scene();
        let d = generate_scene_dataset(&s, 10, 2, 0).unwrap();
        let m = RegressorModel::new(RegressorConfig { input_dim: 12, hidden: vec![8] }, 0).unwrap();
        let cfg = TrainConfig { batch_size: 10, iterations: 20, learning_rate: 0.0, seed: 1 };
        let out = train(&m, &d, &LossFormulation::new(6).unwrap(), &cfg).unwrap();
        assert_eq!(out.model, m);
        let (lo, hi) = out.loss_curve.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        assert!(hi - lo <= 1e-12 * hi);
    }

    #[test]
    fn training_is_deterministic() {
        let s = tiny_scene();
        let d = generate_scene_dataset(&s, 30, 5, 0).unwrap();
        let m = init_model(&RegressorConfig { input_dim: 12, hidden: vec![8, 8] }, &d, 3).unwrap();
        let cfg = TrainConfig { batch_size: 8, iterations: 50, learning_rate: 1e-3, seed: 5 };
        let f = LossFormulation::new(3).unwrap();
        let a = train(&m, &d, &f, &cfg).unwrap();
        let b = train(&m, &d, &f, &cfg).unwrap();
        assert_eq!(a.model.params(), b.model.params());
        assert_eq!(a.loss_curve, b.loss_curve);
    }

    #[test]
    fn image_samples_cannot_train() {
        let mut d = generate_scene_dataset(&tiny_scene(), 3, 1, 0).unwrap();
        d.samples[0].observation = Observation::Image("a.png".into());
        let m = RegressorModel::new(RegressorConfig { input_dim: 12, hidden: vec![4] }, 0).unwrap();
        let cfg = TrainConfig { iterations: 1, ..TrainConfig::default() };
        assert!(train(&m, &d, &LossFormulation::new(0).unwrap(), &cfg).is_err());
    }

    #[test]
    fn grid_cells_and_ranking() {
        let spec = GridSearchSpec {
            rot_scales: vec![1.2, 1.8],
            beta_scales: vec![0.5, 1.0],
            ..GridSearchSpec::default()
        };
        let cells = spec.cells();
        assert_eq!(cells.len(), 4);
        assert_eq!(cells[1].beta_scale, 1.0);
        assert_eq!(cells[2].rot_scale, 1.8);
        let row = |i: usize, p: f64, r: f64| GridRow { cell_index: i, cell: cells[i], median_position: p, median_rotation_deg: r };
        let mut rows = vec![row(0, 0.2, 5.0), row(1, 0.1, 9.0), row(2, 0.2, 4.0), row(3, 0.2, 4.0)];
        rank_rows(&mut rows);
        assert_eq!(rows.iter().map(|r| r.cell_index).collect::<Vec<_>>(), vec![1, 2, 3, 0]);
        let empty = GridSearchSpec { rot_scales: vec![], ..GridSearchSpec::default() };
        let d = generate_scene_dataset(&tiny_scene(), 3, 1, 0).unwrap();
        assert!(grid_search(&empty, &d, &RegressorConfig::default(), &TrainConfig::default()).is_err());
    }

    #[test]
    fn empty_comparison() {
        let d = generate_scene_dataset(&tiny_scene(), 3, 1, 0).unwrap();
        let cfg = RegressorConfig { input_dim: 12, hidden: vec![4] };
        assert!(compare_formulations(&[], &d, &cfg, &TrainConfig::default()).unwrap().is_empty());
        assert!(compare_formulations(&[11], &d, &cfg, &TrainConfig::default()).is_err());
    }
}
