//! The pose-regression loss family.
//!
//! Ten formulations are supported, numbered 0–9. Every formulation is built
//! from the same ingredients:
//!
//! * per-head position error `ωᵢ·‖p̂ᵢ − p‖` and rotation error `βᵢ·‖q̂ᵢ − q‖`
//!   summed over the three regressor heads,
//! * the displacement `d = p̂₃ − p` of the last head,
//! * `θ`, the angle between `d` and the ground-truth viewing direction,
//! * `α`, the angle between the ground-truth and predicted viewing directions.
//!
//! | id | loss |
//! |----|------|
//! | 0 | `L₀ = Σ ωᵢ‖p̂ᵢ−p‖ + βᵢ‖q̂ᵢ−q‖` |
//! | 1 | `L₀ + 512(1−cos θ)` |
//! | 2 | `L₀ + ‖d‖²(1−cos θ)` |
//! | 3 | `L₀ + ‖d‖ + ‖d‖²(1−cos θ)` |
//! | 4 | `L₀ + ‖d‖ + ‖d‖²(1−cos θ) + 512(1−cos θ)` |
//! | 5–8 | `s·Σ βᵢ‖q̂ᵢ−q‖ + ‖d‖²(1−cos θ) + ‖d‖`, with s = 1.0, 1.5, 1.2, 1.8 |
//! | 9 | `‖d‖²(1−cos α) + ‖d‖²(1−cos θ) + ‖d‖` |
//!
//! Predicted quaternions are normalized and sign-canonicalized before they
//! are differenced, and gradients flow through that normalization.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pose::{Pose, ViewDirection};

pub const DEFAULT_OMEGA: [f64; 3] = [0.3, 0.3, 1.0];
pub const DEFAULT_BETA: [f64; 3] = [150.0, 150.0, 500.0];
/// Fixed coefficient on the bare `(1 − cos θ)` term of ids 1 and 4.
pub const ANGLE_PENALTY: f64 = 512.0;
/// Below this norm a difference vector counts as zero (kink of the norm).
pub const DEGENERATE_NORM: f64 = 1e-12;
pub const FORMULATION_IDS: [u8; 10] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("invalid argument: unknown loss formulation id {0}")]
    UnknownId(u8),
    #[error("invalid argument: {0}")]
    InvalidWeights(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub omega: [f64; 3],
    pub beta: [f64; 3],
    pub rot_scale: f64,
    /// Weights of the `‖d‖²(1 − cos θ)` and `‖d‖` terms.
    pub geo_scales: [f64; 2],
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            omega: DEFAULT_OMEGA,
            beta: DEFAULT_BETA,
            rot_scale: 1.0,
            geo_scales: [1.0, 1.0],
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        let all = self
            .omega
            .iter()
            .chain(&self.beta)
            .chain(&self.geo_scales)
            .chain(std::iter::once(&self.rot_scale));
        for w in all {
            if !(w.is_finite() && *w >= 0.0) {
                return Err(LossError::InvalidWeights(format!(
                    "loss weights must be finite and non-negative, got {w}"
                )));
            }
        }
        Ok(())
    }
}

/// Which vectors the angle `α` of formulation 9 is measured between.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaReading {
    /// Ground-truth vs predicted viewing direction.
    #[default]
    ViewDirections,
    /// Ground-truth vs predicted position, both taken as vectors from the origin.
    PositionVectors,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossFormulation {
    id: u8,
    pub weights: LossWeights,
    pub alpha: AlphaReading,
}

impl LossFormulation {
    /// Formulation `id` with its tabulated weights.
    pub fn new(id: u8) -> Result<Self, LossError> {
        let rot_scale = match id {
            0..=5 | 9 => 1.0,
            6 => 1.5,
            7 => 1.2,
            8 => 1.8,
            other => return Err(LossError::UnknownId(other)),
        };
        Ok(LossFormulation {
            id,
            weights: LossWeights {
                rot_scale,
                ..LossWeights::default()
            },
            alpha: AlphaReading::default(),
        })
    }

    pub fn with_weights(id: u8, weights: LossWeights) -> Result<Self, LossError> {
        weights.validate()?;
        let mut f = Self::new(id)?;
        f.weights = weights;
        Ok(f)
    }

    pub fn id(&self) -> u8 {
        self.id
    }

    /// Human-readable formula, used as a column in comparison tables.
    pub fn formula(&self) -> String {
        let w = &self.weights;
        match self.id {
            0 => "w_i*|p_i-p| + b_i*|q_i-q|".to_string(),
            1 => "L0 + 512*(1-cos(theta))".to_string(),
            2 => "L0 + |d|^2*(1-cos(theta))".to_string(),
            3 => "L0 + |d| + |d|^2*(1-cos(theta))".to_string(),
            4 => "L0 + |d| + |d|^2*(1-cos(theta)) + 512*(1-cos(theta))".to_string(),
            5..=8 => format!("{}*b_i*|q_i-q| + |d|^2*(1-cos(theta)) + |d|", w.rot_scale),
            _ => "|d|^2*(1-cos(alpha)) + |d|^2*(1-cos(theta)) + |d|".to_string(),
        }
    }

    fn uses_default_terms(&self) -> bool {
        self.id <= 4
    }
}

/// One training example as seen by the loss: the three head predictions and
/// the ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossInputs {
    pub predicted: [Pose; 3],
    pub truth: Pose,
    pub truth_view: ViewDirection,
}

impl LossInputs {
    pub fn new(predicted: [Pose; 3], truth: Pose) -> Self {
        LossInputs {
            predicted,
            truth,
            truth_view: truth.world_to_camera().pose_vector(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricTerms {
    pub d: Vector3<f64>,
    pub theta: f64,
    pub alpha: f64,
}

/// Partial derivatives of a loss with respect to every predicted quantity.
/// Rotation partials are taken against the raw quaternion components
/// `[w, x, y, z]` as stored in the predicted pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossGradient {
    pub position: [Vector3<f64>; 3],
    pub rotation: [[f64; 4]; 3],
}

impl LossGradient {
    pub fn zeros() -> Self {
        LossGradient {
            position: [Vector3::zeros(); 3],
            rotation: [[0.0; 4]; 3],
        }
    }

    /// Flattened as `[p₁ p₂ p₃ q₁ q₂ q₃]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(21);
        for p in &self.position {
            v.extend_from_slice(p.as_slice());
        }
        for q in &self.rotation {
            v.extend_from_slice(q);
        }
        v
    }
}

pub fn geometric_terms(inputs: &LossInputs) -> GeometricTerms {
    geometric_terms_with(inputs, AlphaReading::default())
}

pub fn geometric_terms_with(inputs: &LossInputs, reading: AlphaReading) -> GeometricTerms {
    let prepared = Prepared::new(inputs);
    let cos_alpha = match reading {
        AlphaReading::ViewDirections => prepared.view_cos_alpha(),
        AlphaReading::PositionVectors => position_cos_alpha(&inputs.truth.position, &prepared.positions[2]).0,
    };
    GeometricTerms {
        d: prepared.d,
        theta: prepared.cos_theta().clamp(-1.0, 1.0).acos(),
        alpha: cos_alpha.clamp(-1.0, 1.0).acos(),
    }
}

/// Scalar loss value. Never negative.
pub fn evaluate(f: &LossFormulation, inputs: &LossInputs) -> f64 {
    value_and_gradient(f, inputs).0
}

pub fn gradient(f: &LossFormulation, inputs: &LossInputs) -> LossGradient {
    value_and_gradient(f, inputs).1
}

/// Loss value and its gradient in a single pass.
pub fn value_and_gradient(f: &LossFormulation, inputs: &LossInputs) -> (f64, LossGradient) {
    let w = &f.weights;
    let prep = Prepared::new(inputs);
    let v = *inputs.truth_view.vector();
    let truth_q = inputs.truth.rotation.to_array();
    let mut loss = 0.0;
    let mut grad = LossGradient::zeros();
    let mut quat_grad = [[0.0; 4]; 3];

    if f.uses_default_terms() {
        for i in 0..3 {
            let e = prep.positions[i] - inputs.truth.position;
            let (n, g) = norm_and_unit(&e);
            loss += w.omega[i] * n;
            grad.position[i] += w.omega[i] * g;
        }
    }

    let rot_weight = match f.id {
        0..=4 => 1.0,
        5..=8 => w.rot_scale,
        _ => 0.0,
    };
    if rot_weight > 0.0 {
        for i in 0..3 {
            let diff: [f64; 4] = std::array::from_fn(|k| prep.quats[i][k] - truth_q[k]);
            let n = diff.iter().map(|x| x * x).sum::<f64>().sqrt();
            let c = rot_weight * w.beta[i];
            loss += c * n;
            if n >= DEGENERATE_NORM {
                for k in 0..4 {
                    quat_grad[i][k] += c * diff[k] / n;
                }
            }
        }
    }

    let d = prep.d;
    let dn = d.norm();
    let degenerate = dn < DEGENERATE_NORM;
    let cos_theta = prep.cos_theta();
    let [geo_sq, geo_lin] = w.geo_scales;

    // ‖d‖²(1 − cos θ) = ‖d‖² − ‖d‖(d·v)
    if matches!(f.id, 2..=9) && !degenerate {
        let dv = d.dot(&v);
        loss += geo_sq * (dn * dn - dn * dv);
        grad.position[2] += geo_sq * (2.0 * d - (dv / dn) * d - dn * v);
    }
    if matches!(f.id, 3..=9) && !degenerate {
        loss += geo_lin * dn;
        grad.position[2] += geo_lin * (d / dn);
    }
    if matches!(f.id, 1 | 4) && !degenerate {
        let dv = d.dot(&v);
        loss += ANGLE_PENALTY * (1.0 - cos_theta);
        grad.position[2] -= ANGLE_PENALTY * (v / dn - (dv / (dn * dn * dn)) * d);
    }
    if f.id == 9 {
        match f.alpha {
            AlphaReading::ViewDirections => {
                let cos_alpha = prep.view_cos_alpha();
                loss += dn * dn * (1.0 - cos_alpha);
                grad.position[2] += 2.0 * (1.0 - cos_alpha) * d;
                let dcos = view_cos_gradient(&prep.quats[2], &v);
                for k in 0..4 {
                    quat_grad[2][k] -= dn * dn * dcos[k];
                }
            }
            AlphaReading::PositionVectors => {
                let (cos_alpha, dcos) = position_cos_alpha(&inputs.truth.position, &prep.positions[2]);
                loss += dn * dn * (1.0 - cos_alpha);
                grad.position[2] += 2.0 * (1.0 - cos_alpha) * d - dn * dn * dcos;
            }
        }
    }

    for i in 0..3 {
        grad.rotation[i] = prep.normalization_pullback(i, &quat_grad[i]);
    }
    (loss.max(0.0), grad)
}

struct Prepared {
    positions: [Vector3<f64>; 3],
    raw: [[f64; 4]; 3],
    norms: [f64; 3],
    signs: [f64; 3],
    /// Normalized, canonicalized predicted quaternions.
    quats: [[f64; 4]; 3],
    d: Vector3<f64>,
    v: Vector3<f64>,
}

impl Prepared {
    fn new(inputs: &LossInputs) -> Self {
        let positions = inputs.predicted.map(|p| p.position);
        let raw = inputs.predicted.map(|p| p.rotation.to_array());
        let norms = raw.map(|q| q.iter().map(|x| x * x).sum::<f64>().sqrt());
        let signs = raw.map(|q| if q[0] < 0.0 { -1.0 } else { 1.0 });
        let quats = std::array::from_fn(|i| {
            // already-unit input is used as is so a perfect prediction scores exactly 0
            let scale = if (norms[i] - 1.0).abs() > 1e-12 { 1.0 / norms[i] } else { 1.0 };
            raw[i].map(|x| signs[i] * x * scale)
        });
        Prepared {
            positions,
            raw,
            norms,
            signs,
            quats,
            d: positions[2] - inputs.truth.position,
            v: *inputs.truth_view.vector(),
        }
    }

    fn cos_theta(&self) -> f64 {
        let n = self.d.norm();
        if n < DEGENERATE_NORM {
            1.0
        } else {
            self.d.dot(&self.v) / n
        }
    }

    fn view_cos_alpha(&self) -> f64 {
        self.v.dot(&view_of(&self.quats[2]))
    }

    /// Chain a gradient w.r.t. the canonical unit quaternion back to the raw one.
    fn normalization_pullback(&self, i: usize, g: &[f64; 4]) -> [f64; 4] {
        let m = self.raw[i].map(|x| x / self.norms[i]);
        let mg: f64 = (0..4).map(|k| m[k] * g[k]).sum();
        std::array::from_fn(|k| self.signs[i] * (g[k] - m[k] * mg) / self.norms[i])
    }
}

fn norm_and_unit(e: &Vector3<f64>) -> (f64, Vector3<f64>) {
    let n = e.norm();
    if n < DEGENERATE_NORM {
        (n, Vector3::zeros())
    } else {
        (n, e / n)
    }
}

/// `R(q)·(0,0,−1)` for a unit quaternion `[w,x,y,z]`.
fn view_of(q: &[f64; 4]) -> Vector3<f64> {
    let [w, x, y, z] = *q;
    -Vector3::new(2.0 * (x * z + w * y), 2.0 * (y * z - w * x), 1.0 - 2.0 * (x * x + y * y))
}

/// ∂(v · view_of(q))/∂q.
fn view_cos_gradient(q: &[f64; 4], v: &Vector3<f64>) -> [f64; 4] {
    let [w, x, y, z] = *q;
    [
        -(2.0 * v.x * y - 2.0 * v.y * x),
        -(2.0 * v.x * z - 2.0 * v.y * w - 4.0 * v.z * x),
        -(2.0 * v.x * w + 2.0 * v.y * z - 4.0 * v.z * y),
        -(2.0 * v.x * x + 2.0 * v.y * y),
    ]
}

/// Cosine between two position vectors and its gradient w.r.t. the second.
fn position_cos_alpha(p: &Vector3<f64>, p_hat: &Vector3<f64>) -> (f64, Vector3<f64>) {
    let (np, nh) = (p.norm(), p_hat.norm());
    if np < DEGENERATE_NORM || nh < DEGENERATE_NORM {
        return (1.0, Vector3::zeros());
    }
    let c = p.dot(p_hat) / (np * nh);
    (c, p / (np * nh) - (c / (nh * nh)) * p_hat)
}
