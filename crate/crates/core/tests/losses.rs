use std::time::Instant;

use geoloss_core::losses::{evaluate, gradient, AlphaReading, LossFormulation, LossInputs, FORMULATION_IDS};
use geoloss_core::{Pose, Position, Quaternion};
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FD_STEP: f64 = 1e-6;
const FD_TOLERANCE: f64 = 1e-5;

fn random_unit_quat(rng: &mut ChaCha8Rng) -> Quaternion {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        // stay clear of the w = 0 sign flip
        if n > 0.2 && (q[0] / n).abs() > 0.1 {
            return Quaternion::from_array(q).unwrap();
        }
    }
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    let p = Position::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
    Pose::new(p, random_unit_quat(rng))
}

fn random_inputs(rng: &mut ChaCha8Rng) -> LossInputs {
    let truth = random_pose(rng);
    LossInputs::new(std::array::from_fn(|_| random_pose(rng)), truth)
}

/// Non-degenerate: every norm inside a loss term is comfortably non-zero.
fn non_degenerate(x: &LossInputs) -> bool {
    x.predicted.iter().all(|p| {
        (p.position - x.truth.position).norm() > 1e-2 && {
            let a = p.rotation.to_array();
            let b = x.truth.rotation.to_array();
            (0..4).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt() > 1e-2
        }
    })
}

/// Flat view of the 21 free coordinates: three positions, then three raw quaternions.
fn flatten(x: &LossInputs) -> Vec<f64> {
    let mut v = Vec::with_capacity(21);
    for p in &x.predicted {
        v.extend(p.position.iter());
    }
    for p in &x.predicted {
        v.extend(p.rotation.to_array());
    }
    v
}

fn unflatten(base: &LossInputs, v: &[f64]) -> LossInputs {
    let mut out = *base;
    for i in 0..3 {
        out.predicted[i].position = Vector3::new(v[3 * i], v[3 * i + 1], v[3 * i + 2]);
        let q = &v[9 + 4 * i..13 + 4 * i];
        // raw, possibly non-unit: the loss normalizes internally
        out.predicted[i].rotation = Quaternion { w: q[0], x: q[1], y: q[2], z: q[3] };
    }
    out
}

fn finite_difference(f: &LossFormulation, x: &LossInputs) -> Vec<f64> {
    let base = flatten(x);
    (0..base.len())
        .map(|k| {
            let mut plus = base.clone();
            plus[k] += FD_STEP;
            let mut minus = base.clone();
            minus[k] -= FD_STEP;
            (evaluate(f, &unflatten(x, &plus)) - evaluate(f, &unflatten(x, &minus))) / (2.0 * FD_STEP)
        })
        .collect()
}

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
    diff / scale.max(1e-12)
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for id in FORMULATION_IDS {
        let readings: &[AlphaReading] = if id == 9 { &[AlphaReading::ViewDirections, AlphaReading::PositionVectors] } else { &[AlphaReading::ViewDirections] };
        for &alpha in readings {
            let mut f = LossFormulation::new(id).unwrap();
            f.alpha = alpha;
            let mut checked = 0;
            while checked < 100 {
                let x = random_inputs(&mut rng);
                if !non_degenerate(&x) {
                    continue;
                }
                let a = gradient(&f, &x).to_vec();
                let n = finite_difference(&f, &x);
                let err = relative_error(&a, &n);
                assert!(err < FD_TOLERANCE, "id {id} ({alpha:?}): relative error {err:e}\nanalytic {a:?}\nnumeric {n:?}");
                checked += 1;
            }
        }
    }
    assert!(start.elapsed().as_secs_f64() < 30.0);
}

#[test]
fn perfect_prediction_is_a_zero_of_value_and_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10_000 {
        let truth = random_pose(&mut rng);
        let x = LossInputs::new([truth; 3], truth);
        for id in FORMULATION_IDS {
            let f = LossFormulation::new(id).unwrap();
            assert_eq!(evaluate(&f, &x), 0.0, "id {id}");
            assert!(gradient(&f, &x).to_vec().iter().all(|g| *g == 0.0), "id {id}");
        }
    }
}

#[test]
fn loss_is_non_negative() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10_000 {
        let x = random_inputs(&mut rng);
        for id in FORMULATION_IDS {
            let v = evaluate(&LossFormulation::new(id).unwrap(), &x);
            assert!(v >= 0.0 && v.is_finite(), "id {id}: {v}");
        }
    }
}

fn shifted(x: &LossInputs, s: Vector3<f64>) -> LossInputs {
    let mut out = *x;
    for p in &mut out.predicted {
        p.position += s;
    }
    out.truth.position += s;
    out
}

#[test]
fn joint_shift_leaves_all_default_formulations_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let x = random_inputs(&mut rng);
        let s = Vector3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
        for id in FORMULATION_IDS {
            let f = LossFormulation::new(id).unwrap();
            let (a, b) = (evaluate(&f, &x), evaluate(&f, &shifted(&x, s)));
            assert!((a - b).abs() <= 1e-9 * (1.0 + a), "id {id}: {a} vs {b}");
        }
    }
}

#[test]
fn position_vector_alpha_depends_on_origin() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut f = LossFormulation::new(9).unwrap();
    f.alpha = AlphaReading::PositionVectors;
    let mut changed = 0;
    for _ in 0..100 {
        let x = random_inputs(&mut rng);
        let y = shifted(&x, Vector3::new(1.0, -2.0, 0.5));
        if (evaluate(&f, &x) - evaluate(&f, &y)).abs() > 1e-9 {
            changed += 1;
        }
    }
    assert!(changed > 90);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn geometric_loss_grows_along_a_ray(seed in any::<u64>(), r in 0.01f64..5.0, dr in 0.01f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = random_inputs(&mut rng);
        let dir = loop {
            let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if v.norm() > 0.1 {
                break v.normalize();
            }
        };
        let f = LossFormulation::new(6).unwrap();
        x.predicted[2].position = x.truth.position + r * dir;
        let near = evaluate(&f, &x);
        x.predicted[2].position = x.truth.position + (r + dr) * dir;
        let far = evaluate(&f, &x);
        prop_assert!(far > near, "{near} !< {far}");
    }
}
