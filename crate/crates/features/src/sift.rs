//! Difference-of-Gaussians keypoints and gradient-histogram descriptors.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::image::{gaussian_blur, Image};
use crate::FeatureError;

pub const DESCRIPTOR_LEN: usize = 128;
pub const MIN_IMAGE_SIZE: usize = 64;
const ORIENTATION_BINS: usize = 36;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SiftConfig {
    pub octaves: usize,
    pub levels: usize,
    pub sigma0: f64,
    /// Minimum |DoG| at the refined extremum, on 0–1 intensities.
    pub contrast_threshold: f64,
    /// Maximum ratio of principal curvatures.
    pub edge_ratio: f64,
    /// Secondary orientation peaks at or above this share of the maximum
    /// spawn their own keypoint.
    pub peak_ratio: f64,
}

impl Default for SiftConfig {
    fn default() -> Self {
        SiftConfig {
            octaves: 4,
            levels: 5,
            sigma0: 1.6,
            contrast_threshold: 0.03,
            edge_ratio: 10.0,
            peak_ratio: 0.8,
        }
    }
}

impl SiftConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.octaves == 0 || self.levels < 4 {
            return Err(FeatureError::InvalidArgument("need at least one octave and four levels".into()));
        }
        if !(self.sigma0 > 0.0) || !(self.contrast_threshold >= 0.0) || !(self.edge_ratio >= 1.0) {
            return Err(FeatureError::InvalidArgument("sigma0 must be positive, contrast_threshold non-negative, edge_ratio at least 1".into()));
        }
        if !(self.peak_ratio > 0.0 && self.peak_ratio <= 1.0) {
            return Err(FeatureError::InvalidArgument(format!("peak_ratio must lie in (0, 1], got {}", self.peak_ratio)));
        }
        Ok(())
    }

    /// Blur of level `s` relative to its octave's resolution.
    pub fn level_sigma(&self, s: f64) -> f64 {
        self.sigma0 * 2f64.powf(s / 2.0)
    }
}

/// Gaussian pyramid and its DoG stack. Level `s` of every octave has blur
/// `sigma0·√2^s` in that octave's pixels; octave `o+1` starts from level 2
/// of octave `o` sampled at half size.
#[derive(Debug, Clone)]
pub struct ScaleSpace {
    pub sigmas: Vec<f64>,
    pub gaussians: Vec<Vec<Image>>,
    pub dogs: Vec<Vec<Image>>,
}

impl ScaleSpace {
    pub fn build(img: &Image, cfg: &SiftConfig) -> Result<ScaleSpace, FeatureError> {
        cfg.validate()?;
        if img.width() < MIN_IMAGE_SIZE || img.height() < MIN_IMAGE_SIZE {
            return Err(FeatureError::ImageTooSmall {
                width: img.width(),
                height: img.height(),
            });
        }
        let sigmas: Vec<f64> = (0..cfg.levels).map(|s| cfg.level_sigma(s as f64)).collect();
        let mut gaussians: Vec<Vec<Image>> = Vec::with_capacity(cfg.octaves);
        let mut base = gaussian_blur(img, cfg.sigma0)?;
        for o in 0..cfg.octaves {
            if o > 0 {
                base = gaussians[o - 1][2].downsample();
                if base.width() < 8 || base.height() < 8 {
                    break;
                }
            }
            let mut levels = Vec::with_capacity(cfg.levels);
            levels.push(base.clone());
            for s in 1..cfg.levels {
                let inc = (sigmas[s].powi(2) - sigmas[0].powi(2)).sqrt();
                levels.push(gaussian_blur(&base, inc)?);
            }
            gaussians.push(levels);
        }
        let dogs = gaussians
            .iter()
            .map(|lv| lv.windows(2).map(|w| w[1].subtract(&w[0])).collect())
            .collect();
        Ok(ScaleSpace { sigmas, gaussians, dogs })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    /// Sub-pixel position in input-image pixels.
    pub x: f64,
    pub y: f64,
    pub octave: usize,
    /// DoG index of the extremum.
    pub scale: usize,
    /// Refined scale offset from `scale`, in levels.
    pub scale_offset: f64,
    /// Blur in input-image pixels.
    pub sigma: f64,
    /// Gradient direction, degrees in `[0, 360)`, with x right and y down.
    pub orientation: f64,
    /// Orientation histogram peak.
    pub magnitude: f64,
    /// Interpolated DoG value.
    pub response: f64,
}

impl Keypoint {
    fn octave_coords(&self) -> (f64, f64) {
        let f = 2f64.powi(self.octave as i32);
        (self.x / f, self.y / f)
    }

    fn level_sigma(&self, cfg: &SiftConfig) -> f64 {
        cfg.level_sigma(self.scale as f64 + self.scale_offset)
    }

    fn level(&self, cfg: &SiftConfig) -> usize {
        ((self.scale as f64 + self.scale_offset).round().max(0.0) as usize).min(cfg.levels - 1)
    }
}

fn gradient(img: &Image, x: usize, y: usize) -> (f64, f64) {
    let (xi, yi) = (x as isize, y as isize);
    (
        img.get_clamped(xi + 1, yi) - img.get_clamped(xi - 1, yi),
        img.get_clamped(xi, yi + 1) - img.get_clamped(xi, yi - 1),
    )
}

fn is_extremum(dogs: &[Image], s: usize, x: usize, y: usize) -> bool {
    let v = dogs[s].get(x, y);
    let (mut max, mut min) = (true, true);
    for img in &dogs[s - 1..=s + 1] {
        for yy in y - 1..=y + 1 {
            for xx in x - 1..=x + 1 {
                if std::ptr::eq(img, &dogs[s]) && xx == x && yy == y {
                    continue;
                }
                let n = img.get(xx, yy);
                max &= v > n;
                min &= v < n;
                if !max && !min {
                    return false;
                }
            }
        }
    }
    true
}

/// One Newton step on the DoG around an extremum. Returns the offset
/// `(dx, dy, ds)`, the interpolated value and the 2×2 spatial Hessian.
fn refine(dogs: &[Image], s: usize, x: usize, y: usize) -> Option<(Vector3<f64>, f64, [f64; 3])> {
    let d = |ds: isize, dx: isize, dy: isize| dogs[(s as isize + ds) as usize].get((x as isize + dx) as usize, (y as isize + dy) as usize);
    let v = d(0, 0, 0);
    let g = Vector3::new(
        0.5 * (d(0, 1, 0) - d(0, -1, 0)),
        0.5 * (d(0, 0, 1) - d(0, 0, -1)),
        0.5 * (d(1, 0, 0) - d(-1, 0, 0)),
    );
    let dxx = d(0, 1, 0) + d(0, -1, 0) - 2.0 * v;
    let dyy = d(0, 0, 1) + d(0, 0, -1) - 2.0 * v;
    let dss = d(1, 0, 0) + d(-1, 0, 0) - 2.0 * v;
    let dxy = 0.25 * (d(0, 1, 1) - d(0, 1, -1) - d(0, -1, 1) + d(0, -1, -1));
    let dxs = 0.25 * (d(1, 1, 0) - d(1, -1, 0) - d(-1, 1, 0) + d(-1, -1, 0));
    let dys = 0.25 * (d(1, 0, 1) - d(1, 0, -1) - d(-1, 0, 1) + d(-1, 0, -1));
    let h = Matrix3::new(dxx, dxy, dxs, dxy, dyy, dys, dxs, dys, dss);
    let offset = -(h.lu().solve(&g)?);
    if !offset.iter().all(|o| o.is_finite()) {
        return None;
    }
    Some((offset, v + 0.5 * g.dot(&offset), [dxx, dyy, dxy]))
}

/// Smoothed 36-bin histogram of gradient directions around the keypoint,
/// weighted by magnitude and a Gaussian of 1.5× the keypoint blur.
fn orientation_histogram(img: &Image, xo: f64, yo: f64, sigma: f64) -> [f64; ORIENTATION_BINS] {
    let mut hist = [0.0; ORIENTATION_BINS];
    let ws = 1.5 * sigma;
    let radius = (3.0 * ws).round() as isize;
    let (cx, cy) = (xo.round() as isize, yo.round() as isize);
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let (px, py) = (cx + dx, cy + dy);
            if px < 1 || py < 1 || px >= img.width() as isize - 1 || py >= img.height() as isize - 1 {
                continue;
            }
            let (gx, gy) = gradient(img, px as usize, py as usize);
            let (rx, ry) = (px as f64 - xo, py as f64 - yo);
            let w = (-(rx * rx + ry * ry) / (2.0 * ws * ws)).exp();
            let angle = gy.atan2(gx).rem_euclid(TAU);
            let bin = ((angle / TAU * ORIENTATION_BINS as f64) as usize) % ORIENTATION_BINS;
            hist[bin] += w * gx.hypot(gy);
        }
    }
    for _ in 0..2 {
        let prev = hist;
        for i in 0..ORIENTATION_BINS {
            let l = prev[(i + ORIENTATION_BINS - 1) % ORIENTATION_BINS];
            let r = prev[(i + 1) % ORIENTATION_BINS];
            hist[i] = 0.25 * l + 0.5 * prev[i] + 0.25 * r;
        }
    }
    hist
}

/// Peak directions in degrees with their heights.
fn orientation_peaks(hist: &[f64; ORIENTATION_BINS], peak_ratio: f64) -> Vec<(f64, f64)> {
    let max = hist.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let n = ORIENTATION_BINS;
    let mut out = Vec::new();
    for i in 0..n {
        let (l, c, r) = (hist[(i + n - 1) % n], hist[i], hist[(i + 1) % n]);
        if c > l && c > r && c >= peak_ratio * max {
            let denom = l - 2.0 * c + r;
            let off = if denom != 0.0 { 0.5 * (l - r) / denom } else { 0.0 };
            let deg = ((i as f64 + 0.5 + off) * 360.0 / n as f64).rem_euclid(360.0);
            out.push((deg, c));
        }
    }
    out
}

pub fn detect_keypoints(img: &Image, cfg: &SiftConfig) -> Result<Vec<Keypoint>, FeatureError> {
    let ss = ScaleSpace::build(img, cfg)?;
    let mut out = Vec::new();
    let edge = (cfg.edge_ratio + 1.0).powi(2) / cfg.edge_ratio;
    for (o, dogs) in ss.dogs.iter().enumerate() {
        let (w, h) = (dogs[0].width(), dogs[0].height());
        let factor = 2f64.powi(o as i32);
        for s in 1..dogs.len() - 1 {
            for y in 1..h - 1 {
                for x in 1..w - 1 {
                    if dogs[s].get(x, y).abs() < 0.5 * cfg.contrast_threshold || !is_extremum(dogs, s, x, y) {
                        continue;
                    }
                    let Some((off, value, [dxx, dyy, dxy])) = refine(dogs, s, x, y) else { continue };
                    if off.iter().any(|o| o.abs() > 1.0) || value.abs() < cfg.contrast_threshold {
                        continue;
                    }
                    let (tr, det) = (dxx + dyy, dxx * dyy - dxy * dxy);
                    if det <= 0.0 || tr * tr / det >= edge {
                        continue;
                    }
                    let (xo, yo) = (x as f64 + off[0], y as f64 + off[1]);
                    if xo < 0.0 || yo < 0.0 || xo > (w - 1) as f64 || yo > (h - 1) as f64 {
                        continue;
                    }
                    let mut kp = Keypoint {
                        x: xo * factor,
                        y: yo * factor,
                        octave: o,
                        scale: s,
                        scale_offset: off[2],
                        sigma: 0.0,
                        orientation: 0.0,
                        magnitude: 0.0,
                        response: value,
                    };
                    let sigma = kp.level_sigma(cfg);
                    kp.sigma = sigma * factor;
                    let hist = orientation_histogram(&ss.gaussians[o][kp.level(cfg)], xo, yo, sigma);
                    for (deg, mag) in orientation_peaks(&hist, cfg.peak_ratio) {
                        out.push(Keypoint {
                            orientation: deg,
                            magnitude: mag,
                            ..kp
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Unit-norm 128-vector of gradient histograms.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor(pub Vec<f32>);

impl Descriptor {
    /// Normalizes, clamps at 0.2 and renormalizes.
    pub fn from_raw(raw: &[f64]) -> Result<Descriptor, FeatureError> {
        if raw.len() != DESCRIPTOR_LEN {
            return Err(FeatureError::InvalidArgument(format!("descriptor length {} != {DESCRIPTOR_LEN}", raw.len())));
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let n = norm(raw);
        if !(n > 0.0 && n.is_finite()) {
            return Err(FeatureError::FlatPatch);
        }
        let clamped: Vec<f64> = raw.iter().map(|v| (v / n).min(0.2)).collect();
        let n2 = norm(&clamped);
        Ok(Descriptor(clamped.iter().map(|v| (v / n2) as f32).collect()))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn distance(&self, o: &Descriptor) -> f64 {
        self.0
            .iter()
            .zip(&o.0)
            .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Descriptor of `kp` on the Gaussian level it was found at. The 4×4 grid of
/// cells, each 3σ wide, is laid out in the keypoint's rotated frame.
pub fn describe(img: &Image, kp: &Keypoint, cfg: &SiftConfig) -> Result<Descriptor, FeatureError> {
    let ss = ScaleSpace::build(img, cfg)?;
    describe_in(&ss, kp, cfg)
}

fn describe_in(ss: &ScaleSpace, kp: &Keypoint, cfg: &SiftConfig) -> Result<Descriptor, FeatureError> {
    let level = ss
        .gaussians
        .get(kp.octave)
        .and_then(|o| o.get(kp.level(cfg)))
        .ok_or_else(|| FeatureError::InvalidArgument(format!("keypoint octave {} outside the pyramid", kp.octave)))?;
    let (xo, yo) = kp.octave_coords();
    let cell = 3.0 * kp.level_sigma(cfg);
    let radius = 2.0 * cell * std::f64::consts::SQRT_2 + cell * 0.5;
    if xo - radius < 1.0 || yo - radius < 1.0 || xo + radius > (level.width() - 2) as f64 || yo + radius > (level.height() - 2) as f64 {
        return Err(FeatureError::BorderKeypoint { x: kp.x, y: kp.y });
    }
    let theta = kp.orientation.to_radians();
    let (c, s) = (theta.cos(), theta.sin());
    let mut raw = vec![0.0; DESCRIPTOR_LEN];
    let r = radius.ceil() as isize;
    let (cx, cy) = (xo.round() as isize, yo.round() as isize);
    for dy in -r..=r {
        for dx in -r..=r {
            let (px, py) = ((cx + dx) as usize, (cy + dy) as usize);
            let (rx, ry) = (px as f64 - xo, py as f64 - yo);
            let u = (c * rx + s * ry) / cell;
            let v = (-s * rx + c * ry) / cell;
            // bin centres sit at -1.5 … 1.5 cells
            let (bu, bv) = (u + 1.5, v + 1.5);
            if bu <= -1.0 || bu >= 4.0 || bv <= -1.0 || bv >= 4.0 {
                continue;
            }
            let (gx, gy) = gradient(level, px, py);
            let mag = gx.hypot(gy) * (-(u * u + v * v) / 8.0).exp();
            let rel = (gy.atan2(gx) - theta).rem_euclid(TAU) / (2.0 * PI) * 8.0;
            let (u0, v0, o0) = (bu.floor(), bv.floor(), rel.floor());
            let (fu, fv, fo) = (bu - u0, bv - v0, rel - o0);
            for (iv, wv) in [(v0 as isize, 1.0 - fv), (v0 as isize + 1, fv)] {
                if !(0..4).contains(&iv) {
                    continue;
                }
                for (iu, wu) in [(u0 as isize, 1.0 - fu), (u0 as isize + 1, fu)] {
                    if !(0..4).contains(&iu) {
                        continue;
                    }
                    for (io, wo) in [(o0 as usize % 8, 1.0 - fo), ((o0 as usize + 1) % 8, fo)] {
                        raw[(iv as usize * 4 + iu as usize) * 8 + io] += mag * wv * wu * wo;
                    }
                }
            }
        }
    }
    Descriptor::from_raw(&raw)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub keypoint: Keypoint,
    pub descriptor: Descriptor,
}

/// Detects and describes; keypoints too close to the border are dropped.
pub fn extract(img: &Image, cfg: &SiftConfig) -> Result<Vec<Feature>, FeatureError> {
    let ss = ScaleSpace::build(img, cfg)?;
    let kps = detect_keypoints(img, cfg)?;
    let mut out = Vec::with_capacity(kps.len());
    for kp in kps {
        match describe_in(&ss, &kp, cfg) {
            Ok(descriptor) => out.push(Feature { keypoint: kp, descriptor }),
            Err(FeatureError::BorderKeypoint { .. } | FeatureError::FlatPatch) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
