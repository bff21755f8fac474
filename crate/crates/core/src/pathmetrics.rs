//! Metrics over time-ordered pose traces: positional spread during in-place
//! rotations, yaw-bin uniformity, straight-line fit quality and circular
//! yaw statistics.
//!
//! Yaw is measured about the world +y axis from the viewing direction's
//! (x, z) components: facing −z is 0°, facing −x is 90°.

use std::fmt::Write as _;

use thiserror::Error;

use crate::plot::{Arrow, LinePlot, Series};
use crate::pose::{Pose, Position, Quaternion};

pub const YAW_BINS: usize = 36;
pub const IQR_FENCE: f64 = 1.5;
/// Samples per second of the reference capture setup.
pub const NOMINAL_RATE_HZ: f64 = 30.0;
pub const DEFAULT_ARROW_STRIDE: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("yaw undefined: view direction is vertical")]
    UndefinedYaw,
    #[error("degenerate path: all positions coincide")]
    DegeneratePath,
    #[error("circular mean undefined: headings cancel out")]
    UndefinedMean,
    #[error("trace csv line {line}: {message}")]
    Csv { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathTrace {
    samples: Vec<(f64, Pose)>,
}

impl PathTrace {
    pub fn new(samples: Vec<(f64, Pose)>) -> Result<Self, PathError> {
        if let Some(w) = samples.windows(2).find(|w| !(w[1].0 > w[0].0)) {
            return Err(PathError::InvalidArgument(format!(
                "timestamps must increase strictly ({} then {})",
                w[0].0, w[1].0
            )));
        }
        Ok(PathTrace { samples })
    }

    /// Poses sampled at the nominal 30 Hz starting at t = 0.
    pub fn from_poses(poses: impl IntoIterator<Item = Pose>) -> Self {
        let samples = poses
            .into_iter()
            .enumerate()
            .map(|(i, p)| (i as f64 / NOMINAL_RATE_HZ, p))
            .collect();
        PathTrace { samples }
    }

    pub fn samples(&self) -> &[(f64, Pose)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn xz(&self) -> Vec<(f64, f64)> {
        self.samples.iter().map(|(_, p)| (p.position.x, p.position.z)).collect()
    }

    /// Parses CSV with header `t,x,y,z,qw,qx,qy,qz`.
    pub fn from_csv(text: &str) -> Result<Self, PathError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "t,x,y,z,qw,qx,qy,qz" => {}
            _ => {
                return Err(PathError::Csv {
                    line: 1,
                    message: "expected header t,x,y,z,qw,qx,qy,qz".into(),
                })
            }
        }
        let mut samples = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| PathError::Csv { line: i + 1, message };
            let v: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>().map_err(|_| err(format!("bad number `{f}`"))))
                .collect::<Result<_, _>>()?;
            if v.len() != 8 {
                return Err(err(format!("expected 8 fields, got {}", v.len())));
            }
            let q = Quaternion::new(v[4], v[5], v[6], v[7]).map_err(|e| err(e.to_string()))?;
            samples.push((v[0], Pose::new(Position::new(v[1], v[2], v[3]), q)));
        }
        PathTrace::new(samples)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,x,y,z,qw,qx,qy,qz\n");
        for (t, p) in &self.samples {
            let q = p.rotation;
            let _ = writeln!(s, "{t},{},{},{},{},{},{},{}", p.position.x, p.position.y, p.position.z, q.w, q.x, q.y, q.z);
        }
        s
    }
}

/// Spread of positions in the (x, z) plane:
/// `σ = (1/(N−1)) · Σᵢ √((xᵢ−x̄)² + (zᵢ−z̄)²)`.
///
/// This is a mean radial deviation with an `N − 1` normalizer rather than a
/// textbook standard deviation; it is kept in this form so reported values
/// stay comparable.
pub fn xz_spread(trace: &PathTrace) -> Result<f64, PathError> {
    xz_spread_of(&trace.xz())
}

pub fn xz_spread_of(points: &[(f64, f64)]) -> Result<f64, PathError> {
    let n = points.len();
    if n < 2 {
        return Err(PathError::InvalidArgument(format!("spread needs at least 2 samples, got {n}")));
    }
    let (sx, sz) = points.iter().fold((0.0, 0.0), |(a, b), (x, z)| (a + x, b + z));
    let (mx, mz) = (sx / n as f64, sz / n as f64);
    let total: f64 = points.iter().map(|(x, z)| (x - mx).hypot(z - mz)).sum();
    Ok(total / (n - 1) as f64)
}

/// Yaw in degrees, `[0, 360)`.
pub fn yaw_of(pose: &Pose) -> Result<f64, PathError> {
    let v = *pose.view_direction().vector();
    if v.x.hypot(v.z) < 1e-9 {
        return Err(PathError::UndefinedYaw);
    }
    Ok(wrap_degrees((-v.x).atan2(-v.z).to_degrees()))
}

fn wrap_degrees(d: f64) -> f64 {
    let w = d.rem_euclid(360.0);
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct YawHistogram {
    pub counts: [usize; YAW_BINS],
    pub mean: f64,
    pub std: f64,
    pub filtered_mean: f64,
    pub filtered_std: f64,
    /// Bins whose counts fell outside the IQR fences.
    pub removed_bins: Vec<usize>,
}

/// Bin `k` covers `[10k, 10(k+1))` degrees; angles are wrapped first.
pub fn yaw_bin(deg: f64) -> usize {
    ((wrap_degrees(deg) / (360.0 / YAW_BINS as f64)) as usize).min(YAW_BINS - 1)
}

pub fn yaw_histogram(trace: &PathTrace) -> Result<YawHistogram, PathError> {
    let yaws = trace
        .samples
        .iter()
        .map(|(_, p)| yaw_of(p))
        .collect::<Result<Vec<_>, _>>()?;
    yaw_histogram_of(&yaws)
}

pub fn yaw_histogram_of(yaws_deg: &[f64]) -> Result<YawHistogram, PathError> {
    if yaws_deg.len() < YAW_BINS {
        return Err(PathError::InvalidArgument(format!(
            "yaw histogram needs at least {YAW_BINS} samples, got {}",
            yaws_deg.len()
        )));
    }
    let mut counts = [0usize; YAW_BINS];
    for y in yaws_deg {
        counts[yaw_bin(*y)] += 1;
    }
    let raw: Vec<f64> = counts.iter().map(|c| *c as f64).collect();
    let (mean, std) = mean_std(&raw);

    let mut sorted = raw.clone();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile(&sorted, 0.25);
    let q3 = quantile(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - IQR_FENCE * iqr, q3 + IQR_FENCE * iqr);
    let mut kept = Vec::new();
    let mut removed_bins = Vec::new();
    for (k, c) in raw.iter().enumerate() {
        if *c < lo || *c > hi {
            removed_bins.push(k);
        } else {
            kept.push(*c);
        }
    }
    let (filtered_mean, filtered_std) = mean_std(&kept);
    Ok(YawHistogram {
        counts,
        mean,
        std,
        filtered_mean,
        filtered_std,
        removed_bins,
    })
}

/// Population mean and standard deviation.
fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitAxis {
    /// `z = slope·x + intercept`
    ZOnX,
    /// `x = slope·z + intercept`, used for near-vertical paths.
    XOnZ,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FittedLine {
    pub axis: FitAxis,
    pub slope: f64,
    pub intercept: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub total_squared_residuals: f64,
    pub per_sample: f64,
    pub line: FittedLine,
}

pub fn line_fit_residuals(trace: &PathTrace) -> Result<LineFit, PathError> {
    line_fit_of(&trace.xz())
}

/// Ordinary least squares on (x, z) points. The regression runs on the axis
/// with the larger spread as the independent variable.
pub fn line_fit_of(points: &[(f64, f64)]) -> Result<LineFit, PathError> {
    let n = points.len();
    if n < 3 {
        return Err(PathError::InvalidArgument(format!("line fit needs at least 3 samples, got {n}")));
    }
    // A canonical order makes the sums independent of sample order.
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let mz = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let szz: f64 = pts.iter().map(|p| (p.1 - mz).powi(2)).sum();
    let sxz: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - mz)).sum();
    if sxx == 0.0 && szz == 0.0 {
        return Err(PathError::DegeneratePath);
    }
    let (axis, slope, intercept) = if sxx >= szz {
        let b = sxz / sxx;
        (FitAxis::ZOnX, b, mz - b * mx)
    } else {
        let b = sxz / szz;
        (FitAxis::XOnZ, b, mx - b * mz)
    };
    let total: f64 = pts
        .iter()
        .map(|(x, z)| match axis {
            FitAxis::ZOnX => (z - (slope * x + intercept)).powi(2),
            FitAxis::XOnZ => (x - (slope * z + intercept)).powi(2),
        })
        .sum();
    Ok(LineFit {
        total_squared_residuals: total,
        per_sample: total / nf,
        line: FittedLine { axis, slope, intercept },
    })
}

/// Circular mean and circular standard deviation (`√(−2 ln R)`), degrees.
pub fn circular_stats_deg(yaws_deg: &[f64]) -> Result<(f64, f64), PathError> {
    if yaws_deg.len() < 2 {
        return Err(PathError::InvalidArgument("circular statistics need at least 2 samples".into()));
    }
    let n = yaws_deg.len() as f64;
    let (s, c) = yaws_deg.iter().fold((0.0, 0.0), |(s, c), y| {
        let (sy, cy) = y.to_radians().sin_cos();
        (s + sy, c + cy)
    });
    let r = s.hypot(c) / n;
    if r < 1e-9 {
        return Err(PathError::UndefinedMean);
    }
    let mean = wrap_degrees(s.atan2(c).to_degrees());
    let std = (-2.0 * r.min(1.0).ln()).sqrt().to_degrees();
    Ok((mean, std))
}

pub fn yaw_concentration(trace: &PathTrace) -> Result<(f64, f64), PathError> {
    let yaws = trace
        .samples
        .iter()
        .map(|(_, p)| yaw_of(p))
        .collect::<Result<Vec<_>, _>>()?;
    circular_stats_deg(&yaws)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadingArrow {
    pub x: f64,
    pub z: f64,
    pub yaw_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathReport {
    pub polyline: Vec<(f64, f64)>,
    pub polyline_length: f64,
    pub arrows: Vec<HeadingArrow>,
    /// Indices whose displacement from the previous sample exceeds the speed limit.
    pub speed_flags: Vec<usize>,
}

/// (x, z) polyline with one averaged heading arrow per `stride` samples and
/// flags for physically implausible jumps.
pub fn compound_path_report(trace: &PathTrace, stride: usize, max_speed: f64) -> Result<PathReport, PathError> {
    if stride == 0 {
        return Err(PathError::InvalidArgument("stride must be at least 1".into()));
    }
    let polyline = trace.xz();
    let polyline_length = polyline
        .windows(2)
        .map(|w| (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1))
        .sum();
    let mut arrows = Vec::new();
    for chunk in trace.samples.chunks(stride) {
        let yaws: Vec<f64> = chunk.iter().filter_map(|(_, p)| yaw_of(p).ok()).collect();
        let heading = match yaws.len() {
            0 => continue,
            1 => yaws[0],
            _ => match circular_stats_deg(&yaws) {
                Ok((m, _)) => m,
                Err(_) => continue,
            },
        };
        let n = chunk.len() as f64;
        let (sx, sz) = chunk.iter().fold((0.0, 0.0), |(a, b), (_, p)| (a + p.position.x, b + p.position.z));
        arrows.push(HeadingArrow {
            x: sx / n,
            z: sz / n,
            yaw_deg: heading,
        });
    }
    let speed_flags = trace
        .samples
        .windows(2)
        .enumerate()
        .filter(|(_, w)| {
            let dt = w[1].0 - w[0].0;
            let step = (w[1].1.position - w[0].1.position).xz_norm();
            step > max_speed * dt
        })
        .map(|(i, _)| i + 1)
        .collect();
    Ok(PathReport {
        polyline,
        polyline_length,
        arrows,
        speed_flags,
    })
}

trait XzNorm {
    fn xz_norm(&self) -> f64;
}

impl XzNorm for Position {
    fn xz_norm(&self) -> f64 {
        self.x.hypot(self.z)
    }
}

/// Scatter of regressed (x, z) positions, fitted line (when defined) and heading arrows.
pub fn path_svg(report: &PathReport, fit: Option<&LineFit>, title: &str) -> String {
    let mut plot = LinePlot::new(title, "x", "z");
    plot.equal_aspect(true);
    plot.add_series(Series::scatter("positions", report.polyline.clone()));
    if let Some(fit) = fit {
        let (lo, hi) = match fit.line.axis {
            FitAxis::ZOnX => extent(report.polyline.iter().map(|p| p.0)),
            FitAxis::XOnZ => extent(report.polyline.iter().map(|p| p.1)),
        };
        let at = |u: f64| match fit.line.axis {
            FitAxis::ZOnX => (u, fit.line.slope * u + fit.line.intercept),
            FitAxis::XOnZ => (fit.line.slope * u + fit.line.intercept, u),
        };
        plot.add_series(Series::line("least squares", vec![at(lo), at(hi)]));
    }
    let len = (report.polyline_length / (report.arrows.len().max(1) as f64 * 2.0)).clamp(0.05, 0.5);
    for a in &report.arrows {
        let r = a.yaw_deg.to_radians();
        let (dx, dz) = (-r.sin() * len, -r.cos() * len);
        plot.add_arrow(Arrow {
            from: (a.x, a.z),
            to: (a.x + dx, a.z + dz),
        });
    }
    plot.to_svg()
}

fn extent(it: impl Iterator<Item = f64>) -> (f64, f64) {
    it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}
