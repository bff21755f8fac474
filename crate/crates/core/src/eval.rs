//! Localization accuracy: per-sample errors, medians and cumulative error
//! histograms.

use std::cmp::Ordering;
use std::fmt::Write as _;

use thiserror::Error;

use crate::plot::{LinePlot, Series};
use crate::pose::{rotational_error_deg, Pose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRecord {
    pub positional_error: f64,
    /// Degrees.
    pub rotational_error: f64,
}

pub fn evaluate_predictions(pairs: &[(Pose, Pose)]) -> Vec<ErrorRecord> {
    pairs
        .iter()
        .map(|(pred, truth)| ErrorRecord {
            positional_error: (pred.position - truth.position).norm(),
            rotational_error: rotational_error_deg(pred.rotation, truth.rotation),
        })
        .collect()
}

/// Lower median: for an even count the smaller of the two middle values.
pub fn lower_median(values: &[f64]) -> Result<f64, EvalError> {
    if values.is_empty() {
        return Err(EvalError::InvalidArgument("median of an empty set"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v[(v.len() - 1) / 2])
}

/// Median positional and rotational error, each taken independently.
pub fn median_errors(records: &[ErrorRecord]) -> Result<(f64, f64), EvalError> {
    let pos: Vec<f64> = records.iter().map(|r| r.positional_error).collect();
    let rot: Vec<f64> = records.iter().map(|r| r.rotational_error).collect();
    Ok((lower_median(&pos)?, lower_median(&rot)?))
}

/// Empirical CDF as a step function: after the i-th sorted value the curve
/// sits at i/N. Repeated values collapse to one step.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeHistogram {
    pub values: Vec<f64>,
    pub fractions: Vec<f64>,
}

pub fn cumulative_histogram(values: &[f64]) -> Result<CumulativeHistogram, EvalError> {
    if values.is_empty() {
        return Err(EvalError::InvalidArgument("histogram of an empty set"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out = CumulativeHistogram {
        values: Vec::new(),
        fractions: Vec::new(),
    };
    for (i, v) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        if out.values.last() == Some(v) {
            *out.fractions.last_mut().unwrap() = frac;
        } else {
            out.values.push(*v);
            out.fractions.push(frac);
        }
    }
    Ok(out)
}

impl CumulativeHistogram {
    /// Fraction of samples with error ≤ `x`.
    pub fn fraction_at(&self, x: f64) -> f64 {
        match self.values.partition_point(|v| *v <= x) {
            0 => 0.0,
            k => self.fractions[k - 1],
        }
    }

    /// True when this curve is never below `other`, i.e. this run's errors
    /// are stochastically no larger.
    pub fn dominates(&self, other: &CumulativeHistogram) -> bool {
        self.values
            .iter()
            .chain(&other.values)
            .all(|x| self.fraction_at(*x) >= other.fraction_at(*x))
    }

    /// Compares two runs: `Less` when `self` is strictly left of (better than)
    /// `other`, `Greater` for the reverse, `Equal` for identical curves, `None`
    /// when the curves cross.
    pub fn compare(&self, other: &CumulativeHistogram) -> Option<Ordering> {
        match (self.dominates(other), other.dominates(self)) {
            (true, true) => Some(Ordering::Equal),
            (true, false) => Some(Ordering::Less),
            (false, true) => Some(Ordering::Greater),
            (false, false) => None,
        }
    }
}

/// CSV with header `error_type,value,cum_fraction`, positional rows first.
pub fn histogram_csv(records: &[ErrorRecord]) -> Result<String, EvalError> {
    let pos = cumulative_histogram(&records.iter().map(|r| r.positional_error).collect::<Vec<_>>())?;
    let rot = cumulative_histogram(&records.iter().map(|r| r.rotational_error).collect::<Vec<_>>())?;
    let mut out = String::from("error_type,value,cum_fraction\n");
    for (label, h) in [("positional", &pos), ("rotational", &rot)] {
        for (v, f) in h.values.iter().zip(&h.fractions) {
            let _ = writeln!(out, "{label},{v},{f}");
        }
    }
    Ok(out)
}

/// Step-curve SVG of one cumulative histogram with a dotted median marker.
pub fn histogram_svg(values: &[f64], title: &str, x_label: &str) -> Result<String, EvalError> {
    let h = cumulative_histogram(values)?;
    let median = lower_median(values)?;
    let mut points = vec![(0.0_f64.min(h.values[0]), 0.0)];
    let mut prev = 0.0;
    for (v, f) in h.values.iter().zip(&h.fractions) {
        points.push((*v, prev));
        points.push((*v, *f));
        prev = *f;
    }
    let mut plot = LinePlot::new(title, x_label, "cumulative fraction");
    plot.add_series(Series::line("errors", points));
    plot.add_vertical_marker(median, "median");
    Ok(plot.to_svg())
}
