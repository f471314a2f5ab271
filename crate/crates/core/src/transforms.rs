//! Pure series transforms shared by trend extraction and feature building.
//!
//! Series are plain `f64` slices; the two newtypes below only exist where the
//! distinction between cumulative counts and per-window gains matters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cumulative engagement counts, one entry per observation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CumulativeSeries(Vec<f64>);

impl CumulativeSeries {
    /// Validates non-negativity and monotonicity.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = first_monotonicity_violation(&values) {
            return Err(Error::invalid(format!(
                "cumulative series not non-decreasing/non-negative at window {}",
                i + 1
            )));
        }
        Ok(CumulativeSeries(values))
    }

    /// Wraps values without checking monotonicity (lenient ingestion).
    pub fn from_raw(values: Vec<f64>) -> Self {
        CumulativeSeries(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Value at the last window (the reference time).
    pub fn last(&self) -> f64 {
        self.0.last().copied().unwrap_or(0.0)
    }

    pub fn to_delta(&self) -> DeltaSeries {
        DeltaSeries(to_delta(&self.0))
    }
}

/// Per-window gains derived from a [`CumulativeSeries`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeltaSeries(Vec<f64>);

impl DeltaSeries {
    pub fn new(values: Vec<f64>) -> Self {
        DeltaSeries(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Index of the first entry that is negative, non-finite, or smaller than
/// its predecessor.
pub fn first_monotonicity_violation(values: &[f64]) -> Option<usize> {
    let mut prev = 0.0;
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() || v < 0.0 || (i > 0 && v < prev) {
            return Some(i);
        }
        prev = v;
    }
    None
}

/// Per-window gains; the value before the first window is taken as zero.
pub fn to_delta(cumulative: &[f64]) -> Vec<f64> {
    let mut prev = 0.0;
    cumulative
        .iter()
        .map(|&c| {
            let d = c - prev;
            prev = c;
            d
        })
        .collect()
}

/// Running sum; inverse of [`to_delta`].
pub fn cumulative_sum(deltas: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    deltas
        .iter()
        .map(|&d| {
            acc += d;
            acc
        })
        .collect()
}

/// Elementwise natural `ln(1 + x)`.
pub fn log1p_series(s: &[f64]) -> Result<Vec<f64>> {
    s.iter()
        .map(|&x| {
            if x <= -1.0 || x.is_nan() {
                Err(Error::invalid(format!("log1p undefined for {x}")))
            } else {
                Ok(x.ln_1p())
            }
        })
        .collect()
}

/// Z-normalization with the population (1/N) standard deviation. A constant
/// series maps to all zeros.
pub fn znorm(s: &[f64]) -> Vec<f64> {
    if s.is_empty() {
        return Vec::new();
    }
    let n = s.len() as f64;
    let mean = s.iter().sum::<f64>() / n;
    let var = s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 || !std.is_finite() {
        return vec![0.0; s.len()];
    }
    s.iter().map(|x| (x - mean) / std).collect()
}

/// Moves entries `q` positions toward higher indices (toward lower indices
/// for negative `q`), zero-filling vacated positions.
pub fn shift(s: &[f64], q: isize) -> Result<Vec<f64>> {
    let n = s.len();
    if q.unsigned_abs() > n {
        return Err(Error::invalid(format!(
            "shift {q} exceeds series length {n}"
        )));
    }
    let mut out = vec![0.0; n];
    shift_into(s, q, &mut out);
    Ok(out)
}

/// Allocation-free variant of [`shift`] for hot loops; `|q| <= s.len()`.
pub(crate) fn shift_into(s: &[f64], q: isize, out: &mut [f64]) {
    let n = s.len();
    out.iter_mut().for_each(|x| *x = 0.0);
    let m = q.unsigned_abs();
    if q >= 0 {
        out[m..n].copy_from_slice(&s[..n - m]);
    } else {
        out[..n - m].copy_from_slice(&s[m..n]);
    }
}
