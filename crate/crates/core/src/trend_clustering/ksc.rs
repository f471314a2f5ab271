//! K-Spectral-Centroid distance and centroid update.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transforms::shift;

/// Optimal scale and shift aligning a centroid to a series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KscAlignment {
    pub alpha: f64,
    pub q: isize,
    pub distance: f64,
}

impl KscAlignment {
    const ZERO: KscAlignment = KscAlignment {
        alpha: 0.0,
        q: 0,
        distance: 0.0,
    };
    const UNRELATED: KscAlignment = KscAlignment {
        alpha: 0.0,
        q: 0,
        distance: 1.0,
    };
}

/// Shift candidates ordered so that strict improvement keeps the smallest
/// `|q|`, then the smallest `q`: 0, -1, 1, -2, 2, ...
fn shift_order(len: usize) -> impl Iterator<Item = isize> {
    let max = len.saturating_sub(1) as isize;
    std::iter::once(0).chain((1..=max).flat_map(|m| [-m, m]))
}

/// `min_{alpha >= 0, q} ||t - alpha * shift(o, q)|| / ||t||` over all shifts
/// `|q| < len`. The scale is the least-squares minimizer
/// `t'o(q) / ||o(q)||^2`, clamped at zero.
pub fn ksc_distance(t: &[f64], o: &[f64]) -> Result<KscAlignment> {
    if t.len() != o.len() {
        return Err(Error::LengthMismatch {
            expected: t.len(),
            found: o.len(),
        });
    }
    let t_norm = t.iter().map(|x| x * x).sum::<f64>().sqrt();
    let o_zero = o.iter().all(|&x| x == 0.0);
    match (t_norm == 0.0, o_zero) {
        (true, true) => return Ok(KscAlignment::ZERO),
        (true, false) | (false, true) => return Ok(KscAlignment::UNRELATED),
        _ => {}
    }

    let n = t.len() as isize;
    let mut best = KscAlignment::UNRELATED;
    for q in shift_order(t.len()) {
        // Shifted centroid entry at j is o[j - q] when in range.
        let lo = q.max(0);
        let hi = n.min(n + q);
        let mut cross = 0.0;
        let mut energy = 0.0;
        for j in lo..hi {
            let oj = o[(j - q) as usize];
            cross += t[j as usize] * oj;
            energy += oj * oj;
        }
        if energy == 0.0 || cross <= 0.0 {
            continue;
        }
        let alpha = cross / energy;
        let mut resid = 0.0;
        for j in 0..n {
            let oj = if j >= lo && j < hi { o[(j - q) as usize] } else { 0.0 };
            let r = t[j as usize] - alpha * oj;
            resid += r * r;
        }
        let distance = (resid.sqrt() / t_norm).min(1.0);
        if distance < best.distance {
            best = KscAlignment { alpha, q, distance };
        }
    }
    Ok(best)
}

/// Unit-norm eigenvector for the smallest eigenvalue of
/// `sum_i (I - x_i x_i' / ||x_i||^2)`, where `x_i` is member `i` shifted by
/// `-q_i` into the centroid frame. Sign is fixed so the entries sum to a
/// non-negative value; an all-zero member set yields the zero vector.
pub fn ksc_centroid(members: &[&[f64]], alignments: &[KscAlignment]) -> Result<Vec<f64>> {
    let Some(first) = members.first() else {
        return Err(Error::invalid("ksc centroid of an empty member list"));
    };
    if members.len() != alignments.len() {
        return Err(Error::LengthMismatch {
            expected: members.len(),
            found: alignments.len(),
        });
    }
    let w = first.len();
    let mut m = DMatrix::<f64>::zeros(w, w);
    let mut used = 0usize;
    for (x, a) in members.iter().zip(alignments) {
        if x.len() != w {
            return Err(Error::LengthMismatch {
                expected: w,
                found: x.len(),
            });
        }
        let aligned = shift(x, -a.q)?;
        let energy: f64 = aligned.iter().map(|v| v * v).sum();
        if energy == 0.0 {
            continue;
        }
        used += 1;
        for i in 0..w {
            m[(i, i)] += 1.0;
            for j in 0..w {
                m[(i, j)] -= aligned[i] * aligned[j] / energy;
            }
        }
    }
    if used == 0 {
        return Ok(vec![0.0; w]);
    }
    let eig = SymmetricEigen::new(m);
    let mut idx = 0;
    for i in 1..w {
        if eig.eigenvalues[i] < eig.eigenvalues[idx] {
            idx = i;
        }
    }
    let v = eig.eigenvectors.column(idx);
    let norm = v.norm();
    let sign = if v.sum() < 0.0 { -1.0 } else { 1.0 };
    Ok(v.iter().map(|x| sign * x / norm).collect())
}
