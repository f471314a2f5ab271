//! Least-squares and ridge fits on `ln(1 + y)` targets, exact leave-one-out
//! and generalized cross-validation, and information criteria.
//!
//! Every solve goes through one thin decomposition `X = W S V'` obtained
//! from a Householder QR of `X` followed by an SVD of the small triangular
//! factor. Singular values below `1e-10 * max column norm` are dropped,
//! which yields the minimum-norm solution for rank-deficient designs, and
//! ridge fits reuse the same factors with shrinkage `s / (s^2 + lambda)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative singular-value cutoff, scaled by the largest column norm.
pub const RANK_TOLERANCE: f64 = 1e-10;
/// Leverages above `1 - LEVERAGE_CUTOFF` are excluded from LOOCV.
pub const LEVERAGE_CUTOFF: f64 = 1e-8;

/// One-sided Jacobi SVD of an `m x p` matrix: `a = u diag(sigma) v'`, with
/// singular values in descending order. Columns of `u` belonging to zero
/// singular values are left at zero.
fn jacobi_svd(a: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let p = a.ncols();
    let mut cols: Vec<Vec<f64>> = (0..p).map(|j| a.column(j).iter().copied().collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..p)
        .map(|j| (0..p).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let rotate = |x: &mut [f64], y: &mut [f64], c: f64, s: f64| {
        for (xi, yi) in x.iter_mut().zip(y.iter_mut()) {
            let (a, b) = (*xi, *yi);
            *xi = c * a - s * b;
            *yi = s * a + c * b;
        }
    };
    // Columns below this energy are round-off; rotating them never converges.
    let total: f64 = cols.iter().flatten().map(|x| x * x).sum();
    let floor = 1e-30 * total;
    let mut energy: Vec<f64> = cols.iter().map(|c| c.iter().map(|x| x * x).sum()).collect();
    for _sweep in 0..80 {
        let mut rotated = false;
        for i in 0..p {
            for j in i + 1..p {
                let (alpha, beta) = (energy[i], energy[j]);
                if alpha <= floor || beta <= floor {
                    continue;
                }
                let (left, right) = cols.split_at_mut(j);
                let (ci, cj) = (&mut left[i], &mut right[0]);
                let gamma: f64 = ci.iter().zip(cj.iter()).map(|(x, y)| x * y).sum();
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(ci, cj, c, s);
                energy[i] = ci.iter().map(|x| x * x).sum();
                energy[j] = cj.iter().map(|x| x * x).sum();
                let (left, right) = v.split_at_mut(j);
                rotate(&mut left[i], &mut right[0], c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let sigma: Vec<f64> = cols.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));
    let u = DMatrix::from_fn(a.nrows(), p, |i, k| {
        let j = order[k];
        if sigma[j] > 0.0 {
            cols[j][i] / sigma[j]
        } else {
            0.0
        }
    });
    let vm = DMatrix::from_fn(p, p, |i, k| v[order[k]][i]);
    (u, order.iter().map(|&j| sigma[j]).collect(), vm)
}

/// Truncated thin SVD of a design matrix.
#[derive(Debug, Clone)]
pub struct Decomposition {
    w: DMatrix<f64>,
    sigma: Vec<f64>,
    v: DMatrix<f64>,
}

impl Decomposition {
    pub fn new(x: &DMatrix<f64>) -> Result<Self> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("non-finite value in design matrix"));
        }
        let (n, p) = x.shape();
        let max_col = (0..p).map(|j| x.column(j).norm()).fold(0.0, f64::max);
        if n == 0 || p == 0 || max_col == 0.0 {
            return Ok(Decomposition {
                w: DMatrix::zeros(n, 0),
                sigma: Vec::new(),
                v: DMatrix::zeros(p, 0),
            });
        }
        // Column pivoting orders R's rows by decreasing weight, after which
        // Jacobi on R' needs only a few sweeps. X P = Q R = Q V S U'.
        let qr = x.clone().col_piv_qr();
        let q = qr.q();
        let (v_perm, singular_values, u) = jacobi_svd(&qr.r().transpose());
        let mut v_full = v_perm;
        qr.p().inv_permute_rows(&mut v_full);
        let cutoff = RANK_TOLERANCE * max_col;
        let keep: Vec<usize> = (0..singular_values.len())
            .filter(|&j| singular_values[j] > cutoff)
            .collect();
        let qu = q * u;
        let w = DMatrix::from_fn(n, keep.len(), |i, j| qu[(i, keep[j])]);
        let v = DMatrix::from_fn(p, keep.len(), |i, j| v_full[(i, keep[j])]);
        let sigma = keep.iter().map(|&j| singular_values[j]).collect();
        Ok(Decomposition { w, sigma, v })
    }

    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn rows(&self) -> usize {
        self.w.nrows()
    }

    pub fn cols(&self) -> usize {
        self.v.nrows()
    }

    /// Minimizer of `||X theta - z||^2 + lambda ||theta||^2` (minimum norm
    /// when `lambda = 0` and `X` is rank-deficient).
    pub fn solve(&self, z: &DVector<f64>, lambda: f64) -> DVector<f64> {
        let mut proj = self.w.tr_mul(z);
        for (j, c) in proj.iter_mut().enumerate() {
            let s = self.sigma[j];
            *c *= s / (s * s + lambda);
        }
        &self.v * proj
    }

    /// Diagonal of `H = X (X'X + lambda I)^+ X'`.
    pub fn leverages(&self, lambda: f64) -> Vec<f64> {
        let shrink: Vec<f64> = self
            .sigma
            .iter()
            .map(|s| s * s / (s * s + lambda))
            .collect();
        (0..self.rows())
            .map(|i| {
                self.w
                    .row(i)
                    .iter()
                    .zip(&shrink)
                    .map(|(wij, f)| wij * wij * f)
                    .sum()
            })
            .collect()
    }
}

/// Coefficients of one fitted regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    /// Residual sum of squares in the space the fit was made in.
    pub rss: f64,
    pub rank: usize,
    pub n: usize,
}

/// Leave-one-out score plus the count of rows skipped for `h_ii ~ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoocvScore {
    pub rmse: f64,
    pub excluded: usize,
}

/// In-sample, LOOCV and GCV scores of one system at one `lambda`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemScores {
    pub fit: RegressionFit,
    pub rmse: f64,
    pub loocv: LoocvScore,
    /// `None` when `trace(H) / n >= 1`.
    pub gcv: Option<f64>,
    pub trace_h: f64,
}

fn check_system(x: &DMatrix<f64>, y: &[f64]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.nrows(),
            found: y.len(),
        });
    }
    if x.nrows() == 0 {
        return Err(Error::invalid("regression needs at least one row"));
    }
    if y.iter().any(|v| v.is_nan()) || x.iter().any(|v| v.is_nan()) {
        return Err(Error::numerical("NaN in regression inputs"));
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("ridge lambda {lambda} must be >= 0")));
    }
    Ok(())
}

/// `ln(1 + y)` with a non-negativity check.
pub fn log_targets(y: &[f64]) -> Result<DVector<f64>> {
    if let Some(v) = y.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::invalid(format!("target {v} must be a non-negative number")));
    }
    Ok(DVector::from_iterator(y.len(), y.iter().map(|v| v.ln_1p())))
}

fn residuals(x: &DMatrix<f64>, theta: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
    z - x * theta
}

fn scores_at(
    x: &DMatrix<f64>,
    z: &DVector<f64>,
    dec: &Decomposition,
    lambda: f64,
) -> SystemScores {
    let n = x.nrows();
    let theta = dec.solve(z, lambda);
    let r = residuals(x, &theta, z);
    let rss = r.norm_squared();
    let h = dec.leverages(lambda);
    let trace_h: f64 = h.iter().sum();

    let mut sum = 0.0;
    let mut used = 0usize;
    for (ri, hi) in r.iter().zip(&h) {
        if *hi > 1.0 - LEVERAGE_CUTOFF {
            continue;
        }
        sum += (ri / (1.0 - hi)).powi(2);
        used += 1;
    }
    let loocv = LoocvScore {
        rmse: if used > 0 { (sum / used as f64).sqrt() } else { f64::NAN },
        excluded: n - used,
    };
    let ratio = trace_h / n as f64;
    let gcv = (ratio < 1.0).then(|| (rss / n as f64).sqrt() / (1.0 - ratio));
    SystemScores {
        fit: RegressionFit {
            coefficients: theta.iter().copied().collect(),
            lambda,
            rss,
            rank: dec.rank(),
            n,
        },
        rmse: (rss / n as f64).sqrt(),
        loocv,
        gcv,
        trace_h,
    }
}

/// Scores one design against raw targets at every `lambda`, sharing a
/// single decomposition.
pub fn score_path(x: &DMatrix<f64>, y: &[f64], lambdas: &[f64]) -> Result<Vec<SystemScores>> {
    Ok(score_paths(x, &[y], lambdas)?.remove(0))
}

/// [`score_path`] for several target vectors over the same design;
/// `out[target][lambda]`.
pub fn score_paths(
    x: &DMatrix<f64>,
    ys: &[&[f64]],
    lambdas: &[f64],
) -> Result<Vec<Vec<SystemScores>>> {
    for y in ys {
        check_system(x, y)?;
    }
    for &l in lambdas {
        check_lambda(l)?;
    }
    let zs = ys.iter().map(|y| log_targets(y)).collect::<Result<Vec<_>>>()?;
    let dec = Decomposition::new(x)?;
    Ok(zs
        .iter()
        .map(|z| lambdas.iter().map(|&l| scores_at(x, z, &dec, l)).collect())
        .collect())
}

/// Fits `ln(1 + y) ~ X theta` with ridge penalty `lambda`.
pub fn fit(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> Result<RegressionFit> {
    Ok(score_path(x, y, &[lambda])?.remove(0).fit)
}

/// Minimizes the squared relative error `||(X theta - y) / y||^2` on raw
/// features and targets.
pub fn fit_relative(x_raw: &DMatrix<f64>, y: &[f64]) -> Result<RegressionFit> {
    check_system(x_raw, y)?;
    if let Some(v) = y.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::invalid(format!(
            "relative-error fit needs positive targets, found {v}"
        )));
    }
    let weighted = DMatrix::from_fn(x_raw.nrows(), x_raw.ncols(), |i, j| x_raw[(i, j)] / y[i]);
    let ones = DVector::from_element(y.len(), 1.0);
    let dec = Decomposition::new(&weighted)?;
    let theta = dec.solve(&ones, 0.0);
    let rss = residuals(&weighted, &theta, &ones).norm_squared();
    Ok(RegressionFit {
        coefficients: theta.iter().copied().collect(),
        lambda: 0.0,
        rss,
        rank: dec.rank(),
        n: y.len(),
    })
}

/// Exact leave-one-out RMSE in log space via `r_i / (1 - h_ii)`.
pub fn loocv_rmse(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> Result<LoocvScore> {
    Ok(score_path(x, y, &[lambda])?.remove(0).loocv)
}

/// Generalized cross-validation RMSE: leverages replaced by `trace(H) / n`.
pub fn gcv_rmse(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> Result<f64> {
    let s = score_path(x, y, &[lambda])?.remove(0);
    s.gcv.ok_or_else(|| {
        Error::numerical(format!(
            "GCV undefined: trace(H) = {} with n = {}",
            s.trace_h,
            x.nrows()
        ))
    })
}

/// Gaussian AIC and BIC with the noise variance counted as a parameter.
/// `rss = 0` yields `-inf` for both.
pub fn information_criteria(rss: f64, n: usize, p: usize) -> (f64, f64) {
    if rss <= 0.0 || n == 0 {
        return (f64::NEG_INFINITY, f64::NEG_INFINITY);
    }
    let nf = n as f64;
    let k = (p + 1) as f64;
    let base = nf * (rss / nf).ln();
    (base + 2.0 * k, base + k * nf.ln())
}

/// Log-space and raw predictions for new rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub log: Vec<f64>,
    pub raw: Vec<f64>,
}

pub fn predict(fit: &RegressionFit, x_new: &DMatrix<f64>) -> Result<Prediction> {
    if x_new.ncols() != fit.coefficients.len() {
        return Err(Error::LengthMismatch {
            expected: fit.coefficients.len(),
            found: x_new.ncols(),
        });
    }
    let theta = DVector::from_column_slice(&fit.coefficients);
    let log: Vec<f64> = (x_new * theta).iter().copied().collect();
    let raw = log.iter().map(|l| l.exp_m1().max(0.0)).collect();
    Ok(Prediction { log, raw })
}
