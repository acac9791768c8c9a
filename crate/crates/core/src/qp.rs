//! Simplex-constrained weighted least squares.
//!
//! Solves
//!
//! ```text
//!     minimize    (x1 - X0 w)' diag(v) (x1 - X0 w)
//!     subject to  w >= 0,  sum(w) = 1
//! ```
//!
//! With `g_j = sqrt(v) * (X0[:, j] - x1)` and `sum(w) = 1` the objective
//! equals `|| sum_j w_j g_j ||^2`, so the problem is the nearest point to the
//! origin in the convex hull of the `g_j`. That is solved exactly with
//! Wolfe's minimum-norm-point active-set method: iterates stay on the
//! simplex, the support is an affinely independent corral, and the method
//! terminates finitely with a sparse basic solution.

use nalgebra::{DMatrix, DVector, SVD};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative KKT tolerance used by the loose-feasibility mode.
pub const LOOSE_TOLERANCE: f64 = 0.05;

// Major-cycle stopping gap on the normalized problem.
const GAP_FLOOR: f64 = 1e-15;
// Affine-minimizer coefficients at or below this count as non-positive.
const POSITIVE_FLOOR: f64 = 1e-12;
// Corral members whose weight falls to this level are dropped.
const DROP_FLOOR: f64 = 1e-14;
const WEAK_ACTIVE: f64 = 1e-10;
const SINGULAR: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("predictor weights must be non-negative with at least one positive entry")]
    PredictorWeights,
    #[error("invalid simplex weights: {0}")]
    InvalidWeights(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QpOptions {
    /// Bound on the scaled KKT residual for `converged`.
    pub tol: f64,
    /// Cap on major plus minor cycles.
    pub max_iter: usize,
    /// Accept any iterate whose scaled KKT residual is within
    /// [`LOOSE_TOLERANCE`]. Iterates remain exactly feasible.
    pub loose: bool,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 500,
            loose: false,
        }
    }
}

impl QpOptions {
    fn effective_tol(&self) -> f64 {
        if self.loose {
            LOOSE_TOLERANCE.max(self.tol)
        } else {
            self.tol
        }
    }
}

/// Non-negative donor weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexWeights(Vec<f64>);

impl SimplexWeights {
    /// Accepts entries down to `-1e-12` (clipped to zero) and a sum within
    /// `1e-9` of one.
    pub fn new(mut w: Vec<f64>) -> Result<Self, QpError> {
        if w.is_empty() {
            return Err(QpError::InvalidWeights("empty".into()));
        }
        if w.iter().any(|x| !x.is_finite() || *x < -1e-12) {
            return Err(QpError::InvalidWeights(format!("negative or non-finite entry in {w:?}")));
        }
        w.iter_mut().for_each(|x| *x = x.max(0.0));
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(QpError::InvalidWeights(format!("entries sum to {sum}")));
        }
        Ok(Self(w))
    }

    /// All mass on donor `index` of `n`.
    pub fn vertex(index: usize, n: usize) -> Self {
        let mut w = vec![0.0; n];
        w[index] = 1.0;
        Self(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.0.iter()
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.0)
    }
}

impl TryFrom<Vec<f64>> for SimplexWeights {
    type Error = QpError;
    fn try_from(w: Vec<f64>) -> Result<Self, QpError> {
        Self::new(w)
    }
}

impl From<SimplexWeights> for Vec<f64> {
    fn from(w: SimplexWeights) -> Vec<f64> {
        w.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub weights: SimplexWeights,
    /// `(x1 - X0 w)' diag(v) (x1 - X0 w)` in the caller's units.
    pub objective: f64,
    /// KKT residual of the problem rescaled so the largest `|g_j|^2` is one.
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The reduced Hessian over weakly active donors is singular, so other
    /// weight vectors attain the same objective.
    pub non_unique_hint: bool,
}

pub fn solve_simplex_wls(
    x1: &[f64],
    x0: &DMatrix<f64>,
    v: &[f64],
    opts: &QpOptions,
) -> Result<QpSolution, QpError> {
    solve_simplex_wls_from(x1, x0, v, opts, None)
}

/// As [`solve_simplex_wls`], starting the active set from the support of
/// `start` (renormalized). An optimal start is returned unchanged, which
/// matters when the optimum is not unique.
pub fn solve_simplex_wls_from(
    x1: &[f64],
    x0: &DMatrix<f64>,
    v: &[f64],
    opts: &QpOptions,
    start: Option<&[f64]>,
) -> Result<QpSolution, QpError> {
    let k = x1.len();
    let n = x0.ncols();
    if k == 0 || n == 0 || x0.nrows() != k || v.len() != k {
        return Err(QpError::Dimension(format!(
            "x1 has {k} rows, X0 is {}x{n}, v has {}",
            x0.nrows(),
            v.len()
        )));
    }
    if x1.iter().any(|x| !x.is_finite()) {
        return Err(QpError::NonFinite("x1"));
    }
    if x0.iter().any(|x| !x.is_finite()) {
        return Err(QpError::NonFinite("X0"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(QpError::NonFinite("v"));
    }
    if v.iter().any(|x| *x < 0.0) || !v.iter().any(|x| *x > 0.0) {
        return Err(QpError::PredictorWeights);
    }
    let start = match start {
        Some(w) if w.len() != n => {
            return Err(QpError::Dimension(format!("start has {} entries for {n} donors", w.len())))
        }
        Some(w) if w.iter().all(|x| x.is_finite() && *x >= 0.0) && w.iter().any(|x| *x > 0.0) => Some(w),
        Some(_) => return Err(QpError::InvalidWeights("start must be non-negative with positive mass".into())),
        None => None,
    };

    let root_v: Vec<f64> = v.iter().map(|x| x.sqrt()).collect();
    let mut g = DMatrix::from_fn(k, n, |r, c| root_v[r] * (x0[(r, c)] - x1[r]));
    let scale = (0..n)
        .map(|c| g.column(c).norm_squared())
        .fold(0.0f64, f64::max);
    if scale == 0.0 {
        // every donor coincides with the treated unit in the weighted metric
        return Ok(QpSolution {
            weights: SimplexWeights::vertex(0, n),
            objective: 0.0,
            kkt_residual: 0.0,
            iterations: 0,
            converged: true,
            non_unique_hint: n > 1,
        });
    }
    g /= scale.sqrt();

    let tol = opts.effective_tol();
    let stop_gap = if opts.loose { 0.5 * tol } else { GAP_FLOOR };
    let warm_optimal = start.and_then(|w| {
        let total: f64 = w.iter().sum();
        let w: Vec<f64> = w.iter().map(|x| x / total).collect();
        let (residual, _, _) = kkt(&g, &DVector::from_column_slice(&w));
        (residual <= tol).then_some(w)
    });
    let run = match warm_optimal {
        Some(weights) => Run { weights, iterations: 0, capped: false },
        None => min_norm_point(&g, opts.max_iter, stop_gap, start),
    };

    let sum: f64 = run.weights.iter().sum();
    let w: Vec<f64> = run.weights.iter().map(|x| x.max(0.0) / sum).collect();
    let wv = DVector::from_column_slice(&w);
    let (kkt_residual, dots, xx) = kkt(&g, &wv);
    let non_unique_hint = reduced_hessian_singular(&g, &dots, xx);

    let fitted = x0 * &wv;
    let objective = (0..k)
        .map(|r| v[r] * (x1[r] - fitted[r]).powi(2))
        .sum::<f64>();

    Ok(QpSolution {
        weights: SimplexWeights(w),
        objective,
        kkt_residual,
        iterations: run.iterations,
        converged: !run.capped && kkt_residual <= tol,
        non_unique_hint,
    })
}

struct Run {
    weights: Vec<f64>,
    iterations: usize,
    capped: bool,
}

#[derive(Clone)]
struct Corral {
    members: Vec<usize>,
    lambda: Vec<f64>,
    point: DVector<f64>,
}

impl Corral {
    fn recompute_point(&mut self, g: &DMatrix<f64>) {
        let mut x = DVector::zeros(g.nrows());
        for (&m, &l) in self.members.iter().zip(&self.lambda) {
            x.axpy(l, &g.column(m), 1.0);
        }
        self.point = x;
    }
}

fn min_norm_point(g: &DMatrix<f64>, max_iter: usize, stop_gap: f64, start: Option<&[f64]>) -> Run {
    let n = g.ncols();
    let mut corral = match start {
        Some(w) => {
            let total: f64 = w.iter().sum();
            let members: Vec<usize> = (0..n).filter(|&j| w[j] > 0.0).collect();
            let lambda = members.iter().map(|&j| w[j] / total).collect();
            let mut c = Corral { members, lambda, point: DVector::zeros(g.nrows()) };
            c.recompute_point(g);
            c
        }
        None => {
            let nearest = (0..n)
                .map(|c| g.column(c).norm_squared())
                .enumerate()
                .fold((0, f64::INFINITY), |best, (i, d)| if d < best.1 { (i, d) } else { best })
                .0;
            Corral {
                members: vec![nearest],
                lambda: vec![1.0],
                point: g.column(nearest).into_owned(),
            }
        }
    };
    let mut iterations = 0;
    let mut capped = false;
    // a warm start is first moved to the affine minimizer of its support
    let mut settle = start.is_some();

    'major: loop {
        if iterations >= max_iter {
            capped = true;
            break;
        }
        iterations += 1;
        let xx = corral.point.norm_squared();
        let previous = corral.clone();
        let dots = g.tr_mul(&corral.point);
        let (entering, lowest) = dots
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |best, (i, &d)| if d < best.1 { (i, d) } else { best });
        if xx - lowest <= stop_gap {
            break;
        }
        if !settle {
            if corral.members.contains(&entering) {
                break;
            }
            corral.members.push(entering);
            corral.lambda.push(0.0);
        }
        loop {
            let alpha = affine_minimizer(g, &corral.members);
            if alpha.iter().all(|&a| a > POSITIVE_FLOOR) {
                corral.lambda = alpha;
                break;
            }
            if iterations >= max_iter {
                capped = true;
                corral = previous;
                break 'major;
            }
            iterations += 1;
            let mut theta = 1.0f64;
            let mut blocking = None;
            for (i, (&l, &a)) in corral.lambda.iter().zip(&alpha).enumerate() {
                if a <= POSITIVE_FLOOR && l - a > 0.0 {
                    let t = l / (l - a);
                    if t < theta || blocking.is_none() && t <= theta {
                        theta = t;
                        blocking = Some(i);
                    }
                }
            }
            for (l, a) in corral.lambda.iter_mut().zip(&alpha) {
                *l = theta * a + (1.0 - theta) * *l;
            }
            if let Some(b) = blocking {
                corral.lambda[b] = 0.0;
            }
            let mut i = 0;
            while i < corral.members.len() {
                if corral.lambda[i] <= DROP_FLOOR {
                    corral.members.remove(i);
                    corral.lambda.remove(i);
                } else {
                    i += 1;
                }
            }
            if corral.members.is_empty() {
                corral = previous;
                break 'major;
            }
            let total: f64 = corral.lambda.iter().sum();
            corral.lambda.iter_mut().for_each(|l| *l /= total);
        }
        corral.recompute_point(g);
        if settle {
            settle = false;
            if corral.point.norm_squared() > xx {
                corral = previous;
            }
            continue;
        }
        if corral.point.norm_squared() >= xx {
            // no numerical progress
            if corral.point.norm_squared() > xx {
                corral = previous;
            }
            break;
        }
    }

    let mut weights = vec![0.0; n];
    for (&m, &l) in corral.members.iter().zip(&corral.lambda) {
        weights[m] = l;
    }
    Run {
        weights,
        iterations,
        capped,
    }
}

/// Coefficients (summing to one) of the point of minimum norm in the affine
/// hull of the given columns.
fn affine_minimizer(g: &DMatrix<f64>, members: &[usize]) -> Vec<f64> {
    let m = members.len();
    if m == 1 {
        return vec![1.0];
    }
    let base = g.column(members[0]);
    let diffs = DMatrix::from_fn(g.nrows(), m - 1, |r, c| g[(r, members[c + 1])] - base[r]);
    let rhs = -base.into_owned();
    let svd = SVD::new(diffs, true, true);
    let cutoff = svd.singular_values.max() * 1e-12;
    let coef = svd
        .solve(&rhs, cutoff)
        .expect("SVD computed with both factors");
    let mut alpha = Vec::with_capacity(m);
    alpha.push(1.0 - coef.sum());
    alpha.extend(coef.iter().copied());
    alpha
}

fn kkt(g: &DMatrix<f64>, w: &DVector<f64>) -> (f64, DVector<f64>, f64) {
    let x = g * w;
    let xx = x.norm_squared();
    let dots = g.tr_mul(&x);
    let lowest = dots.min();
    let gap = (xx - lowest).max(0.0);
    let comp = w
        .iter()
        .zip(dots.iter())
        .filter(|(wi, _)| **wi > 0.0)
        .map(|(wi, d)| wi * (d - xx).abs())
        .fold(0.0f64, f64::max);
    let primal = (w.sum() - 1.0).abs() + (-w.min()).max(0.0);
    (2.0 * gap.max(comp) + primal, dots, xx)
}

fn reduced_hessian_singular(g: &DMatrix<f64>, dots: &DVector<f64>, xx: f64) -> bool {
    let active: Vec<usize> = (0..g.ncols())
        .filter(|&j| dots[j] - xx <= WEAK_ACTIVE)
        .collect();
    if active.len() <= 1 {
        return false;
    }
    if active.len() - 1 > g.nrows() {
        return true;
    }
    let base = g.column(active[0]);
    let diffs = DMatrix::from_fn(g.nrows(), active.len() - 1, |r, c| {
        g[(r, active[c + 1])] - base[r]
    });
    let smallest = SVD::new(diffs, false, false).singular_values.min();
    smallest * smallest <= SINGULAR
}
