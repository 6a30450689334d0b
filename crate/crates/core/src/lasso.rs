//! Scheduled coordinate-descent Lasso: the soft-threshold update, the
//! per-shard partial sums each worker contributes, and objective bookkeeping.
//!
//! The problem is `min_b 1/2 ||y - X b||^2 + lambda ||b||_1` with unit-norm
//! columns and no intercept. For coordinate `j` the minimizer given the other
//! coefficients is `S(x_j'y - sum_{k != j} x_j'x_k b_k, lambda)`. Rows of `X`
//! are split across workers, so that argument is the sum of per-shard
//! partials.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

/// Column norms must be within this distance of one.
pub const UNIT_NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LassoError {
    #[error("{what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("column {column} has norm {norm}, expected 1")]
    NotNormalized { column: usize, norm: f64 },
    #[error("coefficient index {index} out of range for {d} features")]
    IndexOutOfRange { index: usize, d: usize },
    #[error("row range {start}..{end} out of range for {n} samples")]
    RowsOutOfRange { start: usize, end: usize, n: usize },
    #[error("lambda must be finite and non-negative, got {0}")]
    InvalidLambda(f64),
}

/// Dense `n x d` matrix stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl DesignMatrix {
    pub fn from_columns(n: usize, d: usize, data: Vec<f64>) -> Result<Self, LassoError> {
        if data.len() != n * d {
            return Err(LassoError::DimensionMismatch {
                what: "matrix entries",
                expected: n * d,
                actual: data.len(),
            });
        }
        Ok(Self { n, d, data })
    }

    /// Builds from sample rows of equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LassoError> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        let mut data = vec![0.0; n * d];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(LassoError::DimensionMismatch {
                    what: "row length",
                    expected: d,
                    actual: row.len(),
                });
            }
            for (j, v) in row.iter().enumerate() {
                data[j * n + i] = *v;
            }
        }
        Ok(Self { n, d, data })
    }

    pub fn samples(&self) -> usize {
        self.n
    }

    pub fn features(&self) -> usize {
        self.d
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.n..(j + 1) * self.n]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.n + i]
    }

    pub fn as_column_major(&self) -> &[f64] {
        &self.data
    }

    /// Scales every nonzero column to unit 2-norm and returns the original
    /// norms.
    pub fn normalize_columns(&mut self) -> Vec<f64> {
        let n = self.n;
        self.data
            .chunks_exact_mut(n.max(1))
            .map(|col| {
                let norm = libm::sqrt(col.iter().map(|v| v * v).sum::<f64>());
                if norm > 0.0 {
                    col.iter_mut().for_each(|v| *v /= norm);
                }
                norm
            })
            .collect()
    }

    /// `[X, -X]`.
    pub fn with_negated_copy(&self) -> Self {
        let mut data = self.data.clone();
        data.extend(self.data.iter().map(|v| -v));
        Self {
            n: self.n,
            d: 2 * self.d,
            data,
        }
    }
}

/// `sign(v) * max(|v| - lambda, 0)`.
pub fn soft_threshold(v: f64, lambda: f64) -> f64 {
    if v > lambda {
        v - lambda
    } else if v < -lambda {
        v + lambda
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoProblem {
    x: DesignMatrix,
    y: Vec<f64>,
    lambda: f64,
    /// Coefficients constrained to `>= 0` (the duplicated-feature form).
    nonnegative: bool,
}

impl LassoProblem {
    pub fn new(x: DesignMatrix, y: Vec<f64>, lambda: f64) -> Result<Self, LassoError> {
        if y.len() != x.samples() {
            return Err(LassoError::DimensionMismatch {
                what: "response length",
                expected: x.samples(),
                actual: y.len(),
            });
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(LassoError::InvalidLambda(lambda));
        }
        for j in 0..x.features() {
            let norm = libm::sqrt(x.column(j).iter().map(|v| v * v).sum::<f64>());
            if libm::fabs(norm - 1.0) > UNIT_NORM_TOL {
                return Err(LassoError::NotNormalized { column: j, norm });
            }
        }
        Ok(Self {
            x,
            y,
            lambda,
            nonnegative: false,
        })
    }

    /// The equivalent problem over `[X, -X]` with non-negative coefficients
    /// and a linear penalty.
    pub fn duplicated(&self) -> Self {
        Self {
            x: self.x.with_negated_copy(),
            y: self.y.clone(),
            lambda: self.lambda,
            nonnegative: true,
        }
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self, LassoError> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(LassoError::InvalidLambda(lambda));
        }
        Ok(Self {
            lambda,
            ..self.clone()
        })
    }

    pub fn x(&self) -> &DesignMatrix {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn is_nonnegative(&self) -> bool {
        self.nonnegative
    }

    pub fn samples(&self) -> usize {
        self.x.samples()
    }

    pub fn features(&self) -> usize {
        self.x.features()
    }

    /// The coordinate update applied to a full argument `v`.
    pub fn threshold(&self, v: f64) -> f64 {
        if self.nonnegative {
            (v - self.lambda).max(0.0)
        } else {
            soft_threshold(v, self.lambda)
        }
    }

    fn penalty(&self, beta: &[f64]) -> f64 {
        if self.nonnegative {
            self.lambda * beta.iter().sum::<f64>()
        } else {
            self.lambda * beta.iter().map(|b| libm::fabs(*b)).sum::<f64>()
        }
    }

    fn check_beta(&self, beta: &[f64]) -> Result<(), LassoError> {
        if beta.len() != self.features() {
            return Err(LassoError::DimensionMismatch {
                what: "coefficient length",
                expected: self.features(),
                actual: beta.len(),
            });
        }
        Ok(())
    }
}

/// Splits `0..n` into `parts` contiguous ranges whose sizes differ by at
/// most one.
pub fn shard_rows(n: usize, parts: usize) -> Vec<Range<usize>> {
    (0..parts)
        .map(|p| p * n / parts..(p + 1) * n / parts)
        .collect()
}

/// Worker contribution to the coordinate arguments of `indices`:
/// `z[j] = sum_{i in rows} x_ij (y_i - sum_{k != j} x_ik b_k)`.
///
/// The shard residual is formed once from the nonzero coefficients, then each
/// requested coordinate adds back its own term.
pub fn lasso_partial(
    problem: &LassoProblem,
    rows: Range<usize>,
    indices: &[usize],
    beta: &[f64],
) -> Result<Vec<f64>, LassoError> {
    problem.check_beta(beta)?;
    let n = problem.samples();
    let d = problem.features();
    if rows.start > rows.end || rows.end > n {
        return Err(LassoError::RowsOutOfRange {
            start: rows.start,
            end: rows.end,
            n,
        });
    }
    if let Some(&index) = indices.iter().find(|&&j| j >= d) {
        return Err(LassoError::IndexOutOfRange { index, d });
    }
    let x = problem.x();
    let mut residual: Vec<f64> = problem.y()[rows.clone()].to_vec();
    for (k, &b) in beta.iter().enumerate() {
        if b != 0.0 {
            for (r, xk) in residual.iter_mut().zip(&x.column(k)[rows.clone()]) {
                *r -= xk * b;
            }
        }
    }
    Ok(indices
        .iter()
        .map(|&j| {
            let col = &x.column(j)[rows.clone()];
            let xr: f64 = col.iter().zip(&residual).map(|(a, r)| a * r).sum();
            if beta[j] == 0.0 {
                xr
            } else {
                let xx: f64 = col.iter().map(|a| a * a).sum();
                xr + beta[j] * xx
            }
        })
        .collect())
}

/// Aggregates one coordinate's partials (in worker order) and thresholds.
pub fn sum_threshold<I: IntoIterator<Item = f64>>(problem: &LassoProblem, partials: I) -> f64 {
    let total: f64 = partials.into_iter().sum();
    problem.threshold(total)
}

/// `1/2 ||y - X b||^2 + penalty(b)`, evaluated from scratch.
pub fn lasso_objective(problem: &LassoProblem, beta: &[f64]) -> Result<f64, LassoError> {
    problem.check_beta(beta)?;
    let residual = residual(problem, beta);
    let loss: f64 = residual.iter().map(|r| r * r).sum::<f64>() * 0.5;
    Ok(loss + problem.penalty(beta))
}

fn residual(problem: &LassoProblem, beta: &[f64]) -> Vec<f64> {
    let mut r = problem.y().to_vec();
    for (k, &b) in beta.iter().enumerate() {
        if b != 0.0 {
            for (ri, xk) in r.iter_mut().zip(problem.x().column(k)) {
                *ri -= xk * b;
            }
        }
    }
    r
}

/// Full coordinate argument `x_j'y - sum_{k != j} x_j'x_k b_k`.
pub fn coordinate_argument(
    problem: &LassoProblem,
    beta: &[f64],
    j: usize,
) -> Result<f64, LassoError> {
    Ok(lasso_partial(problem, 0..problem.samples(), &[j], beta)?[0])
}

/// Largest `|b_j - S(argument_j)|` over all coordinates; zero at a Lasso
/// solution.
pub fn fixed_point_violation(problem: &LassoProblem, beta: &[f64]) -> Result<f64, LassoError> {
    let all: Vec<usize> = (0..problem.features()).collect();
    let args = lasso_partial(problem, 0..problem.samples(), &all, beta)?;
    Ok(args
        .iter()
        .zip(beta)
        .map(|(&a, &b)| libm::fabs(b - problem.threshold(a)))
        .fold(0.0, f64::max))
}

/// Coefficients with an incrementally maintained residual and objective.
#[derive(Debug, Clone)]
pub struct LassoState {
    beta: Vec<f64>,
    residual: Vec<f64>,
    half_rss: f64,
    penalty: f64,
}

impl LassoState {
    pub fn new(problem: &LassoProblem, beta: Vec<f64>) -> Result<Self, LassoError> {
        problem.check_beta(&beta)?;
        let residual = residual(problem, &beta);
        let half_rss = 0.5 * residual.iter().map(|r| r * r).sum::<f64>();
        let penalty = problem.penalty(&beta);
        Ok(Self {
            beta,
            residual,
            half_rss,
            penalty,
        })
    }

    pub fn zeros(problem: &LassoProblem) -> Self {
        Self::new(problem, vec![0.0; problem.features()]).expect("length matches")
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn residual(&self) -> &[f64] {
        &self.residual
    }

    pub fn objective(&self) -> f64 {
        self.half_rss + self.penalty
    }

    /// Sets `b_j = value`, updating residual and objective in `O(n)`.
    pub fn set(&mut self, problem: &LassoProblem, j: usize, value: f64) {
        let old = self.beta[j];
        let delta = value - old;
        if delta == 0.0 {
            return;
        }
        let col = problem.x().column(j);
        let xr: f64 = col.iter().zip(&self.residual).map(|(a, r)| a * r).sum();
        let xx: f64 = col.iter().map(|a| a * a).sum();
        self.half_rss += -delta * xr + 0.5 * delta * delta * xx;
        for (r, a) in self.residual.iter_mut().zip(col) {
            *r -= delta * a;
        }
        let abs = |v: f64| if problem.nonnegative { v } else { libm::fabs(v) };
        self.penalty += problem.lambda * (abs(value) - abs(old));
        self.beta[j] = value;
    }

    /// Exact coordinate minimizer for `j` given the current residual.
    pub fn coordinate_update(&self, problem: &LassoProblem, j: usize) -> f64 {
        let col = problem.x().column(j);
        let xr: f64 = col.iter().zip(&self.residual).map(|(a, r)| a * r).sum();
        problem.threshold(xr + self.beta[j])
    }
}

/// Sequential cyclic coordinate descent from zero until a full sweep changes
/// the objective by less than `rel_tol` (relative) or `max_sweeps` is hit.
/// Returns the final state.
pub fn cyclic_coordinate_descent(
    problem: &LassoProblem,
    max_sweeps: usize,
    rel_tol: f64,
) -> LassoState {
    let mut state = LassoState::zeros(problem);
    for _ in 0..max_sweeps {
        let before = state.objective();
        for j in 0..problem.features() {
            let v = state.coordinate_update(problem, j);
            state.set(problem, j, v);
        }
        let after = state.objective();
        if libm::fabs(before - after) <= rel_tol * libm::fabs(after).max(f64::MIN_POSITIVE) {
            break;
        }
    }
    state
}
