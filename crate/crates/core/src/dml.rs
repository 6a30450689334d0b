//! Distance metric learning over a factor `L` (`rank x dim`, row-major) of
//! the Mahalanobis matrix `M = L'L`.
//!
//! Objective over similar pairs `S` and dissimilar pairs `D`:
//! `sum_S ||L(x - y)||^2 + lambda * sum_D max(0, 1 - ||L(a - b)||^2)`.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DmlError {
    #[error("{what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("lambda must be finite and positive, got {0}")]
    InvalidLambda(f64),
    #[error("rank must be in 1..={dim}, got {rank}")]
    InvalidRank { rank: usize, dim: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("non-finite value in pair {0}")]
    NonFinite(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl Pair {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Self {
        Self { a, b }
    }

    pub fn diff(&self) -> Vec<f64> {
        self.a.iter().zip(&self.b).map(|(x, y)| x - y).collect()
    }
}

/// The factor `L`, `rank x dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Metric {
    rank: usize,
    dim: usize,
    data: Vec<f64>,
}

impl Metric {
    pub fn new(rank: usize, dim: usize, data: Vec<f64>) -> Result<Self, DmlError> {
        if data.len() != rank * dim {
            return Err(DmlError::DimensionMismatch {
                what: "metric entries",
                expected: rank * dim,
                actual: data.len(),
            });
        }
        Ok(Self { rank, dim, data })
    }

    pub fn zeros(rank: usize, dim: usize) -> Self {
        Self {
            rank,
            dim,
            data: vec![0.0; rank * dim],
        }
    }

    /// Top `rank` rows of the `dim x dim` identity.
    pub fn identity(rank: usize, dim: usize) -> Self {
        let mut m = Self::zeros(rank, dim);
        for r in 0..rank.min(dim) {
            m.data[r * dim + r] = 1.0;
        }
        m
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            data: self.data.iter().map(|v| v * k).collect(),
            ..self.clone()
        }
    }

    /// `L v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.data
            .chunks_exact(self.dim.max(1))
            .take(self.rank)
            .map(|row| row.iter().zip(v).map(|(l, x)| l * x).sum())
            .collect()
    }

    /// `||L v||^2`.
    pub fn sq_norm(&self, v: &[f64]) -> f64 {
        self.apply(v).iter().map(|u| u * u).sum()
    }

    fn check_pair(&self, index: usize, pair: &Pair) -> Result<(), DmlError> {
        for side in [&pair.a, &pair.b] {
            if side.len() != self.dim {
                return Err(DmlError::DimensionMismatch {
                    what: "pair dimension",
                    expected: self.dim,
                    actual: side.len(),
                });
            }
        }
        if pair.a.iter().chain(&pair.b).any(|v| !v.is_finite()) {
            return Err(DmlError::NonFinite(index));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DmlProblem {
    dim: usize,
    rank: usize,
    similar: Vec<Pair>,
    dissimilar: Vec<Pair>,
    lambda: f64,
}

impl DmlProblem {
    pub fn new(
        dim: usize,
        rank: usize,
        similar: Vec<Pair>,
        dissimilar: Vec<Pair>,
        lambda: f64,
    ) -> Result<Self, DmlError> {
        if rank == 0 || rank > dim {
            return Err(DmlError::InvalidRank { rank, dim });
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(DmlError::InvalidLambda(lambda));
        }
        let probe = Metric::zeros(rank, dim);
        for (i, p) in similar.iter().chain(&dissimilar).enumerate() {
            probe.check_pair(i, p)?;
        }
        Ok(Self {
            dim,
            rank,
            similar,
            dissimilar,
            lambda,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn similar(&self) -> &[Pair] {
        &self.similar
    }

    pub fn dissimilar(&self) -> &[Pair] {
        &self.dissimilar
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Batch objective: similar terms plus `lambda` times active hinge terms.
pub fn dml_batch_objective(l: &Metric, similar: &[&Pair], dissimilar: &[&Pair], lambda: f64) -> f64 {
    let s: f64 = similar.iter().map(|p| l.sq_norm(&p.diff())).sum();
    let d: f64 = dissimilar
        .iter()
        .map(|p| (1.0 - l.sq_norm(&p.diff())).max(0.0))
        .sum();
    s + lambda * d
}

/// Objective over every pair of the problem.
pub fn dml_objective(l: &Metric, problem: &DmlProblem) -> f64 {
    let s: Vec<&Pair> = problem.similar.iter().collect();
    let d: Vec<&Pair> = problem.dissimilar.iter().collect();
    dml_batch_objective(l, &s, &d, problem.lambda)
}

/// Gradient of the batch objective with respect to `L`:
/// `sum_S 2 L u u' - lambda * sum_D 2 L v v' [||L v||^2 < 1]`.
///
/// Dissimilar pairs exactly on the hinge contribute nothing.
pub fn dml_gradient(
    l: &Metric,
    similar: &[&Pair],
    dissimilar: &[&Pair],
    lambda: f64,
) -> Result<Metric, DmlError> {
    if similar.is_empty() && dissimilar.is_empty() {
        return Err(DmlError::EmptyBatch);
    }
    for (i, p) in similar.iter().chain(dissimilar).enumerate() {
        l.check_pair(i, p)?;
    }
    let mut grad = Metric::zeros(l.rank, l.dim);
    accumulate_gradient(l, similar, dissimilar, lambda, &mut grad);
    Ok(grad)
}

/// Adds the batch gradient into `grad` in pair order. Inputs must already be
/// dimension-checked.
pub fn accumulate_gradient(
    l: &Metric,
    similar: &[&Pair],
    dissimilar: &[&Pair],
    lambda: f64,
    grad: &mut Metric,
) {
    let dim = l.dim;
    for p in similar {
        let u = p.diff();
        let lu = l.apply(&u);
        for (r, lr) in lu.iter().enumerate() {
            for (c, uc) in u.iter().enumerate() {
                grad.data[r * dim + c] += 2.0 * lr * uc;
            }
        }
    }
    for p in dissimilar {
        let v = p.diff();
        let lv = l.apply(&v);
        let norm: f64 = lv.iter().map(|x| x * x).sum();
        if norm < 1.0 {
            for (r, lr) in lv.iter().enumerate() {
                for (c, vc) in v.iter().enumerate() {
                    grad.data[r * dim + c] -= lambda * 2.0 * lr * vc;
                }
            }
        }
    }
}

/// `eta0 / sqrt(t)` for clock index `t >= 1`.
pub fn step_size(eta0: f64, t: u64) -> f64 {
    eta0 / libm::sqrt(t.max(1) as f64)
}

/// The additive update a worker sends: `-step * grad / c`.
pub fn descent_increment(grad: &Metric, step: f64, c: usize) -> Vec<f64> {
    let c = c.max(1) as f64;
    grad.data.iter().map(|g| -step * g / c).collect()
}
