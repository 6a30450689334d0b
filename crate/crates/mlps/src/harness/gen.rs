//! Synthetic Lasso and DML instances.

use mlps_core::dml::{DmlProblem, Pair};
use mlps_core::lasso::{DesignMatrix, LassoError, LassoProblem};
use mlps_core::schedule::{masked_spectral_radius, CorrelationIndex, PowerIterationOptions};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticLassoSpec {
    pub n: usize,
    pub d: usize,
    /// Planted nonzero coefficients.
    pub sparsity: usize,
    /// Consecutive columns sharing one latent factor.
    pub block_size: usize,
    /// Target correlation between two columns of a block.
    pub block_corr: f64,
    pub noise_sd: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for SyntheticLassoSpec {
    fn default() -> Self {
        Self {
            n: 1000,
            d: 500,
            sparsity: 50,
            block_size: 1,
            block_corr: 0.0,
            noise_sd: 0.1,
            lambda: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticLassoSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.n == 0 || self.d == 0 {
            return Err("n and d must be positive".into());
        }
        if self.sparsity > self.d {
            return Err(format!("sparsity {} exceeds d = {}", self.sparsity, self.d));
        }
        if self.block_size == 0 {
            return Err("block size must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.block_corr) {
            return Err(format!("block correlation {} outside [0, 1]", self.block_corr));
        }
        if !(self.noise_sd >= 0.0) || !(self.lambda > 0.0) {
            return Err("noise_sd must be nonnegative and lambda positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedLasso {
    pub problem: LassoProblem,
    /// Planted coefficients in the normalized column scale.
    pub beta_star: Vec<f64>,
}

impl GeneratedLasso {
    pub fn support(&self) -> Vec<usize> {
        support(&self.beta_star)
    }

    /// Masked spectral radius of the design at `theta`.
    pub fn rho(&self, theta: f64) -> Option<f64> {
        let x = self.problem.x();
        let corr = CorrelationIndex::from_columns(x.samples(), x.as_column_major().to_vec()).ok()?;
        masked_spectral_radius(&corr, theta, &PowerIterationOptions::default()).ok()
    }
}

pub fn support(beta: &[f64]) -> Vec<usize> {
    beta.iter()
        .enumerate()
        .filter(|(_, b)| **b != 0.0)
        .map(|(j, _)| j)
        .collect()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn center_and_normalize(x: &mut DesignMatrix) -> Result<(), LassoError> {
    let (n, d) = (x.samples(), x.features());
    let mut data = x.as_column_major().to_vec();
    for col in data.chunks_mut(n) {
        let mean = col.iter().sum::<f64>() / n as f64;
        col.iter_mut().for_each(|v| *v -= mean);
    }
    *x = DesignMatrix::from_columns(n, d, data)?;
    x.normalize_columns();
    Ok(())
}

/// Columns in a block are `sqrt(r) z + sqrt(1 - r) e_j` for a shared latent
/// `z`, then centered and scaled to unit norm; `r = 1` gives identical
/// columns. `y = X beta* + noise` with planted entries of magnitude in
/// `[1, 2)` and random sign.
pub fn gen_lasso(spec: &SyntheticLassoSpec) -> Result<GeneratedLasso, String> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, d) = (spec.n, spec.d);
    let (a, b) = (spec.block_corr.sqrt(), (1.0 - spec.block_corr).sqrt());
    let mut data = vec![0.0; n * d];
    let mut latent = vec![0.0; n];
    for j in 0..d {
        if j % spec.block_size == 0 {
            latent.iter_mut().for_each(|z| *z = normal(&mut rng));
        }
        for i in 0..n {
            let e = normal(&mut rng);
            data[j * n + i] = a * latent[i] + b * e;
        }
    }
    let mut x = DesignMatrix::from_columns(n, d, data).map_err(|e| e.to_string())?;
    center_and_normalize(&mut x).map_err(|e| e.to_string())?;

    let mut beta_star = vec![0.0; d];
    let mut chosen = sample(&mut rng, d, spec.sparsity).into_vec();
    chosen.sort_unstable();
    for j in chosen {
        let mag = rng.gen_range(1.0..2.0);
        beta_star[j] = if rng.gen::<bool>() { mag } else { -mag };
    }
    let mut y = vec![0.0; n];
    for (j, &bj) in beta_star.iter().enumerate() {
        if bj != 0.0 {
            for (yi, xij) in y.iter_mut().zip(x.column(j)) {
                *yi += bj * xij;
            }
        }
    }
    for yi in y.iter_mut() {
        *yi += spec.noise_sd * normal(&mut rng);
    }
    let problem = LassoProblem::new(x, y, spec.lambda).map_err(|e| e.to_string())?;
    Ok(GeneratedLasso { problem, beta_star })
}

/// Exactly orthonormal columns (Gram-Schmidt applied twice), with `y` drawn
/// independently. Needs `d <= n`.
pub fn gen_orthogonal(n: usize, d: usize, lambda: f64, seed: u64) -> Result<LassoProblem, String> {
    if d == 0 || d > n {
        return Err(format!("orthogonal design needs 0 < d <= n, got n = {n}, d = {d}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    for _ in 0..d {
        let mut v: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        for _ in 0..2 {
            for q in &cols {
                let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        cols.push(v);
    }
    let y: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    let x = DesignMatrix::from_columns(n, d, cols.concat()).map_err(|e| e.to_string())?;
    LassoProblem::new(x, y, lambda).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDmlSpec {
    pub dim: usize,
    pub rank: usize,
    /// Total pairs, split evenly between similar and dissimilar.
    pub pairs: usize,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for SyntheticDmlSpec {
    fn default() -> Self {
        Self {
            dim: 32,
            rank: 16,
            pairs: 5000,
            lambda: 1.0,
            seed: 0,
        }
    }
}

/// Points from a mixture of Gaussian classes: similar pairs share a class,
/// dissimilar pairs do not. Half of the dimensions carry class signal and the
/// rest are noise, so a good metric is far from the identity.
pub fn gen_dml(spec: &SyntheticDmlSpec) -> Result<DmlProblem, String> {
    if spec.pairs < 2 || spec.dim == 0 {
        return Err("need at least two pairs and a positive dimension".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let classes = 4;
    let informative = spec.dim.div_ceil(2);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            (0..spec.dim)
                .map(|k| if k < informative { 0.5 * normal(&mut rng) } else { 0.0 })
                .collect()
        })
        .collect();
    let point = |c: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..spec.dim)
            .map(|k| {
                let sd = if k < informative { 0.15 } else { 0.5 };
                centers[c][k] + sd * normal(rng)
            })
            .collect()
    };
    let n_sim = spec.pairs / 2;
    let n_dis = spec.pairs - n_sim;
    let mut similar = Vec::with_capacity(n_sim);
    for _ in 0..n_sim {
        let c = rng.gen_range(0..classes);
        similar.push(Pair {
            a: point(c, &mut rng),
            b: point(c, &mut rng),
        });
    }
    let mut dissimilar = Vec::with_capacity(n_dis);
    for _ in 0..n_dis {
        let c = rng.gen_range(0..classes);
        let o = (c + rng.gen_range(1..classes)) % classes;
        dissimilar.push(Pair {
            a: point(c, &mut rng),
            b: point(o, &mut rng),
        });
    }
    DmlProblem::new(spec.dim, spec.rank, similar, dissimilar, spec.lambda).map_err(|e| e.to_string())
}
