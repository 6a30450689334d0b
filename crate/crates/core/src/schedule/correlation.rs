use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::ScheduleError;

/// Default bound on cached pair correlations.
pub const DEFAULT_CACHE_CAPACITY: usize = 10_000_000;

/// Unit-normalized feature columns with a bounded cache of pairwise dot
/// products.
#[derive(Debug, Clone)]
pub struct CorrelationIndex {
    n: usize,
    d: usize,
    /// Column-major: column `j` is `columns[j * n..(j + 1) * n]`.
    columns: Vec<f64>,
    cache: PairCache,
    checks: u64,
}

impl CorrelationIndex {
    /// Builds the index from `d` columns of length `n` stored column-major.
    /// Each column is scaled to unit 2-norm.
    pub fn from_columns(n: usize, columns: Vec<f64>) -> Result<Self, ScheduleError> {
        Self::with_capacity(n, columns, DEFAULT_CACHE_CAPACITY)
    }

    pub fn with_capacity(
        n: usize,
        mut columns: Vec<f64>,
        capacity: usize,
    ) -> Result<Self, ScheduleError> {
        if n == 0 || columns.len() % n != 0 {
            return Err(ScheduleError::DimensionMismatch {
                expected: n,
                actual: columns.len(),
            });
        }
        let d = columns.len() / n;
        for (j, col) in columns.chunks_exact_mut(n).enumerate() {
            let norm = libm::sqrt(col.iter().map(|v| v * v).sum::<f64>());
            if norm == 0.0 || !norm.is_finite() {
                return Err(ScheduleError::ZeroColumn(j));
            }
            if norm != 1.0 {
                col.iter_mut().for_each(|v| *v /= norm);
            }
        }
        Ok(Self {
            n,
            d,
            columns,
            cache: PairCache::new(capacity),
            checks: 0,
        })
    }

    /// Number of features.
    pub fn dim(&self) -> usize {
        self.d
    }

    /// Column length (samples).
    pub fn samples(&self) -> usize {
        self.n
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j * self.n..(j + 1) * self.n]
    }

    /// Dot product of two stored columns, bypassing the cache.
    pub fn dot(&self, i: usize, j: usize) -> f64 {
        self.column(i)
            .iter()
            .zip(self.column(j))
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Cached `x_i . x_j`.
    pub fn correlation(&mut self, i: usize, j: usize) -> f64 {
        self.checks += 1;
        let key = if i <= j { (i, j) } else { (j, i) };
        if let Some(v) = self.cache.get(key) {
            return v;
        }
        let v = self.dot(key.0, key.1);
        self.cache.insert(key, v);
        v
    }

    /// Correlation lookups performed so far, cached or not.
    pub fn checks(&self) -> u64 {
        self.checks
    }

    pub fn cached_pairs(&self) -> usize {
        self.cache.len()
    }
}

/// Least-recently-used map from index pairs to correlations.
#[derive(Debug, Clone)]
struct PairCache {
    capacity: usize,
    entries: BTreeMap<(usize, usize), (f64, u64)>,
    recency: BTreeMap<u64, (usize, usize)>,
    stamp: u64,
}

impl PairCache {
    fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: BTreeMap::new(),
            recency: BTreeMap::new(),
            stamp: 0,
        }
    }

    fn len(&self) -> usize {
        self.entries.len()
    }

    fn get(&mut self, key: (usize, usize)) -> Option<f64> {
        self.stamp += 1;
        let stamp = self.stamp;
        let (value, last) = self.entries.get_mut(&key)?;
        self.recency.remove(last);
        *last = stamp;
        self.recency.insert(stamp, key);
        Some(*value)
    }

    fn insert(&mut self, key: (usize, usize), value: f64) {
        if self.capacity == 0 {
            return;
        }
        self.stamp += 1;
        if let Some((_, old)) = self.entries.insert(key, (value, self.stamp)) {
            self.recency.remove(&old);
        }
        self.recency.insert(self.stamp, key);
        while self.entries.len() > self.capacity {
            match self.recency.pop_first() {
                Some((_, evicted)) => {
                    self.entries.remove(&evicted);
                }
                None => break,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn columns_are_normalized() {
        let idx = CorrelationIndex::from_columns(2, vec![3.0, 4.0, 0.0, 2.0]).unwrap();
        assert!((idx.column(0)[0] - 0.6).abs() < 1e-15);
        assert!((idx.column(0)[1] - 0.8).abs() < 1e-15);
        assert_eq!(idx.column(1), &[0.0, 1.0]);
        assert!((idx.dot(0, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_column_rejected() {
        assert_eq!(
            CorrelationIndex::from_columns(2, vec![1.0, 0.0, 0.0, 0.0]).unwrap_err(),
            ScheduleError::ZeroColumn(1)
        );
    }

    #[test]
    fn cache_is_symmetric_and_consistent() {
        let mut idx =
            CorrelationIndex::from_columns(3, vec![1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0])
                .unwrap();
        let a = idx.correlation(0, 1);
        let b = idx.correlation(1, 0);
        assert_eq!(a, b);
        assert_eq!(a, idx.dot(0, 1));
        assert_eq!(idx.cached_pairs(), 1);
        assert_eq!(idx.checks(), 2);
    }

    #[test]
    fn cache_evicts_least_recent() {
        let cols = vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0];
        let mut idx = CorrelationIndex::with_capacity(2, cols, 2).unwrap();
        idx.correlation(0, 1);
        idx.correlation(0, 2);
        idx.correlation(0, 1); // refresh (0,1)
        idx.correlation(0, 3); // evicts (0,2)
        assert_eq!(idx.cached_pairs(), 2);
        assert!(idx.cache.entries.contains_key(&(0, 1)));
        assert!(!idx.cache.entries.contains_key(&(0, 2)));
        assert_eq!(idx.correlation(2, 0), idx.dot(0, 2));
    }
}
