//! Model-parallel scheduling: which parameter indices each worker updates in
//! a clock.
//!
//! Policies:
//! - [`schedule_fix`]: each worker cycles through its own fixed block.
//! - [`schedule_random`]: uniform random indices with no dependency check.
//! - [`schedule_srrp`]: propose `Q > P` candidates (uniformly or by
//!   priority), then greedily keep a pairwise weakly-correlated subset.
//! - [`schedule_ideal`]: the same proposal, keeping only exactly uncorrelated
//!   pairs. On an orthogonal design it coincides with SRRP.

mod correlation;
mod priority;
mod spectral;

pub use correlation::{CorrelationIndex, DEFAULT_CACHE_CAPACITY};
pub use priority::{draw_uniform, schedule_priority_draw, PriorityForm, PriorityState};
pub use spectral::{
    compute_epsilon, count_compatible_pairs, masked_correlation_matrix, masked_spectral_radius,
    spectral_radius_symmetric, PowerIterationOptions, SpectralError, EXACT_PAIR_COUNT_MAX_D,
    PAIR_SAMPLE_COUNT,
};

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use crate::consistency::{Clock, WorkerId};

/// Correlations at or below this magnitude count as zero for the ideal
/// schedule.
pub const ZERO_CORRELATION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScheduleError {
    #[error("need at least one worker")]
    NoWorkers,
    #[error("candidate count {candidates} must exceed worker count {workers}")]
    CandidatesNotAboveWorkers { candidates: usize, workers: usize },
    #[error("model size {d} is smaller than candidate count {candidates}")]
    TooFewParameters { d: usize, candidates: usize },
    #[error("theta {0} outside (0, 1]")]
    ThetaOutOfRange(f64),
    #[error("blocks do not partition 0..{d}")]
    NotAPartition { d: usize },
    #[error("column {0} has zero norm")]
    ZeroColumn(usize),
    #[error("expected {expected} values, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("priority weight {index} is {value}, must be finite and positive")]
    InvalidWeight { index: usize, value: f64 },
    #[error("eta must be positive, got {0}")]
    InvalidEta(f64),
}

/// Output of the scheduling function for one clock.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleDecision {
    pub clock: Clock,
    /// One entry per worker, ordered by worker id.
    pub assignments: Vec<(WorkerId, Vec<usize>)>,
    /// Data-parallel decisions carry no indices: every worker touches the
    /// whole model.
    pub whole_model: bool,
    /// Number of pull results reflected in the scheduler state this decision
    /// was computed from.
    pub priority_version: u64,
}

impl ScheduleDecision {
    pub fn whole_model(clock: Clock, workers: usize) -> Self {
        Self {
            clock,
            assignments: (0..workers as WorkerId).map(|w| (w, Vec::new())).collect(),
            whole_model: true,
            priority_version: 0,
        }
    }

    /// Spreads `indices` one per worker in order; surplus workers get nothing.
    pub fn one_per_worker(clock: Clock, workers: usize, indices: &[usize]) -> Self {
        let assignments = (0..workers)
            .map(|w| {
                let mine = indices.get(w).map(|&j| vec![j]).unwrap_or_default();
                (w as WorkerId, mine)
            })
            .collect();
        Self {
            clock,
            assignments,
            whole_model: false,
            priority_version: 0,
        }
    }

    /// Number of indices scheduled this clock.
    pub fn degree(&self) -> usize {
        self.assignments.iter().map(|(_, idx)| idx.len()).sum()
    }

    pub fn workers(&self) -> usize {
        self.assignments.len()
    }

    /// All scheduled indices in worker order.
    pub fn indices(&self) -> Vec<usize> {
        self.assignments
            .iter()
            .flat_map(|(_, idx)| idx.iter().copied())
            .collect()
    }

    pub fn assigned_to(&self, worker: WorkerId) -> &[usize] {
        self.assignments
            .iter()
            .find(|(w, _)| *w == worker)
            .map(|(_, idx)| idx.as_slice())
            .unwrap_or(&[])
    }

    /// Owner of index `j` in this decision.
    pub fn owner_of(&self, j: usize) -> Option<WorkerId> {
        self.assignments
            .iter()
            .find(|(_, idx)| idx.contains(&j))
            .map(|(w, _)| *w)
    }
}

/// A fixed partition of `0..d` into one block per worker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockMap {
    d: usize,
    blocks: Vec<Vec<usize>>,
}

impl BlockMap {
    pub fn new(d: usize, blocks: Vec<Vec<usize>>) -> Result<Self, ScheduleError> {
        if blocks.is_empty() {
            return Err(ScheduleError::NoWorkers);
        }
        let mut seen = vec![false; d];
        for &j in blocks.iter().flatten() {
            if j >= d || seen[j] {
                return Err(ScheduleError::NotAPartition { d });
            }
            seen[j] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(ScheduleError::NotAPartition { d });
        }
        Ok(Self { d, blocks })
    }

    /// Worker `p` owns the `p`-th contiguous slice of `0..d`; sizes differ by
    /// at most one.
    pub fn contiguous(d: usize, workers: usize) -> Result<Self, ScheduleError> {
        if workers == 0 {
            return Err(ScheduleError::NoWorkers);
        }
        let blocks = (0..workers)
            .map(|p| (p * d / workers..(p + 1) * d / workers).collect())
            .collect();
        Self::new(d, blocks)
    }

    pub fn workers(&self) -> usize {
        self.blocks.len()
    }

    pub fn model_size(&self) -> usize {
        self.d
    }

    pub fn block(&self, worker: usize) -> &[usize] {
        &self.blocks[worker]
    }

    /// Clocks needed for every worker to visit its whole block once.
    pub fn sweep_len(&self) -> usize {
        self.blocks.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// Worker `p` receives element `clock mod |block_p|` of its block.
pub fn schedule_fix(clock: Clock, blocks: &BlockMap) -> ScheduleDecision {
    let assignments = blocks
        .blocks
        .iter()
        .enumerate()
        .map(|(p, block)| {
            let mine = if block.is_empty() {
                Vec::new()
            } else {
                vec![block[(clock % block.len() as u64) as usize]]
            };
            (p as WorkerId, mine)
        })
        .collect();
    ScheduleDecision {
        clock,
        assignments,
        whole_model: false,
        priority_version: 0,
    }
}

/// Shotgun-style schedule: `workers` distinct uniform indices, unchecked.
pub fn schedule_random<R: Rng + ?Sized>(
    clock: Clock,
    workers: usize,
    d: usize,
    rng: &mut R,
) -> Result<ScheduleDecision, ScheduleError> {
    if workers == 0 {
        return Err(ScheduleError::NoWorkers);
    }
    let picks = draw_uniform(d, workers.min(d), rng);
    Ok(ScheduleDecision::one_per_worker(clock, workers, &picks))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SrrpConfig {
    pub workers: usize,
    /// Candidates proposed per clock (`Q`).
    pub candidates: usize,
    pub theta: f64,
}

impl SrrpConfig {
    fn validate(&self, d: usize) -> Result<(), ScheduleError> {
        if self.workers == 0 {
            return Err(ScheduleError::NoWorkers);
        }
        if self.candidates <= self.workers {
            return Err(ScheduleError::CandidatesNotAboveWorkers {
                candidates: self.candidates,
                workers: self.workers,
            });
        }
        if d < self.candidates {
            return Err(ScheduleError::TooFewParameters {
                d,
                candidates: self.candidates,
            });
        }
        Ok(())
    }
}

/// Dependency-checked schedule. Draws `Q` candidates without replacement,
/// from `prio` when given and uniformly otherwise, then scans them in draw
/// order, keeping a candidate iff `|x_i . x_j| <= theta` against everything
/// already kept. Stops at `P` kept; fewer means reduced parallelism.
pub fn schedule_srrp<R: Rng + ?Sized>(
    clock: Clock,
    cfg: &SrrpConfig,
    corr: &mut CorrelationIndex,
    prio: Option<&PriorityState>,
    rng: &mut R,
) -> Result<ScheduleDecision, ScheduleError> {
    if !(cfg.theta > 0.0 && cfg.theta <= 1.0) {
        return Err(ScheduleError::ThetaOutOfRange(cfg.theta));
    }
    filtered_schedule(clock, cfg, corr, prio, rng, cfg.theta)
}

/// Zero-correlation oracle schedule: the SRRP proposal filtered with
/// [`ZERO_CORRELATION_TOL`] instead of `theta`.
pub fn schedule_ideal<R: Rng + ?Sized>(
    clock: Clock,
    cfg: &SrrpConfig,
    corr: &mut CorrelationIndex,
    prio: Option<&PriorityState>,
    rng: &mut R,
) -> Result<ScheduleDecision, ScheduleError> {
    filtered_schedule(clock, cfg, corr, prio, rng, ZERO_CORRELATION_TOL)
}

fn filtered_schedule<R: Rng + ?Sized>(
    clock: Clock,
    cfg: &SrrpConfig,
    corr: &mut CorrelationIndex,
    prio: Option<&PriorityState>,
    rng: &mut R,
    threshold: f64,
) -> Result<ScheduleDecision, ScheduleError> {
    let d = corr.dim();
    cfg.validate(d)?;
    let proposal = match prio {
        Some(p) => {
            if p.len() != d {
                return Err(ScheduleError::DimensionMismatch {
                    expected: d,
                    actual: p.len(),
                });
            }
            schedule_priority_draw(p, cfg.candidates, rng)
        }
        None => draw_uniform(d, cfg.candidates, rng),
    };
    let mut kept: Vec<usize> = Vec::with_capacity(cfg.workers);
    for j in proposal {
        if kept.len() == cfg.workers {
            break;
        }
        let compatible = kept
            .iter()
            .all(|&k| libm::fabs(corr.correlation(j, k)) <= threshold);
        if compatible {
            kept.push(j);
        }
    }
    Ok(ScheduleDecision::one_per_worker(clock, cfg.workers, &kept))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_columns(d: usize) -> CorrelationIndex {
        let mut cols = vec![0.0; d * d];
        for j in 0..d {
            cols[j * d + j] = 1.0;
        }
        CorrelationIndex::from_columns(d, cols).unwrap()
    }

    #[test]
    fn fixed_round_robin() {
        let blocks = BlockMap::new(4, vec![vec![0, 1], vec![2, 3]]).unwrap();
        let d0 = schedule_fix(0, &blocks);
        assert_eq!(d0.assignments, vec![(0, vec![0]), (1, vec![2])]);
        let d1 = schedule_fix(1, &blocks);
        assert_eq!(d1.assignments, vec![(0, vec![1]), (1, vec![3])]);
        let d2 = schedule_fix(2, &blocks);
        assert_eq!(d2.assignments, d0.assignments);
        assert_eq!(schedule_fix(7, &blocks), schedule_fix(7, &blocks.clone()));
    }

    #[test]
    fn fixed_empty_block_gets_nothing() {
        let blocks = BlockMap::new(2, vec![vec![0, 1], vec![]]).unwrap();
        let dec = schedule_fix(3, &blocks);
        assert_eq!(dec.assigned_to(1), &[] as &[usize]);
        assert_eq!(dec.degree(), 1);
    }

    #[test]
    fn block_map_rejects_non_partitions() {
        assert!(BlockMap::new(3, vec![vec![0, 1], vec![1, 2]]).is_err());
        assert!(BlockMap::new(3, vec![vec![0], vec![2]]).is_err());
        assert!(BlockMap::new(3, vec![vec![0, 1, 5]]).is_err());
        let c = BlockMap::contiguous(10, 3).unwrap();
        assert_eq!(c.block(0), &[0, 1, 2]);
        assert_eq!(c.block(2), &[6, 7, 8, 9]);
        assert_eq!(c.sweep_len(), 4);
    }

    #[test]
    fn srrp_orthogonal_design_reaches_full_degree() {
        let mut corr = identity_columns(12);
        let cfg = SrrpConfig {
            workers: 4,
            candidates: 8,
            theta: 0.01,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for clock in 0..20 {
            let dec = schedule_srrp(clock, &cfg, &mut corr, None, &mut rng).unwrap();
            assert_eq!(dec.degree(), 4);
        }
    }

    #[test]
    fn srrp_never_keeps_both_duplicates() {
        // columns 1 and 2 are identical, the rest orthogonal
        let d = 6;
        let mut cols = vec![0.0; d * d];
        for j in 0..d {
            let axis = if j == 2 { 1 } else { j };
            cols[j * d + axis] = 1.0;
        }
        let mut corr = CorrelationIndex::from_columns(d, cols).unwrap();
        let cfg = SrrpConfig {
            workers: 5,
            candidates: 6,
            theta: 0.5,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for clock in 0..200 {
            let idx = schedule_srrp(clock, &cfg, &mut corr, None, &mut rng)
                .unwrap()
                .indices();
            assert!(!(idx.contains(&1) && idx.contains(&2)), "{idx:?}");
            assert_eq!(idx.len(), 5);
        }
    }

    #[test]
    fn srrp_evaluation_budget() {
        let mut corr = identity_columns(30);
        let cfg = SrrpConfig {
            workers: 3,
            candidates: 7,
            theta: 0.3,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let before = corr.checks();
        schedule_srrp(0, &cfg, &mut corr, None, &mut rng).unwrap();
        assert!(corr.checks() - before <= (7 * 6 / 2) as u64);
    }

    #[test]
    fn srrp_validates_inputs() {
        let mut corr = identity_columns(4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bad_q = SrrpConfig {
            workers: 2,
            candidates: 2,
            theta: 0.5,
        };
        assert!(matches!(
            schedule_srrp(0, &bad_q, &mut corr, None, &mut rng),
            Err(ScheduleError::CandidatesNotAboveWorkers { .. })
        ));
        let too_many = SrrpConfig {
            workers: 2,
            candidates: 5,
            theta: 0.5,
        };
        assert!(matches!(
            schedule_srrp(0, &too_many, &mut corr, None, &mut rng),
            Err(ScheduleError::TooFewParameters { d: 4, candidates: 5 })
        ));
        let bad_theta = SrrpConfig {
            workers: 1,
            candidates: 2,
            theta: 0.0,
        };
        assert!(matches!(
            schedule_srrp(0, &bad_theta, &mut corr, None, &mut rng),
            Err(ScheduleError::ThetaOutOfRange(_))
        ));
    }

    #[test]
    fn random_schedule_is_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for clock in 0..50 {
            let mut idx = schedule_random(clock, 8, 20, &mut rng).unwrap().indices();
            idx.sort_unstable();
            idx.dedup();
            assert_eq!(idx.len(), 8);
        }
        // fewer parameters than workers: every parameter once
        let dec = schedule_random(0, 5, 3, &mut rng).unwrap();
        assert_eq!(dec.degree(), 3);
    }

    #[test]
    fn decision_helpers() {
        let dec = ScheduleDecision::one_per_worker(4, 3, &[7, 2]);
        assert_eq!(dec.indices(), vec![7, 2]);
        assert_eq!(dec.owner_of(2), Some(1));
        assert_eq!(dec.owner_of(3), None);
        assert_eq!(dec.assigned_to(2), &[] as &[usize]);
        let whole = ScheduleDecision::whole_model(1, 3);
        assert!(whole.whole_model);
        assert_eq!(whole.degree(), 0);
    }
}
