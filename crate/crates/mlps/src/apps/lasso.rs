//! Model-parallel Lasso: rows of `X` are split across workers, each worker
//! returns its shard's share of the coordinate arguments for the scheduled
//! indices, and the aggregator sums, soft-thresholds and writes the new
//! coefficients.

use std::ops::Range;
use std::sync::Arc;

use mlps_core::lasso::{lasso_objective, lasso_partial, shard_rows, sum_threshold, LassoProblem};
use mlps_core::schedule::CorrelationIndex;
use mlps_core::ScheduleDecision;

use crate::runtime::{App, ParamChange, Parallelism, PullContext, PushContext, RunError};
use crate::table::{ModelSnapshot, TableSpec};

pub const BETA_TABLE: &str = "beta";
/// Coefficients per table row.
pub const ROW_WIDTH: usize = 32;

pub struct LassoApp {
    problem: Arc<LassoProblem>,
    shards: Vec<Range<usize>>,
}

impl LassoApp {
    /// Splits samples into `workers` contiguous row ranges.
    pub fn new(problem: LassoProblem, workers: usize) -> Self {
        let shards = shard_rows(problem.samples(), workers);
        Self {
            problem: Arc::new(problem),
            shards,
        }
    }

    pub fn problem(&self) -> &LassoProblem {
        &self.problem
    }

    pub fn shard(&self, worker: usize) -> Range<usize> {
        self.shards[worker].clone()
    }

    fn rows(&self) -> u64 {
        self.problem.features().div_ceil(ROW_WIDTH) as u64
    }

    /// Coefficient vector stored in a model snapshot.
    pub fn beta(&self, model: &ModelSnapshot) -> Vec<f64> {
        let mut b = model.flat(BETA_TABLE);
        b.truncate(self.problem.features());
        b
    }

    fn read_beta(&self, client: &mut dyn crate::client::PsClient) -> Result<Vec<f64>, RunError> {
        let mut b = client.get_table(BETA_TABLE)?;
        b.truncate(self.problem.features());
        Ok(b)
    }
}

impl App for LassoApp {
    fn parallelism(&self) -> Parallelism {
        Parallelism::Model
    }

    fn tables(&self) -> Vec<TableSpec> {
        vec![TableSpec::zeros(BETA_TABLE, self.rows(), ROW_WIDTH)]
    }

    fn model_size(&self) -> usize {
        self.problem.features()
    }

    fn correlation_index(&self) -> Option<CorrelationIndex> {
        let x = self.problem.x();
        CorrelationIndex::from_columns(x.samples(), x.as_column_major().to_vec()).ok()
    }

    fn param_cell(&self, j: usize) -> Option<(String, u64, u32)> {
        Some((
            BETA_TABLE.to_string(),
            (j / ROW_WIDTH) as u64,
            (j % ROW_WIDTH) as u32,
        ))
    }

    fn push(
        &self,
        ctx: &mut PushContext<'_>,
        decision: &ScheduleDecision,
    ) -> Result<Vec<f64>, RunError> {
        let indices = decision.indices();
        if indices.is_empty() {
            return Ok(Vec::new());
        }
        let beta = self.read_beta(ctx.client)?;
        lasso_partial(
            &self.problem,
            self.shard(ctx.worker as usize),
            &indices,
            &beta,
        )
        .map_err(|e| RunError::App(e.to_string()))
    }

    fn pull(
        &self,
        ctx: &mut PullContext<'_>,
        decision: &ScheduleDecision,
        partials: &[Vec<f64>],
    ) -> Result<Vec<ParamChange>, RunError> {
        let indices = decision.indices();
        if indices.is_empty() {
            return Ok(Vec::new());
        }
        let beta = self.read_beta(ctx.client)?;
        let mut changes = Vec::with_capacity(indices.len());
        for (k, &j) in indices.iter().enumerate() {
            let new = sum_threshold(&self.problem, partials.iter().map(|z| z[k]));
            let (table, row, col) = self.param_cell(j).expect("every index has a cell");
            ctx.client.put(&table, row, col, new)?;
            changes.push(ParamChange {
                index: j,
                old: beta[j],
                new,
            });
        }
        Ok(changes)
    }

    fn objective(&self, model: &ModelSnapshot) -> f64 {
        lasso_objective(&self.problem, &self.beta(model)).unwrap_or(f64::NAN)
    }
}
