//! Data-parallel distance metric learning: each worker samples minibatches
//! from its own pairs and adds `-step * grad / C` to the shared factor `L`.

use std::sync::Arc;

use mlps_core::dml::{accumulate_gradient, dml_objective, step_size, DmlProblem, Metric, Pair};
use mlps_core::{Clock, ScheduleDecision, WorkerId};
use rand::Rng;

use crate::runtime::{App, Parallelism, PushContext, RunError};
use crate::table::{ModelSnapshot, TableSpec};

pub const L_TABLE: &str = "L";

/// Indices of the similar and dissimilar pairs a worker may sample.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DmlShard {
    pub similar: Vec<usize>,
    pub dissimilar: Vec<usize>,
}

/// Chooses `(similar, dissimilar)` problem-level pair indices for
/// `(worker, clock, chunk)`.
pub type SampleScript = Arc<dyn Fn(WorkerId, Clock, usize) -> (Vec<usize>, Vec<usize>) + Send + Sync>;

pub struct DmlApp {
    problem: Arc<DmlProblem>,
    shards: Vec<DmlShard>,
    batch: usize,
    chunks: usize,
    eta0: f64,
    script: Option<SampleScript>,
}

impl DmlApp {
    /// Deals pairs round-robin to `workers` shards.
    pub fn new(problem: DmlProblem, workers: usize, batch: usize, eta0: f64) -> Result<Self, RunError> {
        let mut shards = vec![DmlShard::default(); workers];
        for i in 0..problem.similar().len() {
            shards[i % workers].similar.push(i);
        }
        for i in 0..problem.dissimilar().len() {
            shards[i % workers].dissimilar.push(i);
        }
        Self::with_shards(problem, shards, batch, eta0)
    }

    pub fn with_shards(
        problem: DmlProblem,
        shards: Vec<DmlShard>,
        batch: usize,
        eta0: f64,
    ) -> Result<Self, RunError> {
        if batch == 0 {
            return Err(RunError::Config("minibatch size must be at least 1".into()));
        }
        if let Some(w) = shards
            .iter()
            .position(|s| s.similar.is_empty() || s.dissimilar.is_empty())
        {
            return Err(RunError::Config(format!("worker {w} has an empty pair shard")));
        }
        Ok(Self {
            problem: Arc::new(problem),
            shards,
            batch,
            chunks: 1,
            eta0,
            script: None,
        })
    }

    /// Each push processes `chunks` minibatches of `C` and sends their summed
    /// increments; one worker with `chunks = P` reproduces `P` workers.
    pub fn with_chunks(mut self, chunks: usize) -> Self {
        self.chunks = chunks.max(1);
        self
    }

    pub fn with_script(mut self, script: SampleScript) -> Self {
        self.script = Some(script);
        self
    }

    pub fn problem(&self) -> &DmlProblem {
        &self.problem
    }

    pub fn metric(&self, model: &ModelSnapshot) -> Metric {
        Metric::new(self.problem.rank(), self.problem.dim(), model.flat(L_TABLE))
            .expect("table matches metric shape")
    }

    fn sample<R: Rng + ?Sized>(&self, worker: WorkerId, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
        let shard = &self.shards[worker as usize];
        let pick = |pool: &[usize], rng: &mut R| -> Vec<usize> {
            (0..self.batch)
                .map(|_| pool[rng.gen_range(0..pool.len())])
                .collect()
        };
        let s = pick(&shard.similar, rng);
        let d = pick(&shard.dissimilar, rng);
        (s, d)
    }

    /// The additive update for one push, one entry per cell of `L`
    /// (row-major), accumulated chunk by chunk.
    pub fn increment<R: Rng + ?Sized>(
        &self,
        worker: WorkerId,
        clock: Clock,
        l: &Metric,
        rng: &mut R,
    ) -> Vec<f64> {
        let step = step_size(self.eta0, clock + 1);
        let mut total = vec![0.0; l.rank() * l.dim()];
        for chunk in 0..self.chunks {
            let (s, d) = match &self.script {
                Some(script) => script(worker, clock, chunk),
                None => self.sample(worker, rng),
            };
            let sim: Vec<&Pair> = s.iter().map(|&i| &self.problem.similar()[i]).collect();
            let dis: Vec<&Pair> = d.iter().map(|&i| &self.problem.dissimilar()[i]).collect();
            let mut grad = Metric::zeros(l.rank(), l.dim());
            accumulate_gradient(l, &sim, &dis, self.problem.lambda(), &mut grad);
            for (t, g) in total.iter_mut().zip(grad.as_slice()) {
                *t += -step * g / self.batch as f64;
            }
        }
        total
    }
}

impl App for DmlApp {
    fn parallelism(&self) -> Parallelism {
        Parallelism::Data
    }

    fn tables(&self) -> Vec<TableSpec> {
        let (rank, dim) = (self.problem.rank(), self.problem.dim());
        let init = Metric::identity(rank, dim).as_slice().to_vec();
        vec![TableSpec::zeros(L_TABLE, rank as u64, dim).with_init(init)]
    }

    fn model_size(&self) -> usize {
        self.problem.rank() * self.problem.dim()
    }

    fn push(
        &self,
        ctx: &mut PushContext<'_>,
        _decision: &ScheduleDecision,
    ) -> Result<Vec<f64>, RunError> {
        let (rank, dim) = (self.problem.rank(), self.problem.dim());
        let l = Metric::new(rank, dim, ctx.client.get_table(L_TABLE)?)
            .map_err(|e| RunError::App(e.to_string()))?;
        let inc = self.increment(ctx.worker, ctx.clock, &l, ctx.rng);
        let entries: Vec<(u64, u32, f64)> = inc
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(k, v)| ((k / dim) as u64, (k % dim) as u32, *v))
            .collect();
        ctx.client.inc(L_TABLE, &entries)?;
        Ok(Vec::new())
    }

    fn objective(&self, model: &ModelSnapshot) -> f64 {
        dml_objective(&self.metric(model), &self.problem)
    }
}
