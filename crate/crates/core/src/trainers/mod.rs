//! Training loops: non-private SGD, dense DP-SGD, lazy-noise DP-SGD (with or
//! without aggregated noise sampling) and EANA.
//!
//! All algorithms share the same gradient path (toy model forward, per-example
//! gradients, optional clipping, sum in example order) and differ only in
//! which rows receive noise and when. Updates are plain SGD,
//! `theta <- theta - lr * update`, which is what makes deferred noise
//! commute with the gradient updates.

mod model;

pub use model::ToyModel;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::batch::{MiniBatch, TrainingTrace};
use crate::error::{Error, Result};
use crate::grad::{clip_l2, RowRef, SparseGrad};
use crate::history::{compute_delays, HistoryTable, InputQueue};
use crate::instrument::{Event, Metrics, Stage};
use crate::noise::NoiseSource;
use crate::params::HyperParams;
use crate::scalar::Scalar;
use crate::table::EmbeddingTable;

/// Rows handled per work unit in dense passes.
const CHUNK_ROWS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Sgd,
    Dense,
    LazyDp { ans: bool },
    Eana,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Sgd => "sgd",
            Algorithm::Dense => "dense",
            Algorithm::LazyDp { ans: true } => "lazydp",
            Algorithm::LazyDp { ans: false } => "lazydp-noans",
            Algorithm::Eana => "eana",
        }
    }

    pub fn is_private(self) -> bool {
        !matches!(self, Algorithm::Sgd)
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sgd" => Ok(Algorithm::Sgd),
            "dense" => Ok(Algorithm::Dense),
            "lazydp" => Ok(Algorithm::LazyDp { ans: true }),
            "lazydp-noans" => Ok(Algorithm::LazyDp { ans: false }),
            "eana" => Ok(Algorithm::Eana),
            other => Err(format!(
                "unknown algorithm `{other}` (expected sgd|dense|lazydp|lazydp-noans|eana)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub algorithm: Algorithm,
    /// Flush all pending lazy noise after the last iteration.
    pub finalize: bool,
    /// Clip per-example gradients under plain SGD as well.
    pub clip_sgd: bool,
    /// Worker threads for row-parallel passes.
    pub threads: usize,
}

impl TrainOptions {
    pub fn new(algorithm: Algorithm) -> Self {
        TrainOptions {
            algorithm,
            finalize: true,
            clip_sgd: false,
            threads: 1,
        }
    }

    pub fn threads(mut self, threads: usize) -> Self {
        self.threads = threads;
        self
    }

    pub fn finalize(mut self, finalize: bool) -> Self {
        self.finalize = finalize;
        self
    }

    pub fn clip_sgd(mut self, clip: bool) -> Self {
        self.clip_sgd = clip;
        self
    }
}

/// Charges the wall time of a parallel section to stages in proportion to
/// the time workers spent in each.
fn attribute_section(metrics: &mut Metrics, wall: u64, worker_nanos: &[u64; 7]) {
    let busy: u64 = worker_nanos.iter().sum();
    if busy == 0 {
        return;
    }
    for (stage, &n) in Stage::ALL.iter().zip(worker_nanos) {
        let share = (wall as u128 * n as u128 / busy as u128) as u64;
        metrics.record(Event::Nanos(*stage), share);
    }
}

fn elapsed_nanos(since: Instant) -> u64 {
    since.elapsed().as_nanos() as u64
}

#[derive(Default)]
struct WorkerTally {
    metrics: Metrics,
    nanos: [u64; 7],
}

impl WorkerTally {
    fn combine(mut self, other: WorkerTally) -> WorkerTally {
        self.metrics.merge(&other.metrics);
        for (a, b) in self.nanos.iter_mut().zip(other.nanos) {
            *a += b;
        }
        self
    }

    fn charge(&mut self, stage: Stage, since: Instant) -> Instant {
        let now = Instant::now();
        self.nanos[stage as usize] += (now - since).as_nanos() as u64;
        now
    }
}

/// Training state for one run of one algorithm.
pub struct Trainer<T> {
    params: HyperParams,
    opts: TrainOptions,
    model: ToyModel<T>,
    history: Option<Vec<HistoryTable>>,
    iter: u64,
    finalized: bool,
    metrics: Metrics,
    pool: rayon::ThreadPool,
    variance: T,
    lr: T,
    batch: T,
    clip: T,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(params: HyperParams, model: ToyModel<T>, opts: TrainOptions) -> Result<Self> {
        params.validate()?;
        if model.dim() != params.dim {
            return Err(Error::ShapeMismatch(format!(
                "model dim {} != configured dim {}",
                model.dim(),
                params.dim
            )));
        }
        if let Some(t) = model
            .tables()
            .iter()
            .find(|t| t.rows() as u64 != params.rows_e)
        {
            return Err(Error::ShapeMismatch(format!(
                "table {} has {} rows, configured rows_e is {}",
                t.table_id(),
                t.rows(),
                params.rows_e
            )));
        }
        let history = matches!(opts.algorithm, Algorithm::LazyDp { .. }).then(|| {
            model
                .tables()
                .iter()
                .map(|t| HistoryTable::new(t.rows()))
                .collect()
        });
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.threads.max(1))
            .build()
            .map_err(|e| Error::param("threads", e.to_string()))?;
        let variance = T::from_f64_lossy(params.per_step_variance());
        let lr = T::from_f64_lossy(params.lr);
        let batch = T::from_usize(params.batch_b).expect("batch size fits in a float");
        let clip = T::from_f64_lossy(params.clip_c);
        Ok(Trainer {
            params,
            opts,
            model,
            history,
            iter: 0,
            finalized: false,
            metrics: Metrics::new(),
            pool,
            variance,
            lr,
            batch,
            clip,
        })
    }

    pub fn params(&self) -> &HyperParams {
        &self.params
    }

    pub fn options(&self) -> &TrainOptions {
        &self.opts
    }

    pub fn model(&self) -> &ToyModel<T> {
        &self.model
    }

    pub fn tables(&self) -> &[EmbeddingTable<T>] {
        self.model.tables()
    }

    /// Last completed iteration (0 before the first step).
    pub fn iteration(&self) -> u64 {
        self.iter
    }

    pub fn history(&self) -> Option<&[HistoryTable]> {
        self.history.as_deref()
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    pub fn into_parts(self) -> (ToyModel<T>, Metrics) {
        (self.model, self.metrics)
    }

    fn source(&self, table: usize) -> NoiseSource {
        NoiseSource::new(self.params.seed, self.model.tables()[table].table_id())
    }

    fn expect_algorithm(&self, actual: Algorithm) -> Result<()> {
        let matches = match (self.opts.algorithm, actual) {
            (Algorithm::LazyDp { .. }, Algorithm::LazyDp { .. }) => true,
            (a, b) => a == b,
        };
        if matches {
            Ok(())
        } else {
            Err(Error::WrongAlgorithm {
                expected: self.opts.algorithm.to_string(),
                actual: actual.name(),
            })
        }
    }

    fn begin_step(&mut self, batch: &MiniBatch) -> Result<u64> {
        if self.iter >= self.params.iters_n {
            return Err(Error::TrainingComplete {
                iters: self.params.iters_n,
            });
        }
        if batch.batch_size() != self.params.batch_b || batch.pooling() != self.params.pooling {
            return Err(Error::BadBatch(format!(
                "batch shape (B={}, pooling={}) does not match configured (B={}, pooling={})",
                batch.batch_size(),
                batch.pooling(),
                self.params.batch_b,
                self.params.pooling
            )));
        }
        self.model.check_batch(batch)?;
        let iter = self.iter + 1;
        self.metrics.begin_iteration(iter);
        Ok(iter)
    }

    fn end_step(&mut self, started: Instant) {
        self.iter += 1;
        self.metrics.end_iteration(elapsed_nanos(started));
    }

    /// Forward pass, per-example gradients, optional clipping, and the sum
    /// over examples in example order.
    fn batch_gradient(&mut self, batch: &MiniBatch, clip: bool) -> SparseGrad<T> {
        let dim = self.params.dim as u64;
        let tables = self.model.num_tables() as u64;
        let pooling = batch.pooling() as u64;
        let examples = batch.batch_size() as u64;

        let t0 = Instant::now();
        let residuals = self.model.residuals(batch);
        self.metrics
            .record(Event::RowsRead, examples * tables * pooling);
        self.metrics.record(
            Event::Axpy(Stage::Forward),
            examples * tables * (pooling + 1) * dim,
        );
        self.metrics
            .record(Event::Nanos(Stage::Forward), elapsed_nanos(t0));

        let t1 = Instant::now();
        let per_example = self.model.grads_from_residuals(batch, &residuals);
        self.metrics.record(
            Event::Axpy(Stage::Backward),
            examples * tables * pooling * dim,
        );
        let mut total = SparseGrad::new(self.params.dim);
        for g in per_example {
            let elements = (g.len() as u64) * dim;
            let g = if clip {
                self.metrics
                    .record(Event::Axpy(Stage::Backward), 2 * elements);
                clip_l2(g, self.clip)
            } else {
                g
            };
            self.metrics.record(Event::Axpy(Stage::Backward), elements);
            total.merge_add(&g);
        }
        self.metrics
            .record(Event::Nanos(Stage::Backward), elapsed_nanos(t1));
        total
    }

    /// `theta[row] -= lr * update[row]` for every row in `update`.
    fn apply_sparse(&mut self, update: &SparseGrad<T>) {
        let t0 = Instant::now();
        let lr = self.lr;
        let tables = self.model.tables_mut();
        for (key, u) in update.iter() {
            let row = tables[key.table as usize].row_mut(key.row as usize);
            for (theta, v) in row.iter_mut().zip(u) {
                *theta = *theta - lr * *v;
            }
        }
        let rows = update.len() as u64;
        self.metrics.record(Event::RowsRead, rows);
        self.metrics.record(Event::RowsWritten, rows);
        self.metrics.record(
            Event::Axpy(Stage::NoisyGradUpdate),
            rows * self.params.dim as u64,
        );
        self.metrics
            .record(Event::Nanos(Stage::NoisyGradUpdate), elapsed_nanos(t0));
    }

    /// Element-wise `grad / B`.
    fn average(&mut self, mut grad: SparseGrad<T>) -> SparseGrad<T> {
        let t0 = Instant::now();
        let b = self.batch;
        grad.map_values(|v| v / b);
        self.metrics.record(
            Event::Axpy(Stage::NoisyGradGen),
            grad.len() as u64 * self.params.dim as u64,
        );
        self.metrics
            .record(Event::Nanos(Stage::NoisyGradGen), elapsed_nanos(t0));
        grad
    }

    /// Non-private sparse SGD: only gathered rows change.
    pub fn sgd_step(&mut self, batch: &MiniBatch) -> Result<()> {
        self.expect_algorithm(Algorithm::Sgd)?;
        let started = Instant::now();
        self.begin_step(batch)?;
        let grad = self.batch_gradient(batch, self.opts.clip_sgd);
        let update = self.average(grad);
        self.apply_sparse(&update);
        self.end_step(started);
        Ok(())
    }

    /// Dense DP-SGD: every row of every table gets fresh noise and is
    /// rewritten, `theta -= lr * (clipped_grad_sum + noise) / B`.
    pub fn dense_dpsgd_step(&mut self, batch: &MiniBatch) -> Result<()> {
        self.expect_algorithm(Algorithm::Dense)?;
        let started = Instant::now();
        let iter = self.begin_step(batch)?;
        let grad = self.batch_gradient(batch, true);
        let (variance, lr, b) = (self.variance, self.lr, self.batch);
        for t in 0..self.model.num_tables() {
            let source = self.source(t);
            let rows: Vec<(u32, &[T])> = grad.table_rows(t as u32).collect();
            let section = Instant::now();
            let table = &mut self.model.tables_mut()[t];
            let dim = table.dim();
            let tally = self.pool.install(|| {
                table
                    .values_mut()
                    .par_chunks_mut(CHUNK_ROWS * dim)
                    .enumerate()
                    .map(|(ci, chunk)| {
                        dense_chunk(
                            chunk,
                            ci * CHUNK_ROWS,
                            dim,
                            &rows,
                            source,
                            iter,
                            variance,
                            lr,
                            b,
                        )
                    })
                    .reduce(WorkerTally::default, WorkerTally::combine)
            });
            self.metrics.merge(&tally.metrics);
            attribute_section(&mut self.metrics, elapsed_nanos(section), &tally.nanos);
        }
        self.end_step(started);
        Ok(())
    }

    /// One iteration of lazy noise DP-SGD.
    ///
    /// Rows gathered by `next` receive all noise they are owed up to and
    /// including this iteration, merged with this iteration's clipped
    /// gradient. `next` may be `None` only on the last iteration.
    pub fn lazydp_step(&mut self, cur: &MiniBatch, next: Option<&MiniBatch>) -> Result<()> {
        let Algorithm::LazyDp { ans } = self.opts.algorithm else {
            return Err(Error::WrongAlgorithm {
                expected: self.opts.algorithm.to_string(),
                actual: "lazydp",
            });
        };
        if next.is_none() && self.iter + 1 < self.params.iters_n {
            return Err(Error::MissingNextBatch {
                iter: self.iter + 1,
            });
        }
        if let Some(next) = next {
            self.model.check_batch(next)?;
        }
        let started = Instant::now();
        let iter = self.begin_step(cur)?;
        let grad = self.batch_gradient(cur, true);

        let t0 = Instant::now();
        let mut targets: Vec<Vec<(u32, u64)>> = Vec::new();
        if let Some(next) = next {
            let history = self
                .history
                .as_mut()
                .expect("lazy trainer keeps a HistoryTable");
            for (t, hist) in history.iter_mut().enumerate() {
                let rows = next.unique_rows(t);
                targets.push(compute_delays(hist, &rows, iter).map_err(|e| match e {
                    Error::IndexOutOfRange { index, rows, .. } => Error::IndexOutOfRange {
                        table: t,
                        index,
                        rows,
                    },
                    other => other,
                })?);
            }
        }
        self.metrics
            .record(Event::Nanos(Stage::LazydpOverhead), elapsed_nanos(t0));

        let t1 = Instant::now();
        let dim = self.params.dim;
        let variance = self.variance;
        let mut noise = SparseGrad::new(dim);
        let mut scalars = 0u64;
        for (t, delays) in targets.iter().enumerate() {
            let source = self.source(t);
            let sampled: Vec<(u32, Vec<T>, u64)> = self.pool.install(|| {
                delays
                    .par_iter()
                    .map(|&(row, delay)| {
                        let (values, count) =
                            pending_noise(source, u64::from(row), iter, delay, dim, variance, ans);
                        (row, values, count)
                    })
                    .collect()
            });
            for (row, values, count) in sampled {
                scalars += count;
                noise.insert(RowRef::new(t as u32, row), values);
            }
        }
        self.metrics.record(Event::NoiseScalars, scalars);
        self.metrics
            .record(Event::Nanos(Stage::NoiseSampling), elapsed_nanos(t1));

        let mut noisy = self.average(grad);
        let t2 = Instant::now();
        let b = self.batch;
        noise.map_values(|v| v / b);
        noisy.merge_add(&noise);
        self.metrics.record(
            Event::Axpy(Stage::NoisyGradGen),
            noise.len() as u64 * dim as u64,
        );
        self.metrics
            .record(Event::Nanos(Stage::NoisyGradGen), elapsed_nanos(t2));

        self.apply_sparse(&noisy);
        self.end_step(started);
        Ok(())
    }

    /// Applies every row's outstanding noise through the last iteration so
    /// the released tables carry all `iters_n` iterations of noise.
    pub fn finalize(&mut self) -> Result<()> {
        let Algorithm::LazyDp { ans } = self.opts.algorithm else {
            return Err(Error::WrongAlgorithm {
                expected: self.opts.algorithm.to_string(),
                actual: "lazydp",
            });
        };
        if self.finalized {
            return Err(Error::AlreadyFinalized);
        }
        if self.iter != self.params.iters_n {
            return Err(Error::FinalizeEarly {
                iter: self.iter,
                iters: self.params.iters_n,
            });
        }
        let all: Vec<Vec<u32>> = self
            .model
            .tables()
            .iter()
            .map(|t| (0..t.rows() as u32).collect())
            .collect();
        self.flush_rows(&all, ans)?;
        self.finalized = true;
        Ok(())
    }

    /// Applies outstanding noise through the current iteration to the listed
    /// rows of each table, leaving other rows pending. Used to check that the
    /// result does not depend on when deferred noise is materialized.
    pub fn flush_pending(&mut self, rows_per_table: &[Vec<u32>]) -> Result<()> {
        let Algorithm::LazyDp { ans } = self.opts.algorithm else {
            return Err(Error::WrongAlgorithm {
                expected: self.opts.algorithm.to_string(),
                actual: "lazydp",
            });
        };
        self.flush_rows(rows_per_table, ans)
    }

    fn flush_rows(&mut self, rows_per_table: &[Vec<u32>], ans: bool) -> Result<()> {
        if rows_per_table.len() != self.model.num_tables() {
            return Err(Error::ShapeMismatch(format!(
                "{} row lists for {} tables",
                rows_per_table.len(),
                self.model.num_tables()
            )));
        }
        let started = Instant::now();
        let before = self.metrics.stage_nanos_breakdown().total();
        let iter = self.iter;
        let (variance, lr, b) = (self.variance, self.lr, self.batch);
        let dim = self.params.dim;
        let seed = self.params.seed;
        let history = self
            .history
            .as_mut()
            .expect("lazy trainer keeps a HistoryTable");
        for (t, (table, hist)) in self
            .model
            .tables_mut()
            .iter_mut()
            .zip(history.iter_mut())
            .enumerate()
        {
            let source = NoiseSource::new(seed, table.table_id());
            let rows: Vec<u32> = rows_per_table[t]
                .iter()
                .copied()
                .filter(|&r| (r as usize) < table.rows() && hist.pending(r as usize, iter) > 0)
                .collect();
            let section = Instant::now();
            // pending windows are disjoint per row, so noise is sampled in parallel
            let sampled: Vec<(u32, Vec<T>, u64, u64)> = self.pool.install(|| {
                rows.par_iter()
                    .map(|&r| {
                        let delay = hist.pending(r as usize, iter);
                        let sample_start = Instant::now();
                        let (values, count) =
                            pending_noise(source, u64::from(r), iter, delay, dim, variance, ans);
                        (r, values, count, elapsed_nanos(sample_start))
                    })
                    .collect()
            });
            let mut tally = WorkerTally::default();
            for (_, _, count, nanos) in &sampled {
                tally.metrics.record(Event::NoiseScalars, *count);
                tally.nanos[Stage::NoiseSampling as usize] += nanos;
            }
            let mut clock = Instant::now();
            for (r, mut values, _, _) in sampled {
                for v in values.iter_mut() {
                    *v = *v / b;
                }
                clock = tally.charge(Stage::NoisyGradGen, clock);
                for (theta, u) in table.row_mut(r as usize).iter_mut().zip(&values) {
                    *theta = *theta - lr * *u;
                }
                hist.mark(r as usize, iter);
                clock = tally.charge(Stage::NoisyGradUpdate, clock);
            }
            let n = rows.len() as u64;
            tally
                .metrics
                .record(Event::Axpy(Stage::NoisyGradGen), n * dim as u64);
            tally
                .metrics
                .record(Event::Axpy(Stage::NoisyGradUpdate), n * dim as u64);
            tally.metrics.record(Event::RowsRead, n);
            tally.metrics.record(Event::RowsWritten, n);
            self.metrics.merge(&tally.metrics);
            attribute_section(&mut self.metrics, elapsed_nanos(section), &tally.nanos);
        }
        let wall = elapsed_nanos(started);
        let charged = self.metrics.stage_nanos_breakdown().total() - before;
        self.metrics
            .record(Event::Nanos(Stage::Others), wall.saturating_sub(charged));
        self.metrics.wall_nanos += wall;
        Ok(())
    }

    /// EANA: fresh noise only on rows gathered this iteration.
    pub fn eana_step(&mut self, batch: &MiniBatch) -> Result<()> {
        self.expect_algorithm(Algorithm::Eana)?;
        let started = Instant::now();
        let iter = self.begin_step(batch)?;
        let grad = self.batch_gradient(batch, true);
        let dim = self.params.dim;
        let variance = self.variance;

        let t0 = Instant::now();
        let keys: Vec<RowRef> = grad.iter().map(|(k, _)| k).collect();
        let sources: Vec<NoiseSource> = (0..self.model.num_tables())
            .map(|t| self.source(t))
            .collect();
        let noise: Vec<Vec<T>> = self.pool.install(|| {
            keys.par_iter()
                .map(|k| {
                    sources[k.table as usize].noise_vector(u64::from(k.row), iter, dim, variance)
                })
                .collect()
        });
        if variance != T::zero() {
            self.metrics
                .record(Event::NoiseScalars, (keys.len() * dim) as u64);
        }
        self.metrics
            .record(Event::Nanos(Stage::NoiseSampling), elapsed_nanos(t0));

        let t1 = Instant::now();
        let b = self.batch;
        let mut update = SparseGrad::new(dim);
        for ((key, g), n) in grad.iter().zip(noise) {
            update.insert(key, g.iter().zip(n).map(|(g, n)| (*g + n) / b).collect());
        }
        self.metrics.record(
            Event::Axpy(Stage::NoisyGradGen),
            (update.len() * dim) as u64,
        );
        self.metrics
            .record(Event::Nanos(Stage::NoisyGradGen), elapsed_nanos(t1));

        self.apply_sparse(&update);
        self.end_step(started);
        Ok(())
    }

    /// Runs the whole trace with the configured algorithm.
    pub fn run(&mut self, trace: &TrainingTrace) -> Result<()> {
        if trace.header().iters_n != self.params.iters_n {
            return Err(Error::TraceMismatch(format!(
                "trace has {} iterations, configured {}",
                trace.header().iters_n,
                self.params.iters_n
            )));
        }
        match self.opts.algorithm {
            Algorithm::Sgd => trace.batches().iter().try_for_each(|b| self.sgd_step(b))?,
            Algorithm::Dense => trace
                .batches()
                .iter()
                .try_for_each(|b| self.dense_dpsgd_step(b))?,
            Algorithm::Eana => trace.batches().iter().try_for_each(|b| self.eana_step(b))?,
            Algorithm::LazyDp { .. } => {
                let mut batches = trace.batches().iter();
                let mut queue = InputQueue::new();
                if let Some(first) = batches.next() {
                    queue.push(first);
                }
                for _ in 0..self.params.iters_n {
                    if let Some(b) = batches.next() {
                        queue.push(b);
                    }
                    let cur = *queue.head().expect("queue holds the current batch");
                    let next = queue.tail().copied();
                    self.lazydp_step(cur, next)?;
                    queue.pop();
                }
                if self.opts.finalize {
                    self.finalize()?;
                }
            }
        }
        Ok(())
    }
}

/// Noise owed to one row for the `delay` iterations ending at `iter`, and the
/// number of Gaussian scalars drawn to produce it.
fn pending_noise<T: Scalar>(
    source: NoiseSource,
    row: u64,
    iter: u64,
    delay: u64,
    dim: usize,
    variance: T,
    ans: bool,
) -> (Vec<T>, u64) {
    let mut out = vec![T::zero(); dim];
    if variance == T::zero() || delay == 0 {
        return (out, 0);
    }
    if ans {
        source
            .fill_ans_noise(row, iter, delay, variance, &mut out)
            .expect("delay is positive");
        (out, dim as u64)
    } else {
        let mut scratch = vec![T::zero(); dim];
        source.fill_summed_noise(
            row,
            iter + 1 - delay,
            iter,
            variance,
            &mut out,
            &mut scratch,
        );
        (out, delay * dim as u64)
    }
}

#[allow(clippy::too_many_arguments)]
fn dense_chunk<T: Scalar>(
    chunk: &mut [T],
    first_row: usize,
    dim: usize,
    grads: &[(u32, &[T])],
    source: NoiseSource,
    iter: u64,
    variance: T,
    lr: T,
    b: T,
) -> WorkerTally {
    let mut tally = WorkerTally::default();
    let n_rows = chunk.len() / dim;
    let elements = chunk.len() as u64;
    let mut buf = vec![T::zero(); chunk.len()];

    let mut clock = Instant::now();
    for (r, noise) in buf.chunks_exact_mut(dim).enumerate() {
        source.fill_noise((first_row + r) as u64, iter, variance, noise);
    }
    if variance != T::zero() {
        tally.metrics.record(Event::NoiseScalars, elements);
    }
    clock = tally.charge(Stage::NoiseSampling, clock);

    let lo = grads.partition_point(|(r, _)| (*r as usize) < first_row);
    let hi = grads.partition_point(|(r, _)| (*r as usize) < first_row + n_rows);
    for (row, g) in &grads[lo..hi] {
        let off = (*row as usize - first_row) * dim;
        for (n, g) in buf[off..off + dim].iter_mut().zip(g.iter()) {
            *n = *g + *n;
        }
    }
    for v in buf.iter_mut() {
        *v = *v / b;
    }
    tally
        .metrics
        .record(Event::Axpy(Stage::NoisyGradGen), elements);
    clock = tally.charge(Stage::NoisyGradGen, clock);

    for (theta, u) in chunk.iter_mut().zip(&buf) {
        *theta = *theta - lr * *u;
    }
    tally.metrics.record(Event::RowsRead, n_rows as u64);
    tally.metrics.record(Event::RowsWritten, n_rows as u64);
    tally
        .metrics
        .record(Event::Axpy(Stage::NoisyGradUpdate), elements);
    tally.charge(Stage::NoisyGradUpdate, clock);
    tally
}

/// Allocates `num_tables` tables for `params` and a toy model with seeded readouts.
pub fn build_model<T: Scalar>(
    params: &HyperParams,
    num_tables: usize,
    init: crate::table::Init,
    memory_cap: u64,
) -> Result<ToyModel<T>> {
    let requested = (params.rows_e as u128)
        * (params.dim as u128)
        * (std::mem::size_of::<T>() as u128)
        * (num_tables as u128);
    let requested = u64::try_from(requested).unwrap_or(u64::MAX);
    if requested > memory_cap {
        return Err(Error::MemoryCap {
            requested,
            cap: memory_cap,
        });
    }
    let tables = (0..num_tables)
        .map(|t| EmbeddingTable::new(params, t as u32, init, memory_cap))
        .collect::<Result<Vec<_>>>()?;
    ToyModel::with_seeded_readouts(tables, params.seed)
}

/// Final state of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: ToyModel<T>,
    pub metrics: Metrics,
    pub finalized: bool,
}

/// Trains `model` on `trace` under `opts`.
pub fn train<T: Scalar>(
    model: ToyModel<T>,
    trace: &TrainingTrace,
    params: &HyperParams,
    opts: &TrainOptions,
) -> Result<TrainOutcome<T>> {
    trace.check_against(params, model.num_tables())?;
    let mut trainer = Trainer::new(params.clone(), model, opts.clone())?;
    trainer.run(trace)?;
    let finalized = trainer.is_finalized();
    let (model, metrics) = trainer.into_parts();
    Ok(TrainOutcome {
        model,
        metrics,
        finalized,
    })
}
