//! Counters, stage timers and the flop model used to attribute training cost.
//!
//! Stages follow the usual DP-SGD latency breakdown (forward, backward,
//! noise sampling, noisy gradient generation, noisy gradient update) plus a
//! bucket for lazy-update bookkeeping. Whatever wall-clock time a step spends
//! outside those stages lands in `others`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Scalar operations charged per Box-Muller Gaussian draw.
pub const GAUSS_SCALAR_FLOPS: u64 = 101;
/// Scalar operations charged per streamed multiply-add element.
pub const AXPY_SCALAR_FLOPS: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlopKind {
    GaussScalar,
    AxpyScalar,
}

pub fn flop_cost(kind: FlopKind) -> u64 {
    match kind {
        FlopKind::GaussScalar => GAUSS_SCALAR_FLOPS,
        FlopKind::AxpyScalar => AXPY_SCALAR_FLOPS,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Forward,
    Backward,
    NoiseSampling,
    NoisyGradGen,
    NoisyGradUpdate,
    LazydpOverhead,
    Others,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Forward,
        Stage::Backward,
        Stage::NoiseSampling,
        Stage::NoisyGradGen,
        Stage::NoisyGradUpdate,
        Stage::LazydpOverhead,
        Stage::Others,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Forward => "forward",
            Stage::Backward => "backward",
            Stage::NoiseSampling => "noise_sampling",
            Stage::NoisyGradGen => "noisy_grad_gen",
            Stage::NoisyGradUpdate => "noisy_grad_update",
            Stage::LazydpOverhead => "lazydp_overhead",
            Stage::Others => "others",
        }
    }

    fn idx(self) -> usize {
        self as usize
    }
}

/// Per-stage values in a fixed field order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageBreakdown {
    pub forward: u64,
    pub backward: u64,
    pub noise_sampling: u64,
    pub noisy_grad_gen: u64,
    pub noisy_grad_update: u64,
    pub lazydp_overhead: u64,
    pub others: u64,
}

impl StageBreakdown {
    fn from_array(a: &[u64; 7]) -> Self {
        StageBreakdown {
            forward: a[0],
            backward: a[1],
            noise_sampling: a[2],
            noisy_grad_gen: a[3],
            noisy_grad_update: a[4],
            lazydp_overhead: a[5],
            others: a[6],
        }
    }

    pub fn total(&self) -> u64 {
        self.forward
            + self.backward
            + self.noise_sampling
            + self.noisy_grad_gen
            + self.noisy_grad_update
            + self.lazydp_overhead
            + self.others
    }
}

/// Things that can be counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    RowsRead,
    RowsWritten,
    /// Gaussian scalars drawn; also charges the Box-Muller flop cost.
    NoiseScalars,
    /// Streamed multiply-add elements within a stage.
    Axpy(Stage),
    Nanos(Stage),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: u64,
    pub rows_read: u64,
    pub rows_written: u64,
    pub noise_scalars_sampled: u64,
    pub flop_estimate: u64,
    pub wall_nanos: u64,
    pub stage_nanos: [u64; 7],
}

/// Mergeable counters for one run (or one worker's share of a step).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Metrics {
    pub rows_read: u64,
    pub rows_written: u64,
    pub noise_scalars_sampled: u64,
    pub flop_estimate: u64,
    pub wall_nanos: u64,
    stage_nanos: [u64; 7],
    stage_flops: [u64; 7],
    iterations: Vec<IterationRecord>,
    open: Option<IterationRecord>,
}

impl Metrics {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, event: Event, amount: u64) {
        match event {
            Event::RowsRead => self.rows_read += amount,
            Event::RowsWritten => self.rows_written += amount,
            Event::NoiseScalars => {
                self.noise_scalars_sampled += amount;
                self.add_flops(
                    Stage::NoiseSampling,
                    amount * flop_cost(FlopKind::GaussScalar),
                );
            }
            Event::Axpy(stage) => self.add_flops(stage, amount * flop_cost(FlopKind::AxpyScalar)),
            Event::Nanos(stage) => self.stage_nanos[stage.idx()] += amount,
        }
    }

    fn add_flops(&mut self, stage: Stage, flops: u64) {
        self.flop_estimate += flops;
        self.stage_flops[stage.idx()] += flops;
    }

    pub fn stage_nanos(&self, stage: Stage) -> u64 {
        self.stage_nanos[stage.idx()]
    }

    pub fn stage_flops(&self, stage: Stage) -> u64 {
        self.stage_flops[stage.idx()]
    }

    pub fn stage_nanos_breakdown(&self) -> StageBreakdown {
        StageBreakdown::from_array(&self.stage_nanos)
    }

    pub fn stage_flops_breakdown(&self) -> StageBreakdown {
        StageBreakdown::from_array(&self.stage_flops)
    }

    pub fn iterations(&self) -> &[IterationRecord] {
        &self.iterations
    }

    /// Starts attributing subsequent counts to iteration `iter`.
    pub fn begin_iteration(&mut self, iter: u64) {
        self.open = Some(IterationRecord {
            iter,
            rows_read: self.rows_read,
            rows_written: self.rows_written,
            noise_scalars_sampled: self.noise_scalars_sampled,
            flop_estimate: self.flop_estimate,
            wall_nanos: 0,
            stage_nanos: self.stage_nanos,
        });
    }

    /// Closes the open iteration. Wall-clock time not claimed by a stage is
    /// charged to `others`.
    pub fn end_iteration(&mut self, wall_nanos: u64) {
        let Some(start) = self.open.take() else {
            return;
        };
        let mut stage_nanos = [0u64; 7];
        for (i, s) in stage_nanos.iter_mut().enumerate() {
            *s = self.stage_nanos[i] - start.stage_nanos[i];
        }
        let attributed: u64 = stage_nanos.iter().sum();
        let others = wall_nanos.saturating_sub(attributed);
        stage_nanos[Stage::Others.idx()] += others;
        self.stage_nanos[Stage::Others.idx()] += others;
        self.wall_nanos += wall_nanos;
        self.iterations.push(IterationRecord {
            iter: start.iter,
            rows_read: self.rows_read - start.rows_read,
            rows_written: self.rows_written - start.rows_written,
            noise_scalars_sampled: self.noise_scalars_sampled - start.noise_scalars_sampled,
            flop_estimate: self.flop_estimate - start.flop_estimate,
            wall_nanos,
            stage_nanos,
        });
    }

    /// Field-wise sum. Iteration series are summed position by position.
    pub fn merge(&mut self, other: &Metrics) {
        self.rows_read += other.rows_read;
        self.rows_written += other.rows_written;
        self.noise_scalars_sampled += other.noise_scalars_sampled;
        self.flop_estimate += other.flop_estimate;
        self.wall_nanos += other.wall_nanos;
        for i in 0..7 {
            self.stage_nanos[i] += other.stage_nanos[i];
            self.stage_flops[i] += other.stage_flops[i];
        }
        for (pos, rec) in other.iterations.iter().enumerate() {
            match self.iterations.get_mut(pos) {
                Some(mine) => {
                    mine.rows_read += rec.rows_read;
                    mine.rows_written += rec.rows_written;
                    mine.noise_scalars_sampled += rec.noise_scalars_sampled;
                    mine.flop_estimate += rec.flop_estimate;
                    mine.wall_nanos += rec.wall_nanos;
                    for i in 0..7 {
                        mine.stage_nanos[i] += rec.stage_nanos[i];
                    }
                }
                None => self.iterations.push(*rec),
            }
        }
    }

    pub fn merged(mut self, other: &Metrics) -> Metrics {
        self.merge(other);
        self
    }

    /// Share of estimated flops spent in noise sampling and the noisy update.
    pub fn noise_flop_share(&self) -> f64 {
        if self.flop_estimate == 0 {
            return 0.0;
        }
        (self.stage_flops(Stage::NoiseSampling) + self.stage_flops(Stage::NoisyGradUpdate)) as f64
            / self.flop_estimate as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!(
                "unknown report format `{other}` (expected json|csv)"
            )),
        }
    }
}

/// Run context echoed into a report.
#[derive(Debug, Clone, Default)]
pub struct ReportContext {
    pub config: serde_json::Value,
    /// Rows a dense update would write per iteration (rows_e x tables).
    pub dense_rows_per_iteration: Option<u64>,
    pub final_model_private: Option<bool>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Counters {
    pub rows_read: u64,
    pub rows_written: u64,
    pub noise_scalars_sampled: u64,
    pub flop_estimate: u64,
    pub wall_nanos: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Derived {
    pub iterations: u64,
    pub rows_written_per_iteration: f64,
    /// Dense-update row writes divided by the writes actually performed.
    pub dense_to_actual_rows_written: Option<f64>,
    pub noise_flop_share: f64,
    pub final_model_private: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Report {
    pub config: serde_json::Value,
    pub counters: Counters,
    pub stage_nanos: StageBreakdown,
    pub stage_flops: StageBreakdown,
    pub derived: Derived,
    pub notes: Vec<String>,
}

impl Report {
    pub fn new(metrics: &Metrics, ctx: &ReportContext) -> Self {
        let iterations = metrics.iterations.len() as u64;
        let rows_written_per_iteration = if iterations == 0 {
            0.0
        } else {
            metrics.rows_written as f64 / iterations as f64
        };
        let dense_to_actual_rows_written = ctx.dense_rows_per_iteration.and_then(|dense| {
            (metrics.rows_written > 0)
                .then(|| (dense * iterations) as f64 / metrics.rows_written as f64)
        });
        Report {
            config: ctx.config.clone(),
            counters: Counters {
                rows_read: metrics.rows_read,
                rows_written: metrics.rows_written,
                noise_scalars_sampled: metrics.noise_scalars_sampled,
                flop_estimate: metrics.flop_estimate,
                wall_nanos: metrics.wall_nanos,
            },
            stage_nanos: metrics.stage_nanos_breakdown(),
            stage_flops: metrics.stage_flops_breakdown(),
            derived: Derived {
                iterations,
                rows_written_per_iteration,
                dense_to_actual_rows_written,
                noise_flop_share: metrics.noise_flop_share(),
                final_model_private: ctx.final_model_private,
            },
            notes: ctx.notes.clone(),
        }
    }
}

pub const CSV_COLUMNS: [&str; 13] = [
    "iter",
    "rows_read",
    "rows_written",
    "noise_scalars_sampled",
    "flop_estimate",
    "forward_ns",
    "backward_ns",
    "noise_sampling_ns",
    "noisy_grad_gen_ns",
    "noisy_grad_update_ns",
    "lazydp_overhead_ns",
    "others_ns",
    "wall_ns",
];

pub fn write_report<W: Write>(
    metrics: &Metrics,
    ctx: &ReportContext,
    format: ReportFormat,
    out: W,
) -> Result<()> {
    match format {
        ReportFormat::Json => {
            let mut out = out;
            serde_json::to_writer_pretty(&mut out, &Report::new(metrics, ctx))?;
            out.write_all(b"\n")?;
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(CSV_COLUMNS)?;
            for rec in &metrics.iterations {
                let mut row = vec![
                    rec.iter,
                    rec.rows_read,
                    rec.rows_written,
                    rec.noise_scalars_sampled,
                    rec.flop_estimate,
                ];
                row.extend_from_slice(&rec.stage_nanos);
                row.push(rec.wall_nanos);
                w.write_record(row.iter().map(u64::to_string))?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

/// Renders a report into memory.
pub fn report(metrics: &Metrics, ctx: &ReportContext, format: ReportFormat) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_report(metrics, ctx, format, &mut buf)?;
    Ok(buf)
}
