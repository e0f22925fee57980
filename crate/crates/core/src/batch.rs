//! Mini-batches of sparse lookups and whole training traces.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::HyperParams;

/// One fixed-size mini-batch.
///
/// Indices are stored flat in example-major, then table, then pooling order,
/// so example `e`, table `t` occupies
/// `indices[(e * num_tables + t) * pooling..][..pooling]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatch {
    batch_b: usize,
    num_tables: usize,
    pooling: usize,
    indices: Vec<u32>,
    targets: Vec<f64>,
}

impl MiniBatch {
    pub fn new(
        batch_b: usize,
        num_tables: usize,
        pooling: usize,
        indices: Vec<u32>,
        targets: Vec<f64>,
    ) -> Result<Self> {
        if batch_b == 0 || num_tables == 0 || pooling == 0 {
            return Err(Error::BadBatch(format!(
                "batch {batch_b}, tables {num_tables}, pooling {pooling} must all be positive"
            )));
        }
        if indices.len() != batch_b * num_tables * pooling {
            return Err(Error::BadBatch(format!(
                "expected {} indices, got {}",
                batch_b * num_tables * pooling,
                indices.len()
            )));
        }
        if targets.len() != batch_b {
            return Err(Error::BadBatch(format!(
                "expected {batch_b} targets, got {}",
                targets.len()
            )));
        }
        if let Some(t) = targets.iter().find(|t| !t.is_finite()) {
            return Err(Error::BadBatch(format!("non-finite target {t}")));
        }
        Ok(MiniBatch {
            batch_b,
            num_tables,
            pooling,
            indices,
            targets,
        })
    }

    /// A single-table batch from per-example lookup lists.
    pub fn single_table(examples: &[(Vec<u32>, f64)]) -> Result<Self> {
        let pooling = examples.first().map_or(0, |(ix, _)| ix.len());
        if examples.iter().any(|(ix, _)| ix.len() != pooling) {
            return Err(Error::BadBatch("variable pooling is not supported".into()));
        }
        let indices = examples
            .iter()
            .flat_map(|(ix, _)| ix.iter().copied())
            .collect();
        let targets = examples.iter().map(|(_, t)| *t).collect();
        MiniBatch::new(examples.len(), 1, pooling, indices, targets)
    }

    pub fn batch_size(&self) -> usize {
        self.batch_b
    }

    pub fn num_tables(&self) -> usize {
        self.num_tables
    }

    pub fn pooling(&self) -> usize {
        self.pooling
    }

    /// Rows gathered by example `example` from table `table`.
    #[inline]
    pub fn lookups(&self, example: usize, table: usize) -> &[u32] {
        let start = (example * self.num_tables + table) * self.pooling;
        &self.indices[start..start + self.pooling]
    }

    pub fn target(&self, example: usize) -> f64 {
        self.targets[example]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn raw_indices(&self) -> &[u32] {
        &self.indices
    }

    /// Sorted, deduplicated rows of `table` touched by this batch.
    pub fn unique_rows(&self, table: usize) -> Vec<u32> {
        let mut rows: Vec<u32> = (0..self.batch_b)
            .flat_map(|e| self.lookups(e, table).iter().copied())
            .collect();
        rows.sort_unstable();
        rows.dedup();
        rows
    }

    /// Checks shape and index range against a table of `rows_e` rows.
    pub fn validate(
        &self,
        rows_e: u64,
        num_tables: usize,
        pooling: usize,
        batch_b: usize,
    ) -> Result<()> {
        if self.batch_b != batch_b || self.num_tables != num_tables || self.pooling != pooling {
            return Err(Error::TraceMismatch(format!(
                "batch shape (B={}, tables={}, pooling={}) differs from expected (B={batch_b}, tables={num_tables}, pooling={pooling})",
                self.batch_b, self.num_tables, self.pooling
            )));
        }
        for (pos, &ix) in self.indices.iter().enumerate() {
            if u64::from(ix) >= rows_e {
                return Err(Error::IndexOutOfRange {
                    table: (pos / self.pooling) % self.num_tables,
                    index: u64::from(ix),
                    rows: rows_e,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub rows_e: u64,
    pub num_tables: usize,
    pub pooling: usize,
    pub batch_b: usize,
    pub iters_n: u64,
    pub seed: u64,
}

/// A complete workload: `iters_n` mini-batches sharing one header.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace {
    header: TraceHeader,
    batches: Vec<MiniBatch>,
}

impl TrainingTrace {
    pub fn new(header: TraceHeader, batches: Vec<MiniBatch>) -> Result<Self> {
        if batches.len() as u64 != header.iters_n {
            return Err(Error::TraceMismatch(format!(
                "header declares {} iterations, body has {}",
                header.iters_n,
                batches.len()
            )));
        }
        if header.rows_e == 0 || header.rows_e > u64::from(u32::MAX) + 1 {
            return Err(Error::TraceMismatch(format!(
                "unsupported rows_e {}",
                header.rows_e
            )));
        }
        for batch in &batches {
            batch.validate(
                header.rows_e,
                header.num_tables,
                header.pooling,
                header.batch_b,
            )?;
        }
        Ok(TrainingTrace { header, batches })
    }

    pub fn header(&self) -> &TraceHeader {
        &self.header
    }

    pub fn batches(&self) -> &[MiniBatch] {
        &self.batches
    }

    /// Batch consumed at 1-indexed iteration `iter`.
    pub fn batch_at(&self, iter: u64) -> Option<&MiniBatch> {
        iter.checked_sub(1)
            .and_then(|i| self.batches.get(i as usize))
    }

    /// Verifies that the trace can drive training with `params` over `num_tables` tables.
    pub fn check_against(&self, params: &HyperParams, num_tables: usize) -> Result<()> {
        let h = &self.header;
        let mut problems = Vec::new();
        if h.rows_e > params.rows_e {
            problems.push(format!(
                "trace rows_e {} > configured {}",
                h.rows_e, params.rows_e
            ));
        }
        if h.num_tables != num_tables {
            problems.push(format!(
                "trace has {} tables, configured {num_tables}",
                h.num_tables
            ));
        }
        if h.pooling != params.pooling {
            problems.push(format!(
                "trace pooling {} != configured {}",
                h.pooling, params.pooling
            ));
        }
        if h.batch_b != params.batch_b {
            problems.push(format!(
                "trace batch {} != configured {}",
                h.batch_b, params.batch_b
            ));
        }
        if h.iters_n != params.iters_n {
            problems.push(format!(
                "trace has {} iterations, configured {}",
                h.iters_n, params.iters_n
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::TraceMismatch(problems.join("; ")))
        }
    }
}
