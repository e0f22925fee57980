//! Training hyperparameters and the storage accounting that goes with them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Precision;

/// Default guard on table storage for desk-scale runs (8 GB).
pub const DEFAULT_MEMORY_CAP: u64 = 8_000_000_000;

/// Bytes per HistoryTable entry and per queued row index.
pub const METADATA_ENTRY_BYTES: u64 = 4;

/// Row counts of the 26 categorical tables in the MLPerf DLRM Criteo 1TB
/// configuration (indices capped at 40M). At 128 dimensions in fp32 these
/// add up to a 96 GB model.
pub const MLPERF_CRITEO_TABLE_ROWS: [u64; 26] = [
    39_884_406, 39_043, 17_289, 7_420, 20_263, 3, 7_120, 1_543, 63, 38_532_951, 2_953_546, 403_346,
    10, 2_208, 11_938, 155, 4, 976, 14, 39_979_771, 25_641_295, 39_664_984, 585_935, 12_972, 108,
    36,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Per-example L2 clipping bound C.
    pub clip_c: f64,
    /// Noise multiplier sigma; zero disables privacy noise.
    pub noise_mult: f64,
    pub batch_b: usize,
    pub lr: f64,
    pub iters_n: u64,
    pub dim: usize,
    pub rows_e: u64,
    pub pooling: usize,
    pub precision: Precision,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            clip_c: 1.0,
            noise_mult: 1.0,
            batch_b: 8,
            lr: 0.1,
            iters_n: 10,
            dim: 16,
            rows_e: 1000,
            pooling: 1,
            precision: Precision::Double,
            seed: 0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_c.is_finite() && self.clip_c > 0.0) {
            return Err(Error::param(
                "clip_c",
                format!("must be positive, got {}", self.clip_c),
            ));
        }
        if !(self.noise_mult.is_finite() && self.noise_mult >= 0.0) {
            return Err(Error::param(
                "noise_mult",
                format!("must be non-negative, got {}", self.noise_mult),
            ));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::param(
                "lr",
                format!("must be positive, got {}", self.lr),
            ));
        }
        if self.batch_b == 0 {
            return Err(Error::param("batch_b", "must be at least 1"));
        }
        if self.dim == 0 {
            return Err(Error::param("dim", "must be at least 1"));
        }
        if self.rows_e == 0 {
            return Err(Error::param("rows_e", "must be at least 1"));
        }
        if self.rows_e > u64::from(u32::MAX) + 1 {
            return Err(Error::param("rows_e", "row ids must fit in 32 bits"));
        }
        if self.pooling == 0 {
            return Err(Error::param("pooling", "must be at least 1"));
        }
        if self.iters_n > u64::from(u32::MAX) {
            return Err(Error::param("iters_n", "iteration ids must fit in 32 bits"));
        }
        Ok(())
    }

    /// Per-step noise variance before the 1/B scaling: sigma^2 C^2.
    pub fn per_step_variance(&self) -> f64 {
        self.noise_mult * self.noise_mult * self.clip_c * self.clip_c
    }

    /// Storage of one table's values in bytes.
    pub fn table_bytes(&self) -> u64 {
        self.rows_e
            .saturating_mul(self.dim as u64)
            .saturating_mul(self.precision.bytes() as u64)
    }

    /// Rejects configurations whose tables would exceed `cap` bytes in total.
    pub fn check_memory(&self, num_tables: usize, cap: u64) -> Result<u64> {
        let requested = self.table_bytes().saturating_mul(num_tables as u64);
        if requested > cap {
            return Err(Error::MemoryCap { requested, cap });
        }
        Ok(requested)
    }
}

/// HistoryTable storage for one table: one 4-byte iteration id per row.
pub fn history_overhead_bytes(params: &HyperParams) -> u64 {
    params.rows_e * METADATA_ENTRY_BYTES
}

/// HistoryTable storage summed over tables of differing sizes.
pub fn history_overhead_bytes_for(rows_per_table: &[u64]) -> u64 {
    rows_per_table
        .iter()
        .map(|rows| rows * METADATA_ENTRY_BYTES)
        .sum()
}

/// Extra storage for the queued next mini-batch.
pub fn queue_overhead_bytes(params: &HyperParams, num_tables: usize) -> u64 {
    params.batch_b as u64 * num_tables as u64 * params.pooling as u64 * METADATA_ENTRY_BYTES
}

/// Bytes of all tables in `rows_per_table` at `dim` with `bytes_per_value`.
pub fn model_bytes_for(rows_per_table: &[u64], dim: usize, bytes_per_value: u64) -> u64 {
    rows_per_table
        .iter()
        .map(|rows| rows * dim as u64 * bytes_per_value)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn history_overhead_examples() {
        let mut p = HyperParams {
            rows_e: 1,
            ..HyperParams::default()
        };
        assert_eq!(history_overhead_bytes(&p), 4);
        p.rows_e = 1_000_000;
        p.dim = 512;
        assert_eq!(history_overhead_bytes(&p), 4_000_000);
    }

    #[test]
    fn queue_overhead_examples() {
        let mut p = HyperParams {
            batch_b: 1,
            pooling: 1,
            ..HyperParams::default()
        };
        assert_eq!(queue_overhead_bytes(&p, 1), 4);
        p.batch_b = 2048;
        assert_eq!(queue_overhead_bytes(&p, 26), 212_992);
    }

    #[test]
    fn mlperf_configuration_is_96_gb_at_fp32() {
        let bytes = model_bytes_for(&MLPERF_CRITEO_TABLE_ROWS, 128, 4);
        assert_eq!((bytes as f64 / 1e9).round(), 96.0);
    }

    #[test]
    fn validation_rejects_bad_values() {
        let ok = HyperParams::default();
        ok.validate().unwrap();
        for bad in [
            HyperParams {
                clip_c: 0.0,
                ..ok.clone()
            },
            HyperParams {
                noise_mult: -1.0,
                ..ok.clone()
            },
            HyperParams {
                batch_b: 0,
                ..ok.clone()
            },
            HyperParams {
                dim: 0,
                ..ok.clone()
            },
            HyperParams {
                rows_e: 0,
                ..ok.clone()
            },
            HyperParams {
                pooling: 0,
                ..ok.clone()
            },
            HyperParams {
                lr: f64::NAN,
                ..ok.clone()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
        HyperParams {
            noise_mult: 0.0,
            ..ok
        }
        .validate()
        .unwrap();
    }

    #[test]
    fn memory_cap_reports_byte_count() {
        let p = HyperParams {
            rows_e: 1_000_000,
            dim: 128,
            ..HyperParams::default()
        };
        assert_eq!(
            p.check_memory(1, DEFAULT_MEMORY_CAP).unwrap(),
            1_024_000_000
        );
        match p.check_memory(26, 1_000_000_000) {
            Err(Error::MemoryCap { requested, .. }) => assert_eq!(requested, 26_624_000_000),
            other => panic!("{other:?}"),
        }
    }
}
