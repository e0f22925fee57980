use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::mix64;
use crate::params::HyperParams;
use crate::scalar::Scalar;

/// Initial contents of a freshly allocated table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Init {
    Zeros,
    Uniform { lo: f64, hi: f64 },
}

/// A dense `rows x dim` embedding table stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<T> {
    table_id: u32,
    rows: usize,
    dim: usize,
    values: Vec<T>,
}

impl<T: Scalar> EmbeddingTable<T> {
    /// Allocates a table for `params`, refusing anything above `memory_cap` bytes.
    pub fn new(params: &HyperParams, table_id: u32, init: Init, memory_cap: u64) -> Result<Self> {
        params.validate()?;
        let bytes =
            (params.rows_e as u128) * (params.dim as u128) * (std::mem::size_of::<T>() as u128);
        let bytes = u64::try_from(bytes).unwrap_or(u64::MAX);
        if bytes > memory_cap {
            return Err(Error::MemoryCap {
                requested: bytes,
                cap: memory_cap,
            });
        }
        let rows = usize::try_from(params.rows_e).map_err(|_| Error::Allocation { bytes })?;
        let len = rows
            .checked_mul(params.dim)
            .ok_or(Error::Allocation { bytes })?;
        let mut values: Vec<T> = Vec::new();
        values
            .try_reserve_exact(len)
            .map_err(|_| Error::Allocation { bytes })?;
        match init {
            Init::Zeros => values.resize(len, T::zero()),
            Init::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(Error::param(
                        "init",
                        format!("bad uniform range [{lo}, {hi})"),
                    ));
                }
                let mut rng =
                    ChaCha8Rng::seed_from_u64(mix64(params.seed ^ mix64(u64::from(table_id))));
                values.extend((0..len).map(|_| T::from_f64_lossy(rng.random_range(lo..hi))));
            }
        }
        Ok(EmbeddingTable {
            table_id,
            rows,
            dim: params.dim,
            values,
        })
    }

    pub fn from_values(table_id: u32, rows: usize, dim: usize, values: Vec<T>) -> Result<Self> {
        if dim == 0 || rows.checked_mul(dim) != Some(values.len()) {
            return Err(Error::ShapeMismatch(format!(
                "{} values cannot form a {rows} x {dim} table",
                values.len()
            )));
        }
        Ok(EmbeddingTable {
            table_id,
            rows,
            dim,
            values,
        })
    }

    pub fn table_id(&self) -> u32 {
        self.table_id
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.values[r * self.dim..(r + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.values[r * self.dim..(r + 1) * self.dim]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
