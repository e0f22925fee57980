//! Double precision table dumps for cross-run comparison.
//!
//! Layout (little-endian): magic `"LZDPTBL1"`, then six u64 fields
//! (version, num_tables, rows_e, dim, seed, iters_n), then every value as
//! f64, table by table, row-major.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::table::EmbeddingTable;

pub const DUMP_MAGIC: &[u8; 8] = b"LZDPTBL1";
pub const DUMP_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TableDump {
    pub seed: u64,
    pub iters_n: u64,
    pub rows: usize,
    pub dim: usize,
    pub tables: Vec<Vec<f64>>,
}

impl TableDump {
    pub fn from_tables<T: Scalar>(
        tables: &[EmbeddingTable<T>],
        seed: u64,
        iters_n: u64,
    ) -> Result<Self> {
        let first = tables
            .first()
            .ok_or_else(|| Error::ShapeMismatch("nothing to dump".into()))?;
        if tables
            .iter()
            .any(|t| t.rows() != first.rows() || t.dim() != first.dim())
        {
            return Err(Error::ShapeMismatch("tables differ in shape".into()));
        }
        Ok(TableDump {
            seed,
            iters_n,
            rows: first.rows(),
            dim: first.dim(),
            tables: tables
                .iter()
                .map(|t| t.values().iter().map(|v| v.to_f64_lossy()).collect())
                .collect(),
        })
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = BufWriter::new(writer);
        w.write_all(DUMP_MAGIC)?;
        for field in [
            DUMP_VERSION,
            self.tables.len() as u64,
            self.rows as u64,
            self.dim as u64,
            self.seed,
            self.iters_n,
        ] {
            w.write_all(&field.to_le_bytes())?;
        }
        for v in self.tables.iter().flatten() {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let mut r = BufReader::new(reader);
        let mut word = [0u8; 8];
        r.read_exact(&mut word)
            .map_err(|_| Error::Format("file too short for dump magic".into()))?;
        if &word != DUMP_MAGIC {
            return Err(Error::Format("not a table dump".into()));
        }
        let mut header = [0u64; 6];
        for h in header.iter_mut() {
            r.read_exact(&mut word)
                .map_err(|_| Error::Format("truncated dump header".into()))?;
            *h = u64::from_le_bytes(word);
        }
        let [version, num_tables, rows, dim, seed, iters_n] = header;
        if version != DUMP_VERSION {
            return Err(Error::Format(format!("unsupported dump version {version}")));
        }
        let len = rows
            .checked_mul(dim)
            .and_then(|n| usize::try_from(n).ok())
            .ok_or_else(|| Error::Format("dump shape overflows".into()))?;
        let mut tables = Vec::with_capacity(num_tables as usize);
        for _ in 0..num_tables {
            let mut values = Vec::with_capacity(len);
            for _ in 0..len {
                r.read_exact(&mut word)
                    .map_err(|_| Error::Format("truncated dump body".into()))?;
                values.push(f64::from_le_bytes(word));
            }
            tables.push(values);
        }
        if r.read(&mut word)? != 0 {
            return Err(Error::Format("trailing bytes after dump body".into()));
        }
        Ok(TableDump {
            seed,
            iters_n,
            rows: rows as usize,
            dim: dim as usize,
            tables,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write(std::fs::File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(std::fs::File::open(path)?)
    }
}

/// `|a - b| / max(|a|, |b|)`, zero when the values are equal.
pub fn relative_diff(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableDiff {
    pub table: usize,
    pub max_relative_diff: f64,
    pub max_abs_diff: f64,
}

/// Per-table maximum element-wise differences between two dumps.
pub fn compare(a: &TableDump, b: &TableDump) -> Result<Vec<TableDiff>> {
    if a.tables.len() != b.tables.len() || a.rows != b.rows || a.dim != b.dim {
        return Err(Error::ShapeMismatch(format!(
            "{} x {} x {} vs {} x {} x {}",
            a.tables.len(),
            a.rows,
            a.dim,
            b.tables.len(),
            b.rows,
            b.dim
        )));
    }
    Ok(a.tables
        .iter()
        .zip(&b.tables)
        .enumerate()
        .map(|(table, (x, y))| {
            let (rel, abs) = x
                .iter()
                .zip(y)
                .fold((0.0f64, 0.0f64), |(rel, abs), (p, q)| {
                    (rel.max(relative_diff(*p, *q)), abs.max((p - q).abs()))
                });
            TableDiff {
                table,
                max_relative_diff: rel,
                max_abs_diff: abs,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dump() -> TableDump {
        TableDump {
            seed: 5,
            iters_n: 2,
            rows: 2,
            dim: 2,
            tables: vec![vec![1.0, -2.0, 0.0, 3.5], vec![0.25; 4]],
        }
    }

    #[test]
    fn round_trip_and_layout() {
        let mut bytes = Vec::new();
        dump().write(&mut bytes).unwrap();
        assert_eq!(bytes.len(), 8 + 48 + 8 * 8);
        assert_eq!(&bytes[..8], b"LZDPTBL1");
        assert_eq!(TableDump::read(bytes.as_slice()).unwrap(), dump());
        assert!(TableDump::read(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn identical_dumps_have_zero_diff() {
        let diffs = compare(&dump(), &dump()).unwrap();
        assert!(diffs.iter().all(|d| d.max_relative_diff == 0.0));
    }

    #[test]
    fn relative_diff_definition() {
        assert_eq!(relative_diff(0.0, 0.0), 0.0);
        assert_eq!(relative_diff(1.0, 0.0), 1.0);
        assert!((relative_diff(100.0, 101.0) - 1.0 / 101.0).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let mut other = dump();
        other.tables.pop();
        assert!(compare(&dump(), &other).is_err());
    }
}
