//! On-disk trace formats.
//!
//! Binary layout (all little-endian):
//!
//! ```text
//! magic      8 bytes   "LZDPTRC1"
//! header     8 x u64   version, rows_e, num_tables, pooling, batch_b, iters_n, seed, reserved
//! body       iters_n x batch_b x (num_tables * pooling x u32 index, 1 x f64 target)
//! ```
//!
//! The CSV form has one line per (iteration, example, table) with columns
//! `iteration,example,table,indices,target`; `iteration` is 1-indexed,
//! `example` and `table` are 0-indexed, and `indices` is a `;` or
//! whitespace separated list of exactly `pooling` row ids.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::batch::{MiniBatch, TraceHeader, TrainingTrace};
use crate::error::{Error, Result};

pub const TRACE_MAGIC: &[u8; 8] = b"LZDPTRC1";
pub const TRACE_VERSION: u64 = 1;

pub fn write_trace<W: Write>(trace: &TrainingTrace, writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    let h = trace.header();
    w.write_all(TRACE_MAGIC)?;
    for field in [
        TRACE_VERSION,
        h.rows_e,
        h.num_tables as u64,
        h.pooling as u64,
        h.batch_b as u64,
        h.iters_n,
        h.seed,
        0,
    ] {
        w.write_all(&field.to_le_bytes())?;
    }
    let per_example = h.num_tables * h.pooling;
    for batch in trace.batches() {
        let indices = batch.raw_indices();
        for (e, target) in batch.targets().iter().enumerate() {
            for ix in &indices[e * per_example..(e + 1) * per_example] {
                w.write_all(&ix.to_le_bytes())?;
            }
            w.write_all(&target.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn to_usize(v: u64, what: &str) -> Result<usize> {
    usize::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in memory")))
}

pub fn read_trace<R: Read>(reader: R) -> Result<TrainingTrace> {
    let mut r = BufReader::new(reader);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("file too short for trace magic".into()))?;
    if &magic != TRACE_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = read_u64(&mut r)?;
    if version != TRACE_VERSION {
        return Err(Error::Format(format!(
            "unsupported trace version {version}"
        )));
    }
    let rows_e = read_u64(&mut r)?;
    let num_tables = to_usize(read_u64(&mut r)?, "num_tables")?;
    let pooling = to_usize(read_u64(&mut r)?, "pooling")?;
    let batch_b = to_usize(read_u64(&mut r)?, "batch_b")?;
    let iters_n = read_u64(&mut r)?;
    let seed = read_u64(&mut r)?;
    let _reserved = read_u64(&mut r)?;
    let header = TraceHeader {
        rows_e,
        num_tables,
        pooling,
        batch_b,
        iters_n,
        seed,
    };

    let per_example = num_tables
        .checked_mul(pooling)
        .ok_or_else(|| Error::Format("header sizes overflow".into()))?;
    let mut batches = Vec::new();
    let mut word = [0u8; 4];
    let mut dword = [0u8; 8];
    for _ in 0..iters_n {
        let mut indices = Vec::with_capacity(batch_b * per_example);
        let mut targets = Vec::with_capacity(batch_b);
        for _ in 0..batch_b {
            for _ in 0..per_example {
                r.read_exact(&mut word)
                    .map_err(|_| Error::Format("truncated trace body".into()))?;
                indices.push(u32::from_le_bytes(word));
            }
            r.read_exact(&mut dword)
                .map_err(|_| Error::Format("truncated trace body".into()))?;
            targets.push(f64::from_le_bytes(dword));
        }
        batches.push(MiniBatch::new(
            batch_b, num_tables, pooling, indices, targets,
        )?);
    }
    if r.read(&mut word)? != 0 {
        return Err(Error::Format("trailing bytes after trace body".into()));
    }
    TrainingTrace::new(header, batches)
}

pub fn save_trace(trace: &TrainingTrace, path: &Path) -> Result<()> {
    write_trace(trace, std::fs::File::create(path)?)
}

pub fn load_trace(path: &Path) -> Result<TrainingTrace> {
    read_trace(std::fs::File::open(path)?)
}

#[derive(Debug, serde::Deserialize)]
struct CsvRecord {
    iteration: u64,
    example: usize,
    table: usize,
    indices: String,
    target: f64,
}

/// Per-table indices and the target of one example.
type CsvExample = (BTreeMap<usize, Vec<u32>>, f64);

/// Imports a hand-written CSV trace. `rows_e` defaults to one past the
/// largest index seen.
pub fn read_trace_csv<R: Read>(reader: R, rows_e: Option<u64>, seed: u64) -> Result<TrainingTrace> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    // (iteration, example) -> (table -> indices, target)
    let mut cells: BTreeMap<(u64, usize), CsvExample> = BTreeMap::new();
    for (line, rec) in rdr.deserialize::<CsvRecord>().enumerate() {
        let rec = rec?;
        if rec.iteration == 0 {
            return Err(Error::Format(format!(
                "record {}: iterations are 1-indexed",
                line + 1
            )));
        }
        let indices = rec
            .indices
            .split(|c: char| c == ';' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<u32>()
                    .map_err(|e| Error::Format(format!("record {}: index `{s}`: {e}", line + 1)))
            })
            .collect::<Result<Vec<u32>>>()?;
        let entry = cells
            .entry((rec.iteration, rec.example))
            .or_insert_with(|| (BTreeMap::new(), rec.target));
        if entry.1.to_bits() != rec.target.to_bits() {
            return Err(Error::Format(format!(
                "record {}: conflicting targets for iteration {} example {}",
                line + 1,
                rec.iteration,
                rec.example
            )));
        }
        if entry.0.insert(rec.table, indices).is_some() {
            return Err(Error::Format(format!(
                "record {}: duplicate table entry",
                line + 1
            )));
        }
    }

    let Some((&(iters_n, _), _)) = cells.last_key_value() else {
        return Err(Error::Format("empty CSV trace".into()));
    };
    let batch_b = cells.keys().map(|&(_, e)| e).max().unwrap_or(0) + 1;
    let first = &cells.values().next().expect("non-empty").0;
    let num_tables = first.keys().max().map_or(0, |t| t + 1);
    let pooling = first.values().next().map_or(0, Vec::len);
    let mut max_index = 0u64;
    let mut batches = Vec::with_capacity(iters_n as usize);
    for iter in 1..=iters_n {
        let mut indices = Vec::with_capacity(batch_b * num_tables * pooling);
        let mut targets = Vec::with_capacity(batch_b);
        for example in 0..batch_b {
            let (tables, target) = cells.get(&(iter, example)).ok_or_else(|| {
                Error::Format(format!("missing iteration {iter} example {example}"))
            })?;
            for table in 0..num_tables {
                let ix = tables.get(&table).ok_or_else(|| {
                    Error::Format(format!(
                        "missing table {table} at iteration {iter} example {example}"
                    ))
                })?;
                if ix.len() != pooling {
                    return Err(Error::Format(format!(
                        "iteration {iter} example {example} table {table}: {} indices, expected {pooling}",
                        ix.len()
                    )));
                }
                max_index = max_index.max(ix.iter().copied().max().map_or(0, u64::from));
                indices.extend_from_slice(ix);
            }
            if tables.len() != num_tables {
                return Err(Error::Format(format!(
                    "iteration {iter} example {example}: {} tables, expected {num_tables}",
                    tables.len()
                )));
            }
            targets.push(*target);
        }
        batches.push(MiniBatch::new(
            batch_b, num_tables, pooling, indices, targets,
        )?);
    }
    let header = TraceHeader {
        rows_e: rows_e.unwrap_or(max_index + 1),
        num_tables,
        pooling,
        batch_b,
        iters_n,
        seed,
    };
    TrainingTrace::new(header, batches)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> TrainingTrace {
        let header = TraceHeader {
            rows_e: 10,
            num_tables: 2,
            pooling: 1,
            batch_b: 2,
            iters_n: 1,
            seed: 3,
        };
        let b = MiniBatch::new(2, 2, 1, vec![1, 2, 3, 4], vec![0.25, -1.5]).unwrap();
        TrainingTrace::new(header, vec![b]).unwrap()
    }

    #[test]
    fn binary_layout_is_bit_exact() {
        let mut bytes = Vec::new();
        write_trace(&tiny(), &mut bytes).unwrap();
        assert_eq!(bytes.len(), 8 + 64 + 2 * (2 * 4 + 8));
        assert_eq!(&bytes[..8], b"LZDPTRC1");
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 10);
        assert_eq!(u64::from_le_bytes(bytes[56..64].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(bytes[64..72].try_into().unwrap()), 0);
        assert_eq!(u32::from_le_bytes(bytes[72..76].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[76..80].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(bytes[80..88].try_into().unwrap()), 0.25);
        assert_eq!(read_trace(bytes.as_slice()).unwrap(), tiny());
    }

    #[test]
    fn rejects_corruption() {
        let mut bytes = Vec::new();
        write_trace(&tiny(), &mut bytes).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(read_trace(bad.as_slice()).is_err());
        assert!(read_trace(&bytes[..bytes.len() - 1]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(read_trace(long.as_slice()).is_err());
        // index 11 is outside rows_e = 10
        let mut oob = bytes;
        oob[72..76].copy_from_slice(&11u32.to_le_bytes());
        assert!(matches!(
            read_trace(oob.as_slice()),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn csv_import_matches_binary_form() {
        let csv = "iteration,example,table,indices,target\n\
                   1,0,0,1,0.25\n\
                   1,0,1,2,0.25\n\
                   1,1,0,3,-1.5\n\
                   1,1,1,4,-1.5\n";
        let t = read_trace_csv(csv.as_bytes(), Some(10), 3).unwrap();
        assert_eq!(t, tiny());
    }

    #[test]
    fn csv_pooling_lists_and_inferred_rows() {
        let csv = "iteration,example,table,indices,target\n\
                   1,0,0,0;5,1.0\n\
                   2,0,0,2 2,0.0\n";
        let t = read_trace_csv(csv.as_bytes(), None, 0).unwrap();
        assert_eq!(t.header().rows_e, 6);
        assert_eq!(t.header().pooling, 2);
        assert_eq!(t.batch_at(2).unwrap().lookups(0, 0), &[2, 2]);
    }

    #[test]
    fn csv_rejects_gaps_and_conflicts() {
        let gap = "iteration,example,table,indices,target\n1,0,0,1,0.0\n3,0,0,1,0.0\n";
        assert!(read_trace_csv(gap.as_bytes(), None, 0).is_err());
        let conflict = "iteration,example,table,indices,target\n1,0,0,1,0.0\n1,0,1,1,2.0\n";
        assert!(read_trace_csv(conflict.as_bytes(), None, 0).is_err());
        let ragged = "iteration,example,table,indices,target\n1,0,0,1;2,0.0\n1,1,0,1,0.0\n";
        assert!(read_trace_csv(ragged.as_bytes(), None, 0).is_err());
    }
}
