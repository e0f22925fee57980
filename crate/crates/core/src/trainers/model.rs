//! A linear readout over sum-pooled embeddings, used as the gradient source.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::batch::MiniBatch;
use crate::error::{Error, Result};
use crate::grad::{RowRef, SparseGrad};
use crate::noise::mix64;
use crate::scalar::Scalar;
use crate::table::EmbeddingTable;

const READOUT_DOMAIN: u64 = 0x7265_6164_6f75_7401;

/// `prediction = sum over tables of dot(sum of gathered rows, readout[t])`,
/// trained with squared loss. Readouts are frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel<T> {
    tables: Vec<EmbeddingTable<T>>,
    readouts: Vec<Vec<T>>,
}

impl<T: Scalar> ToyModel<T> {
    pub fn new(tables: Vec<EmbeddingTable<T>>, readouts: Vec<Vec<T>>) -> Result<Self> {
        if tables.is_empty() {
            return Err(Error::ShapeMismatch(
                "model needs at least one table".into(),
            ));
        }
        if readouts.len() != tables.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} readouts for {} tables",
                readouts.len(),
                tables.len()
            )));
        }
        let dim = tables[0].dim();
        for (t, (table, readout)) in tables.iter().zip(&readouts).enumerate() {
            if table.dim() != dim || readout.len() != dim {
                return Err(Error::ShapeMismatch(format!(
                    "table {t}: dim {} / readout {} differ from {dim}",
                    table.dim(),
                    readout.len()
                )));
            }
            if table.table_id() as usize != t {
                return Err(Error::ShapeMismatch(format!(
                    "table at position {t} has id {}",
                    table.table_id()
                )));
            }
        }
        Ok(ToyModel { tables, readouts })
    }

    /// Readout entries drawn uniformly from [-1, 1) under `seed`.
    pub fn with_seeded_readouts(tables: Vec<EmbeddingTable<T>>, seed: u64) -> Result<Self> {
        let dim = tables.first().map_or(0, |t| t.dim());
        let readouts = (0..tables.len())
            .map(|t| {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(mix64(seed ^ READOUT_DOMAIN ^ mix64(t as u64)));
                (0..dim)
                    .map(|_| T::from_f64_lossy(rng.random_range(-1.0..1.0)))
                    .collect()
            })
            .collect();
        Self::new(tables, readouts)
    }

    pub fn tables(&self) -> &[EmbeddingTable<T>] {
        &self.tables
    }

    pub fn tables_mut(&mut self) -> &mut [EmbeddingTable<T>] {
        &mut self.tables
    }

    pub fn into_tables(self) -> Vec<EmbeddingTable<T>> {
        self.tables
    }

    pub fn readouts(&self) -> &[Vec<T>] {
        &self.readouts
    }

    pub fn dim(&self) -> usize {
        self.tables[0].dim()
    }

    pub fn num_tables(&self) -> usize {
        self.tables.len()
    }

    /// Checks that `batch` addresses valid rows of this model's tables.
    pub fn check_batch(&self, batch: &MiniBatch) -> Result<()> {
        if batch.num_tables() != self.tables.len() {
            return Err(Error::BadBatch(format!(
                "batch has {} tables, model has {}",
                batch.num_tables(),
                self.tables.len()
            )));
        }
        for (t, table) in self.tables.iter().enumerate() {
            for e in 0..batch.batch_size() {
                if let Some(&ix) = batch
                    .lookups(e, t)
                    .iter()
                    .find(|&&ix| ix as usize >= table.rows())
                {
                    return Err(Error::IndexOutOfRange {
                        table: t,
                        index: u64::from(ix),
                        rows: table.rows() as u64,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn predict(&self, batch: &MiniBatch, example: usize) -> T {
        let dim = self.dim();
        let mut pooled = vec![T::zero(); dim];
        let mut prediction = T::zero();
        for (t, (table, readout)) in self.tables.iter().zip(&self.readouts).enumerate() {
            pooled.fill(T::zero());
            for &ix in batch.lookups(example, t) {
                for (p, v) in pooled.iter_mut().zip(table.row(ix as usize)) {
                    *p = *p + *v;
                }
            }
            prediction = pooled
                .iter()
                .zip(readout)
                .fold(prediction, |acc, (p, r)| acc + *p * *r);
        }
        prediction
    }

    /// Residual `prediction - target` for every example, in example order.
    pub fn residuals(&self, batch: &MiniBatch) -> Vec<T> {
        (0..batch.batch_size())
            .map(|e| self.predict(batch, e) - T::from_f64_lossy(batch.target(e)))
            .collect()
    }

    /// Gradient of each example's loss given precomputed residuals. Every
    /// occurrence of a row in the pooling list contributes `residual * readout`.
    pub fn grads_from_residuals(&self, batch: &MiniBatch, residuals: &[T]) -> Vec<SparseGrad<T>> {
        let dim = self.dim();
        residuals
            .iter()
            .enumerate()
            .map(|(e, &residual)| {
                let mut g = SparseGrad::new(dim);
                for (t, readout) in self.readouts.iter().enumerate() {
                    for &ix in batch.lookups(e, t) {
                        g.accumulate(RowRef::new(t as u32, ix), readout, residual);
                    }
                }
                g
            })
            .collect()
    }

    pub fn per_example_grads(&self, batch: &MiniBatch) -> Result<Vec<SparseGrad<T>>> {
        self.check_batch(batch)?;
        Ok(self.grads_from_residuals(batch, &self.residuals(batch)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_dim_model(values: Vec<f64>) -> ToyModel<f64> {
        let rows = values.len();
        let table = EmbeddingTable::from_values(0, rows, 1, values).unwrap();
        ToyModel::new(vec![table], vec![vec![1.0]]).unwrap()
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let model = one_dim_model(vec![0.5, 1.5, 0.0]);
        let batch = MiniBatch::single_table(&[(vec![0], 0.5), (vec![1], 1.5)]).unwrap();
        for g in model.per_example_grads(&batch).unwrap() {
            assert!(g.iter().all(|(_, v)| v.iter().all(|x| *x == 0.0)));
        }
    }

    #[test]
    fn hand_chain_rule() {
        // prediction 3, target 1 -> residual 2
        let model = one_dim_model(vec![0.0, 3.0]);
        let batch = MiniBatch::single_table(&[(vec![1], 1.0)]).unwrap();
        let g = &model.per_example_grads(&batch).unwrap()[0];
        assert_eq!(g.len(), 1);
        assert_eq!(g.get(RowRef::new(0, 1)).unwrap(), &[2.0]);
    }

    #[test]
    fn duplicate_gather_doubles_gradient() {
        let model = one_dim_model(vec![0.0, 1.0, 0.0]);
        let once = MiniBatch::single_table(&[(vec![1, 0], 0.0)]).unwrap();
        let twice = MiniBatch::single_table(&[(vec![1, 1], 1.0)]).unwrap();
        // both have residual 1; row 1 appears once vs twice
        let g1 = model.per_example_grads(&once).unwrap()[0]
            .get(RowRef::new(0, 1))
            .unwrap()[0];
        let g2 = model.per_example_grads(&twice).unwrap()[0]
            .get(RowRef::new(0, 1))
            .unwrap()[0];
        assert_eq!(g2, 2.0 * g1);
    }

    #[test]
    fn multi_table_prediction_sums_tables() {
        let t0 = EmbeddingTable::from_values(0, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let t1 = EmbeddingTable::from_values(1, 1, 2, vec![10.0, 20.0]).unwrap();
        let model = ToyModel::new(vec![t0, t1], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let batch = MiniBatch::new(1, 2, 2, vec![0, 1, 0, 0], vec![0.0]).unwrap();
        // table 0 pooled [4, 6] . [1, 0] = 4; table 1 pooled [20, 40] . [0, 1] = 40
        assert_eq!(model.predict(&batch, 0), 44.0);
        let g = &model.per_example_grads(&batch).unwrap()[0];
        assert_eq!(g.get(RowRef::new(1, 0)).unwrap(), &[0.0, 88.0]);
        assert_eq!(g.get(RowRef::new(0, 1)).unwrap(), &[44.0, 0.0]);
    }

    #[test]
    fn out_of_range_index_is_an_error() {
        let model = one_dim_model(vec![0.0; 2]);
        let batch = MiniBatch::single_table(&[(vec![2], 0.0)]).unwrap();
        assert!(matches!(
            model.per_example_grads(&batch),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn seeded_readouts_are_deterministic() {
        let mk = || {
            let t = EmbeddingTable::<f64>::from_values(0, 1, 4, vec![0.0; 4]).unwrap();
            ToyModel::with_seeded_readouts(vec![t], 5).unwrap()
        };
        assert_eq!(mk().readouts(), mk().readouts());
    }
}
