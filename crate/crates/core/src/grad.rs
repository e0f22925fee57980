use std::collections::BTreeMap;

use crate::scalar::Scalar;

/// Address of one embedding row across tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RowRef {
    pub table: u32,
    pub row: u32,
}

impl RowRef {
    pub fn new(table: u32, row: u32) -> Self {
        RowRef { table, row }
    }
}

/// Sparse gradient (or noise) over embedding rows. Absent rows are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGrad<T> {
    dim: usize,
    entries: BTreeMap<RowRef, Vec<T>>,
}

impl<T: Scalar> SparseGrad<T> {
    pub fn new(dim: usize) -> Self {
        SparseGrad {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: RowRef) -> Option<&[T]> {
        self.entries.get(&key).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (RowRef, &[T])> {
        self.entries.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    /// Rows of `table`, in ascending row order.
    pub fn table_rows(&self, table: u32) -> impl Iterator<Item = (u32, &[T])> {
        self.entries
            .range(RowRef::new(table, 0)..=RowRef::new(table, u32::MAX))
            .map(|(k, v)| (k.row, v.as_slice()))
    }

    /// Adds `scale * values` into the entry for `key`, creating it if needed.
    pub fn accumulate(&mut self, key: RowRef, values: &[T], scale: T) {
        debug_assert_eq!(values.len(), self.dim);
        let entry = self
            .entries
            .entry(key)
            .or_insert_with(|| vec![T::zero(); values.len()]);
        for (e, v) in entry.iter_mut().zip(values) {
            *e = *e + *v * scale;
        }
    }

    /// Inserts `values` verbatim, replacing any existing entry.
    pub fn insert(&mut self, key: RowRef, values: Vec<T>) {
        debug_assert_eq!(values.len(), self.dim);
        self.entries.insert(key, values);
    }

    /// Key-wise vector addition of `other` into `self`.
    pub fn merge_add(&mut self, other: &SparseGrad<T>) {
        for (key, values) in other.iter() {
            match self.entries.get_mut(&key) {
                Some(entry) => {
                    for (e, v) in entry.iter_mut().zip(values) {
                        *e = *e + *v;
                    }
                }
                None => {
                    self.entries.insert(key, values.to_vec());
                }
            }
        }
    }

    pub fn map_values(&mut self, mut f: impl FnMut(T) -> T) {
        for v in self.entries.values_mut().flat_map(|e| e.iter_mut()) {
            *v = f(*v);
        }
    }

    /// Joint L2 norm over every entry.
    pub fn norm_l2(&self) -> T {
        self.entries
            .values()
            .flat_map(|e| e.iter())
            .fold(T::zero(), |acc, v| acc + *v * *v)
            .sqrt()
    }

    pub fn scaled(mut self, factor: T) -> Self {
        self.map_values(|v| v * factor);
        self
    }

    pub fn into_entries(self) -> BTreeMap<RowRef, Vec<T>> {
        self.entries
    }
}

/// Rescales `grad` so its joint L2 norm is at most `c`.
pub fn clip_l2<T: Scalar>(grad: SparseGrad<T>, c: T) -> SparseGrad<T> {
    let norm = grad.norm_l2();
    if norm <= c {
        grad
    } else {
        grad.scaled(c / norm)
    }
}
