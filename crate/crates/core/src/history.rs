//! Lazy-noise bookkeeping: the per-row HistoryTable and the two-slot InputQueue.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Last iteration through which each row has received its noise.
///
/// Entries are 4-byte iteration ids and only rows that are about to be
/// gathered are ever written.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryTable {
    last_noised: Vec<u32>,
}

impl HistoryTable {
    pub fn new(rows: usize) -> Self {
        HistoryTable {
            last_noised: vec![0; rows],
        }
    }

    pub fn len(&self) -> usize {
        self.last_noised.len()
    }

    pub fn is_empty(&self) -> bool {
        self.last_noised.is_empty()
    }

    #[inline]
    pub fn last_noised(&self, row: usize) -> u64 {
        u64::from(self.last_noised[row])
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.last_noised
    }

    /// Iterations of noise still owed to `row` at iteration `iter`.
    #[inline]
    pub fn pending(&self, row: usize, iter: u64) -> u64 {
        iter.saturating_sub(self.last_noised(row))
    }

    /// Marks `row` as noised through `iter`.
    #[inline]
    pub fn mark(&mut self, row: usize, iter: u64) {
        self.last_noised[row] = u32::try_from(iter).expect("iteration ids fit in 32 bits");
    }

    /// Total pending iterations over all rows at `iter`.
    pub fn total_pending(&self, iter: u64) -> u64 {
        self.last_noised
            .iter()
            .map(|&last| iter.saturating_sub(u64::from(last)))
            .sum()
    }
}

/// For each row of the deduplicated `next_accesses`, returns
/// `iter - last_noised[row]` and renews the entry to `iter`.
pub fn compute_delays(
    history: &mut HistoryTable,
    next_accesses: &[u32],
    iter: u64,
) -> Result<Vec<(u32, u64)>> {
    debug_assert!(
        next_accesses.windows(2).all(|w| w[0] < w[1]),
        "next_accesses must be sorted and unique"
    );
    let mut delays = Vec::with_capacity(next_accesses.len());
    for &row in next_accesses {
        let r = row as usize;
        if r >= history.len() {
            return Err(Error::IndexOutOfRange {
                table: 0,
                index: u64::from(row),
                rows: history.len() as u64,
            });
        }
        let delay = iter as i64 - history.last_noised(r) as i64;
        if delay <= 0 {
            return Err(Error::CorruptHistory {
                row: u64::from(row),
                iter,
                delay,
            });
        }
        history.mark(r, iter);
        delays.push((row, delay as u64));
    }
    Ok(delays)
}

/// Two consecutive mini-batches: the one consumed now and the one after it.
#[derive(Debug)]
pub struct InputQueue<B> {
    slots: VecDeque<B>,
}

impl<B> Default for InputQueue<B> {
    fn default() -> Self {
        InputQueue {
            slots: VecDeque::with_capacity(2),
        }
    }
}

impl<B> InputQueue<B> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Enqueues a batch; the queue never holds more than two.
    pub fn push(&mut self, batch: B) {
        assert!(
            self.slots.len() < 2,
            "InputQueue holds at most two mini-batches"
        );
        self.slots.push_back(batch);
    }

    pub fn pop(&mut self) -> Option<B> {
        self.slots.pop_front()
    }

    pub fn head(&self) -> Option<&B> {
        self.slots.front()
    }

    /// The batch after the head, if one was loaded.
    pub fn tail(&self) -> Option<&B> {
        if self.slots.len() == 2 {
            self.slots.back()
        } else {
            None
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}
