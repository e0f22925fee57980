//! Deterministic Gaussian noise addressed by (seed, table, row, iteration, lane).
//!
//! Every draw is a pure function of its key: a Philox block is computed
//! from the key and turned into normals with Box-Muller. Two algorithms that
//! need "the noise of row r at iteration i" therefore see the same value no
//! matter when, or on which thread, they materialize it.
//!
//! Key layout: the 64-bit Philox key is derived from the seed, the table id
//! and the high half of the iteration; the 128-bit counter holds the block
//! index within the row, the low half of the iteration and the 64-bit row id.

mod philox;

pub use philox::philox4x32_10;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const NOISE_DOMAIN: u64 = 0x6E6F_6973_6530_0001;

/// Full address of one scalar noise draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NoiseKey {
    pub seed: u64,
    pub table_id: u32,
    pub row: u64,
    pub iter: u64,
    pub lane: u32,
}

/// Noise stream of one table under one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseSource {
    pub seed: u64,
    pub table_id: u32,
}

impl NoiseSource {
    pub fn new(seed: u64, table_id: u32) -> Self {
        NoiseSource { seed, table_id }
    }

    #[inline]
    fn philox_key(&self, iter: u64) -> [u32; 2] {
        let k = mix64(
            self.seed ^ mix64(NOISE_DOMAIN ^ (u64::from(self.table_id) << 32) ^ (iter >> 32)),
        );
        [k as u32, (k >> 32) as u32]
    }

    #[inline]
    fn block(&self, key: [u32; 2], row: u64, iter: u64, block: u32) -> [u32; 4] {
        philox4x32_10([block, iter as u32, row as u32, (row >> 32) as u32], key)
    }

    /// Fills `out` with standard normals; `out[j]` is lane `j`.
    pub fn standard_normals<T: Scalar>(&self, row: u64, iter: u64, out: &mut [T]) {
        let key = self.philox_key(iter);
        let lanes = T::LANES_PER_BLOCK;
        let mut chunks = out.chunks_exact_mut(lanes);
        let mut block = 0u32;
        for chunk in &mut chunks {
            T::normals_from_block(self.block(key, row, iter, block), chunk);
            block += 1;
        }
        let rest = chunks.into_remainder();
        if !rest.is_empty() {
            let mut tmp = [T::zero(); 4];
            T::normals_from_block(self.block(key, row, iter, block), &mut tmp);
            rest.copy_from_slice(&tmp[..rest.len()]);
        }
    }

    /// One N(0, variance) draw for a single lane.
    pub fn gaussian<T: Scalar>(&self, row: u64, iter: u64, lane: u32, variance: T) -> T {
        if variance == T::zero() {
            return T::zero();
        }
        let lanes = T::LANES_PER_BLOCK as u32;
        let mut tmp = [T::zero(); 4];
        T::normals_from_block(
            self.block(self.philox_key(iter), row, iter, lane / lanes),
            &mut tmp,
        );
        tmp[(lane % lanes) as usize] * variance.sqrt()
    }

    /// Overwrites `out` with an i.i.d. N(0, variance) vector keyed at (row, iter).
    pub fn fill_noise<T: Scalar>(&self, row: u64, iter: u64, variance: T, out: &mut [T]) {
        if variance == T::zero() {
            out.fill(T::zero());
            return;
        }
        self.standard_normals(row, iter, out);
        let scale = variance.sqrt();
        for v in out.iter_mut() {
            *v = *v * scale;
        }
    }

    pub fn noise_vector<T: Scalar>(&self, row: u64, iter: u64, dim: usize, variance: T) -> Vec<T> {
        let mut out = vec![T::zero(); dim];
        self.fill_noise(row, iter, variance, &mut out);
        out
    }

    /// Writes the sum of the per-iteration noise vectors for iterations
    /// `iter_from..=iter_to` into `out`, summing in iteration order.
    /// `scratch` must have the same length as `out`.
    pub fn fill_summed_noise<T: Scalar>(
        &self,
        row: u64,
        iter_from: u64,
        iter_to: u64,
        variance: T,
        out: &mut [T],
        scratch: &mut [T],
    ) {
        out.fill(T::zero());
        if variance == T::zero() {
            return;
        }
        for iter in iter_from..=iter_to {
            self.fill_noise(row, iter, variance, scratch);
            for (o, s) in out.iter_mut().zip(scratch.iter()) {
                *o = *o + *s;
            }
        }
    }

    pub fn summed_noise<T: Scalar>(
        &self,
        row: u64,
        iter_from: u64,
        iter_to: u64,
        dim: usize,
        variance: T,
    ) -> Vec<T> {
        let mut out = vec![T::zero(); dim];
        let mut scratch = vec![T::zero(); dim];
        self.fill_summed_noise(row, iter_from, iter_to, variance, &mut out, &mut scratch);
        out
    }

    /// One draw standing in for `delay` per-step draws: N(0, delay * variance),
    /// keyed at the iteration where it is materialized.
    pub fn fill_ans_noise<T: Scalar>(
        &self,
        row: u64,
        iter: u64,
        delay: u64,
        variance: T,
        out: &mut [T],
    ) -> Result<()> {
        if delay == 0 {
            return Err(Error::ZeroDelay);
        }
        let total = variance * T::from_u64(delay).expect("delay fits in a float");
        self.fill_noise(row, iter, total, out);
        Ok(())
    }

    pub fn ans_noise<T: Scalar>(
        &self,
        row: u64,
        iter: u64,
        delay: u64,
        dim: usize,
        variance: T,
    ) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); dim];
        self.fill_ans_noise(row, iter, delay, variance, &mut out)?;
        Ok(out)
    }
}

/// One N(0, variance) draw at `key`.
pub fn gaussian<T: Scalar>(key: NoiseKey, variance: T) -> T {
    NoiseSource::new(key.seed, key.table_id).gaussian(key.row, key.iter, key.lane, variance)
}

pub fn noise_vector<T: Scalar>(
    seed: u64,
    table_id: u32,
    row: u64,
    iter: u64,
    dim: usize,
    variance: T,
) -> Vec<T> {
    NoiseSource::new(seed, table_id).noise_vector(row, iter, dim, variance)
}

pub fn summed_noise<T: Scalar>(
    seed: u64,
    table_id: u32,
    row: u64,
    iter_from: u64,
    iter_to: u64,
    dim: usize,
    per_step_variance: T,
) -> Vec<T> {
    NoiseSource::new(seed, table_id).summed_noise(row, iter_from, iter_to, dim, per_step_variance)
}

pub fn ans_noise<T: Scalar>(
    seed: u64,
    table_id: u32,
    row: u64,
    iter: u64,
    delay: u64,
    dim: usize,
    per_step_variance: T,
) -> Result<Vec<T>> {
    NoiseSource::new(seed, table_id).ans_noise(row, iter, delay, dim, per_step_variance)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(row: u64, iter: u64, lane: u32) -> NoiseKey {
        NoiseKey {
            seed: 11,
            table_id: 0,
            row,
            iter,
            lane,
        }
    }

    #[test]
    fn zero_variance_is_exactly_zero() {
        assert_eq!(gaussian(key(1, 1, 0), 0.0f64).to_bits(), 0.0f64.to_bits());
        assert_eq!(noise_vector(1, 0, 5, 2, 3, 0.0f64), vec![0.0; 3]);
        assert_eq!(summed_noise(1, 0, 5, 1, 4, 3, 0.0f64), vec![0.0; 3]);
        assert_eq!(ans_noise(1, 0, 5, 4, 4, 3, 0.0f64).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn deterministic_in_key() {
        assert_eq!(
            gaussian(key(3, 9, 2), 1.0f64),
            gaussian(key(3, 9, 2), 1.0f64)
        );
        assert_eq!(
            noise_vector(7, 1, 2, 3, 2, 1.0f64),
            noise_vector(7, 1, 2, 3, 2, 1.0f64)
        );
        assert_ne!(
            gaussian(key(3, 9, 2), 1.0f64),
            gaussian(key(3, 9, 3), 1.0f64)
        );
    }

    #[test]
    fn scalar_and_vector_paths_agree() {
        for dim in [1usize, 2, 3, 7, 16] {
            let v = noise_vector(11, 0, 42, 5, dim, 2.5f64);
            for (lane, x) in v.iter().enumerate() {
                assert_eq!(
                    x.to_bits(),
                    gaussian(key(42, 5, lane as u32), 2.5f64).to_bits()
                );
            }
            let v = noise_vector(11, 0, 42, 5, dim, 2.5f32);
            for (lane, x) in v.iter().enumerate() {
                assert_eq!(
                    x.to_bits(),
                    gaussian(key(42, 5, lane as u32), 2.5f32).to_bits()
                );
            }
        }
    }

    #[test]
    fn vectors_for_different_rows_tables_iters_differ() {
        let base = noise_vector(1, 0, 10, 4, 2, 1.0f64);
        assert_ne!(base, noise_vector(1, 0, 11, 4, 2, 1.0f64));
        assert_ne!(base, noise_vector(1, 1, 10, 4, 2, 1.0f64));
        assert_ne!(base, noise_vector(1, 0, 10, 5, 2, 1.0f64));
        assert_ne!(base, noise_vector(2, 0, 10, 4, 2, 1.0f64));
        // high bits of the row and iteration participate too
        assert_ne!(base, noise_vector(1, 0, 10 + (1 << 32), 4, 2, 1.0f64));
        assert_ne!(base, noise_vector(1, 0, 10, 4 + (1 << 32), 2, 1.0f64));
    }

    #[test]
    fn single_term_sum_equals_vector() {
        let a = summed_noise(3, 2, 9, 6, 6, 5, 1.7f64);
        let b = noise_vector(3, 2, 9, 6, 5, 1.7f64);
        assert_eq!(a, b);
    }

    #[test]
    fn summed_noise_adds_each_iteration() {
        let sum = summed_noise(3, 0, 9, 2, 4, 3, 1.0f64);
        let mut manual = vec![0.0; 3];
        for it in 2..=4 {
            for (m, x) in manual.iter_mut().zip(noise_vector(3, 0, 9, it, 3, 1.0f64)) {
                *m += x;
            }
        }
        assert_eq!(sum, manual);
    }

    #[test]
    fn ans_with_delay_one_matches_per_step_draw() {
        let a = ans_noise(5, 1, 77, 12, 1, 16, 0.3f64).unwrap();
        assert_eq!(a, noise_vector(5, 1, 77, 12, 16, 0.3f64));
    }

    #[test]
    fn ans_rejects_zero_delay() {
        assert!(matches!(
            ans_noise(5, 1, 77, 12, 0, 16, 0.3f64),
            Err(Error::ZeroDelay)
        ));
    }

    #[test]
    fn ans_scales_standard_draw_by_root_delay() {
        let one = noise_vector(5, 0, 3, 8, 4, 1.0f64);
        let four = ans_noise(5, 0, 3, 8, 4, 4, 1.0f64).unwrap();
        for (a, b) in one.iter().zip(&four) {
            assert_eq!(2.0 * a, *b);
        }
    }
}
