//! Floating-point element types usable as embedding-table values.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};

/// Storage precision of table values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    Double,
    Single,
}

impl Precision {
    pub fn bytes(self) -> usize {
        match self {
            Precision::Double => 8,
            Precision::Single => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Precision::Double => "double",
            Precision::Single => "single",
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "double" | "f64" => Ok(Precision::Double),
            "single" | "f32" => Ok(Precision::Single),
            other => Err(format!(
                "unknown precision `{other}` (expected double|single)"
            )),
        }
    }
}

/// Element type of an embedding table.
///
/// Besides ordinary float arithmetic, a scalar knows how to turn one
/// 128-bit block of counter-based random bits into standard normal draws.
/// Double precision spends 53 bits per uniform and yields two normals per
/// block; single precision spends 24 bits per uniform and yields four.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
    const PRECISION: Precision;

    /// Normal draws produced from one random block.
    const LANES_PER_BLOCK: usize;

    /// Writes `LANES_PER_BLOCK` standard normal values into `out`.
    fn normals_from_block(block: [u32; 4], out: &mut [Self]);

    fn from_f64_lossy(v: f64) -> Self;

    fn to_f64_lossy(self) -> f64;
}

const TWO_PI_F64: f64 = std::f64::consts::TAU;
const TWO_PI_F32: f32 = std::f32::consts::TAU;

/// Maps 53 random bits onto (0, 1].
#[inline(always)]
fn unit_f64(hi: u32, lo: u32) -> f64 {
    let bits = ((u64::from(hi) << 32) | u64::from(lo)) >> 11;
    (bits + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Maps 24 random bits onto (0, 1].
#[inline(always)]
fn unit_f32(word: u32) -> f32 {
    ((word >> 8) + 1) as f32 * (1.0 / (1u32 << 24) as f32)
}

impl Scalar for f64 {
    const PRECISION: Precision = Precision::Double;
    const LANES_PER_BLOCK: usize = 2;

    #[inline(always)]
    fn normals_from_block(block: [u32; 4], out: &mut [f64]) {
        let u1 = unit_f64(block[0], block[1]);
        let u2 = unit_f64(block[2], block[3]);
        let radius = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (TWO_PI_F64 * u2).sin_cos();
        out[0] = radius * c;
        out[1] = radius * s;
    }

    #[inline(always)]
    fn from_f64_lossy(v: f64) -> Self {
        v
    }

    #[inline(always)]
    fn to_f64_lossy(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    const PRECISION: Precision = Precision::Single;
    const LANES_PER_BLOCK: usize = 4;

    #[inline(always)]
    fn normals_from_block(block: [u32; 4], out: &mut [f32]) {
        for pair in 0..2 {
            let u1 = unit_f32(block[2 * pair]);
            let u2 = unit_f32(block[2 * pair + 1]);
            let radius = (-2.0 * u1.ln()).sqrt();
            let (s, c) = (TWO_PI_F32 * u2).sin_cos();
            out[2 * pair] = radius * c;
            out[2 * pair + 1] = radius * s;
        }
    }

    #[inline(always)]
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }

    #[inline(always)]
    fn to_f64_lossy(self) -> f64 {
        f64::from(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_intervals_exclude_zero_and_include_one() {
        assert!(unit_f64(0, 0) > 0.0);
        assert_eq!(unit_f64(u32::MAX, u32::MAX), 1.0);
        assert!(unit_f32(0) > 0.0);
        assert_eq!(unit_f32(u32::MAX), 1.0);
    }

    #[test]
    fn extreme_blocks_stay_finite() {
        let mut out = [0.0f64; 2];
        f64::normals_from_block([0, 0, 0, 0], &mut out);
        assert!(out.iter().all(|v| v.is_finite()));
        let mut out = [0.0f32; 4];
        f32::normals_from_block([0, 0, u32::MAX, u32::MAX], &mut out);
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn precision_parses() {
        assert_eq!("double".parse::<Precision>().unwrap(), Precision::Double);
        assert_eq!("f32".parse::<Precision>().unwrap(), Precision::Single);
        assert!("half".parse::<Precision>().is_err());
    }
}
