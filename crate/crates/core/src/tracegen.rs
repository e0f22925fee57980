//! Synthetic workloads with controllable access skew.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Zipf};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::batch::{MiniBatch, TraceHeader, TrainingTrace};
use crate::error::{Error, Result};
use crate::noise::mix64;
use crate::params::HyperParams;

pub const DEFAULT_ZIPF_ALPHA: f64 = 1.05;

/// Marginal distribution of row accesses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SkewSpec {
    Uniform,
    Zipf {
        alpha: f64,
    },
    /// `hot_mass` of all accesses land uniformly on the first
    /// `hot_fraction` of rows; the rest land uniformly on the others.
    HotSet {
        hot_fraction: f64,
        hot_mass: f64,
    },
}

impl SkewSpec {
    /// 90% of accesses on 36% of rows.
    pub fn low() -> Self {
        SkewSpec::HotSet {
            hot_fraction: 0.36,
            hot_mass: 0.9,
        }
    }

    /// 90% of accesses on 10% of rows.
    pub fn medium() -> Self {
        SkewSpec::HotSet {
            hot_fraction: 0.10,
            hot_mass: 0.9,
        }
    }

    /// 90% of accesses on 0.6% of rows.
    pub fn high() -> Self {
        SkewSpec::HotSet {
            hot_fraction: 0.006,
            hot_mass: 0.9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SkewSpec::Uniform => Ok(()),
            SkewSpec::Zipf { alpha } if alpha.is_finite() && alpha > 0.0 => Ok(()),
            SkewSpec::Zipf { alpha } => Err(Error::param(
                "skew",
                format!("zipf alpha must be positive, got {alpha}"),
            )),
            SkewSpec::HotSet {
                hot_fraction,
                hot_mass,
            } => {
                if !(hot_fraction > 0.0 && hot_fraction <= 1.0) {
                    return Err(Error::param(
                        "skew",
                        format!("hot fraction {hot_fraction} not in (0, 1]"),
                    ));
                }
                if !(hot_mass > 0.0 && hot_mass <= 1.0) {
                    return Err(Error::param(
                        "skew",
                        format!("hot mass {hot_mass} not in (0, 1]"),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Number of hot rows for a table of `rows_e` rows.
    pub fn hot_rows(&self, rows_e: u64) -> Option<u64> {
        match *self {
            SkewSpec::HotSet { hot_fraction, .. } => {
                Some((hot_fraction * rows_e as f64).floor() as u64)
            }
            _ => None,
        }
    }
}

impl std::fmt::Display for SkewSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            SkewSpec::Uniform => f.write_str("uniform"),
            SkewSpec::Zipf { alpha } => write!(f, "zipf:{alpha}"),
            s if s == SkewSpec::low() => f.write_str("skew:low"),
            s if s == SkewSpec::medium() => f.write_str("skew:medium"),
            s if s == SkewSpec::high() => f.write_str("skew:high"),
            SkewSpec::HotSet {
                hot_fraction,
                hot_mass,
            } => write!(f, "hotset:{hot_fraction}:{hot_mass}"),
        }
    }
}

impl std::str::FromStr for SkewSpec {
    type Err = String;

    /// Accepts `uniform`, `zipf`, `zipf:<alpha>`, `skew:low|medium|high`
    /// and `hotset:<fraction>:<mass>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |v: &str| {
            v.parse::<f64>()
                .map_err(|e| format!("bad number `{v}` in skew `{s}`: {e}"))
        };
        let spec = match parts.as_slice() {
            ["uniform"] => SkewSpec::Uniform,
            ["zipf"] => SkewSpec::Zipf {
                alpha: DEFAULT_ZIPF_ALPHA,
            },
            ["zipf", alpha] => SkewSpec::Zipf { alpha: num(alpha)? },
            ["skew", "low"] => SkewSpec::low(),
            ["skew", "medium"] => SkewSpec::medium(),
            ["skew", "high"] => SkewSpec::high(),
            ["hotset", fraction, mass] => SkewSpec::HotSet {
                hot_fraction: num(fraction)?,
                hot_mass: num(mass)?,
            },
            _ => {
                return Err(format!(
                    "unknown skew `{s}` (expected uniform, zipf:<alpha>, skew:low|medium|high, hotset:<fraction>:<mass>)"
                ))
            }
        };
        spec.validate().map_err(|e| e.to_string())?;
        Ok(spec)
    }
}

enum RowSampler {
    Uniform { rows: u64 },
    Zipf(Zipf<f64>),
    HotSet { hot: u64, rows: u64, mass: f64 },
}

impl RowSampler {
    fn new(spec: SkewSpec, rows_e: u64) -> Result<Self> {
        spec.validate()?;
        Ok(match spec {
            SkewSpec::Uniform => RowSampler::Uniform { rows: rows_e },
            SkewSpec::Zipf { alpha } => RowSampler::Zipf(
                Zipf::new(rows_e as f64, alpha).map_err(|e| Error::param("skew", e.to_string()))?,
            ),
            SkewSpec::HotSet { hot_mass, .. } => {
                let hot = spec.hot_rows(rows_e).expect("hot set spec");
                if hot < 1 {
                    return Err(Error::param(
                        "skew",
                        format!("hot set is empty for {rows_e} rows ({spec})"),
                    ));
                }
                RowSampler::HotSet {
                    hot,
                    rows: rows_e,
                    mass: hot_mass,
                }
            }
        })
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> u32 {
        let row = match *self {
            RowSampler::Uniform { rows } => rng.random_range(0..rows),
            // ranks are 1-based; rank 1 maps to row 0
            RowSampler::Zipf(ref z) => z.sample(rng) as u64 - 1,
            RowSampler::HotSet { hot, rows, mass } => {
                if hot == rows || rng.random_bool(mass) {
                    rng.random_range(0..hot)
                } else {
                    rng.random_range(hot..rows)
                }
            }
        };
        row as u32
    }
}

fn iteration_rng(seed: u64, iter: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix64(
        seed ^ mix64(iter.wrapping_add(0x7472_6163_6500_0000)),
    ))
}

/// Builds a trace of `params.iters_n` mini-batches. Each iteration draws from
/// its own seed-derived stream, so the output does not depend on how
/// iterations are scheduled across threads.
pub fn generate(
    params: &HyperParams,
    num_tables: usize,
    skew: SkewSpec,
    seed: u64,
) -> Result<TrainingTrace> {
    params.validate()?;
    if num_tables == 0 {
        return Err(Error::param("num_tables", "must be at least 1"));
    }
    let sampler = RowSampler::new(skew, params.rows_e)?;
    let (b, pooling) = (params.batch_b, params.pooling);
    let batches = (1..=params.iters_n)
        .into_par_iter()
        .map(|iter| {
            let mut rng = iteration_rng(seed, iter);
            let mut indices = Vec::with_capacity(b * num_tables * pooling);
            let mut targets = Vec::with_capacity(b);
            for _ in 0..b {
                for _ in 0..num_tables * pooling {
                    indices.push(sampler.sample(&mut rng));
                }
                targets.push(rng.sample(StandardNormal));
            }
            MiniBatch::new(b, num_tables, pooling, indices, targets)
        })
        .collect::<Result<Vec<_>>>()?;
    let header = TraceHeader {
        rows_e: params.rows_e,
        num_tables,
        pooling,
        batch_b: b,
        iters_n: params.iters_n,
        seed,
    };
    TrainingTrace::new(header, batches)
}

/// Draws `count` rows from `skew` over `rows_e` rows; used to check marginals.
pub fn sample_rows(rows_e: u64, skew: SkewSpec, seed: u64, count: usize) -> Result<Vec<u32>> {
    let sampler = RowSampler::new(skew, rows_e)?;
    let mut rng = iteration_rng(seed, 0);
    Ok((0..count).map(|_| sampler.sample(&mut rng)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(rows_e: u64, iters_n: u64) -> HyperParams {
        HyperParams {
            rows_e,
            iters_n,
            batch_b: 16,
            pooling: 2,
            ..HyperParams::default()
        }
    }

    #[test]
    fn uniform_marginal_over_four_rows() {
        let n = 400_000usize;
        let rows = sample_rows(4, SkewSpec::Uniform, 1, n).unwrap();
        let se = (0.25f64 * 0.75 / n as f64).sqrt();
        for r in 0..4u32 {
            let f = rows.iter().filter(|&&x| x == r).count() as f64 / n as f64;
            assert!((f - 0.25).abs() < 3.0 * se, "row {r}: {f}");
        }
    }

    #[test]
    fn high_skew_hot_mass() {
        let n = 1_000_000usize;
        let rows = sample_rows(100_000, SkewSpec::high(), 2, n).unwrap();
        let hot = SkewSpec::high().hot_rows(100_000).unwrap();
        assert_eq!(hot, 600);
        let frac = rows.iter().filter(|&&r| u64::from(r) < hot).count() as f64 / n as f64;
        assert!((frac - 0.9).abs() < 0.01, "{frac}");
    }

    #[test]
    fn zipf_rank_one_is_most_frequent() {
        let rows = sample_rows(1000, SkewSpec::Zipf { alpha: 1.05 }, 3, 50_000).unwrap();
        let count = |r: u32| rows.iter().filter(|&&x| x == r).count();
        assert!(count(0) > count(1) && count(1) > count(10));
        assert!(rows.iter().all(|&r| r < 1000));
    }

    #[test]
    fn empty_hot_set_is_an_error() {
        assert!(generate(&params(100, 1), 1, SkewSpec::high(), 0).is_err());
        assert!(generate(&params(167, 1), 1, SkewSpec::high(), 0).is_ok());
    }

    #[test]
    fn deterministic_and_valid() {
        let p = params(500, 5);
        let a = generate(&p, 3, SkewSpec::medium(), 9).unwrap();
        let b = generate(&p, 3, SkewSpec::medium(), 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate(&p, 3, SkewSpec::medium(), 10).unwrap());
        assert_eq!(a.batches().len(), 5);
        a.check_against(&p, 3).unwrap();
    }

    #[test]
    fn parsing_and_display_round_trip() {
        for s in [
            "uniform",
            "zipf:1.05",
            "skew:low",
            "skew:medium",
            "skew:high",
            "hotset:0.25:0.5",
        ] {
            let spec: SkewSpec = s.parse().unwrap();
            assert_eq!(spec.to_string(), s);
        }
        assert_eq!(
            "zipf".parse::<SkewSpec>().unwrap(),
            SkewSpec::Zipf { alpha: 1.05 }
        );
        assert!("skew:extreme".parse::<SkewSpec>().is_err());
        assert!("hotset:0:0.5".parse::<SkewSpec>().is_err());
        assert!("zipf:-1".parse::<SkewSpec>().is_err());
    }
}
