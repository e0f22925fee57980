#![allow(dead_code)]

use lazydp::tracegen::{generate, SkewSpec};
use lazydp::{
    build_model, train, Algorithm, HyperParams, Init, Metrics, MiniBatch, TraceHeader,
    TrainOptions, TrainingTrace, DEFAULT_MEMORY_CAP,
};

pub fn params(rows_e: u64, dim: usize, batch_b: usize, iters_n: u64) -> HyperParams {
    HyperParams {
        clip_c: 1.0,
        noise_mult: 1.0,
        batch_b,
        lr: 0.1,
        iters_n,
        dim,
        rows_e,
        pooling: 1,
        seed: 42,
        ..HyperParams::default()
    }
}

pub fn trace(p: &HyperParams, tables: usize, skew: SkewSpec) -> TrainingTrace {
    generate(p, tables, skew, p.seed ^ 0x5eed).unwrap()
}

/// Trains from a freshly initialized model; returns flattened tables and metrics.
pub fn run(
    p: &HyperParams,
    tables: usize,
    trace: &TrainingTrace,
    opts: TrainOptions,
) -> (Vec<Vec<f64>>, Metrics) {
    let model = build_model::<f64>(
        p,
        tables,
        Init::Uniform { lo: -0.5, hi: 0.5 },
        DEFAULT_MEMORY_CAP,
    )
    .unwrap();
    let out = train(model, trace, p, &opts).unwrap();
    let values = out
        .model
        .tables()
        .iter()
        .map(|t| t.values().to_vec())
        .collect();
    (values, out.metrics)
}

pub fn initial(p: &HyperParams, tables: usize) -> Vec<Vec<f64>> {
    build_model::<f64>(
        p,
        tables,
        Init::Uniform { lo: -0.5, hi: 0.5 },
        DEFAULT_MEMORY_CAP,
    )
    .unwrap()
    .tables()
    .iter()
    .map(|t| t.values().to_vec())
    .collect()
}

pub fn max_rel_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| lazydp::dump::relative_diff(*x, *y))
        .fold(0.0, f64::max)
}

pub fn bitwise_eq(a: &[Vec<f64>], b: &[Vec<f64>]) -> bool {
    a.len() == b.len()
        && a.iter()
            .flatten()
            .zip(b.iter().flatten())
            .all(|(x, y)| x.to_bits() == y.to_bits())
}

pub fn opts(algorithm: Algorithm) -> TrainOptions {
    TrainOptions::new(algorithm)
}

pub fn lazy(ans: bool) -> Algorithm {
    Algorithm::LazyDp { ans }
}

/// Single-table trace from explicit per-iteration lookup lists (B = lists per iteration).
pub fn explicit_trace(rows_e: u64, iterations: &[Vec<Vec<u32>>], targets: f64) -> TrainingTrace {
    let batch_b = iterations[0].len();
    let pooling = iterations[0][0].len();
    let batches = iterations
        .iter()
        .map(|examples| {
            let ex: Vec<(Vec<u32>, f64)> =
                examples.iter().map(|ix| (ix.clone(), targets)).collect();
            MiniBatch::single_table(&ex).unwrap()
        })
        .collect();
    TrainingTrace::new(
        TraceHeader {
            rows_e,
            num_tables: 1,
            pooling,
            batch_b,
            iters_n: iterations.len() as u64,
            seed: 0,
        },
        batches,
    )
    .unwrap()
}
