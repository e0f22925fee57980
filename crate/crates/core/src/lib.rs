//! Differentially private training of sparse embedding tables.
//!
//! Dense DP-SGD adds Gaussian noise to every embedding row on every step,
//! which turns a sparse update into a full-table rewrite. The lazy variant
//! implemented here defers each row's noise until just before the row is
//! gathered again (tracked with a per-row HistoryTable and a one-batch
//! lookahead queue) and can replace the `n` deferred draws with a single
//! draw of `n` times the variance. Noise is counter-addressed so the dense
//! and lazy schedules can be checked against each other exactly.
//!
//! Numeric code is generic over [`Scalar`]; [`Table64`], [`Trainer64`] and
//! friends name the double precision instantiations used for equivalence
//! checks, and the `*32` aliases the single precision ones used for
//! throughput runs.

pub mod batch;
pub mod dump;
pub mod error;
pub mod grad;
pub mod history;
pub mod instrument;
pub mod noise;
pub mod params;
pub mod scalar;
pub mod stats;
pub mod table;
pub mod trace_io;
pub mod tracegen;
pub mod trainers;

pub use batch::{MiniBatch, TraceHeader, TrainingTrace};
pub use error::{Error, Result};
pub use grad::{clip_l2, RowRef, SparseGrad};
pub use history::{compute_delays, HistoryTable, InputQueue};
pub use instrument::{Event, Metrics, Stage};
pub use noise::{NoiseKey, NoiseSource};
pub use params::{history_overhead_bytes, queue_overhead_bytes, HyperParams, DEFAULT_MEMORY_CAP};
pub use scalar::{Precision, Scalar};
pub use table::{EmbeddingTable, Init};
pub use tracegen::SkewSpec;
pub use trainers::{build_model, train, Algorithm, ToyModel, TrainOptions, TrainOutcome, Trainer};

pub type Table64 = EmbeddingTable<f64>;
pub type Table32 = EmbeddingTable<f32>;
pub type Model64 = ToyModel<f64>;
pub type Model32 = ToyModel<f32>;
pub type Trainer64 = Trainer<f64>;
pub type Trainer32 = Trainer<f32>;
pub type Grad64 = SparseGrad<f64>;
pub type Grad32 = SparseGrad<f32>;
