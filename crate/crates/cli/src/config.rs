//! Flat `key = value` experiment configuration.
//!
//! Every key can also be given as a `--kebab-case` flag; flags are applied
//! after the file, so they win. Lines starting with `#` are comments.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use lazydp::instrument::ReportFormat;
use lazydp::tracegen::SkewSpec;
use lazydp::{Algorithm, HyperParams, Init, Precision, DEFAULT_MEMORY_CAP};
use serde_json::{json, Value};

/// Keys accepted in config files, with their defaults as documented in `--help`.
pub const KEYS: &[(&str, &str)] = &[
    ("rows_e", "1000"),
    ("num_tables", "1"),
    ("dim", "16"),
    ("pooling", "1"),
    ("batch_b", "8"),
    ("iters_n", "10"),
    ("clip_c", "1"),
    ("noise_mult", "1"),
    ("lr", "0.1"),
    ("precision", "double"),
    ("seed", "0"),
    ("algorithm", "lazydp"),
    ("skew", "uniform"),
    ("init", "uniform:-0.05:0.05"),
    ("trace", "(none)"),
    ("out", "(stdout)"),
    ("format", "json"),
    ("dump", "(none)"),
    ("finalize", "on"),
    ("clip_sgd", "off"),
    ("memory_cap", "8000000000"),
    ("threads", "1"),
    ("delays", "1,2,3,8,64"),
    ("samples", "100000"),
    ("alpha", "0.01"),
];

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub params: HyperParams,
    pub num_tables: usize,
    pub algorithm: Algorithm,
    pub skew: SkewSpec,
    pub init: Init,
    pub trace: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub format: ReportFormat,
    pub dump: Option<PathBuf>,
    pub finalize: bool,
    pub clip_sgd: bool,
    pub memory_cap: u64,
    pub threads: usize,
    pub delays: Vec<u64>,
    pub samples: usize,
    pub alpha: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            params: HyperParams {
                seed: 0,
                ..HyperParams::default()
            },
            num_tables: 1,
            algorithm: Algorithm::LazyDp { ans: true },
            skew: SkewSpec::Uniform,
            init: Init::Uniform {
                lo: -0.05,
                hi: 0.05,
            },
            trace: None,
            out: None,
            format: ReportFormat::Json,
            dump: None,
            finalize: true,
            clip_sgd: false,
            memory_cap: DEFAULT_MEMORY_CAP,
            threads: 1,
            delays: vec![1, 2, 3, 8, 64],
            samples: 100_000,
            alpha: 0.01,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("invalid value `{value}` for `{key}`: {e}"))
}

/// Integers may be written with `_` separators or in `1e6` form.
fn count(key: &str, value: &str) -> Result<u64> {
    let cleaned = value.replace('_', "");
    if let Ok(v) = cleaned.parse::<u64>() {
        return Ok(v);
    }
    let f: f64 = num(key, &cleaned)?;
    if f >= 0.0 && f.fract() == 0.0 && f <= u64::MAX as f64 {
        Ok(f as u64)
    } else {
        bail!("invalid value `{value}` for `{key}`: expected a non-negative integer")
    }
}

fn switch(key: &str, value: &str) -> Result<bool> {
    match value {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => bail!("invalid value `{value}` for `{key}`: expected on/off"),
    }
}

pub fn parse_init(value: &str) -> Result<Init> {
    let parts: Vec<&str> = value.split(':').collect();
    match parts.as_slice() {
        ["zeros"] => Ok(Init::Zeros),
        ["uniform", lo, hi] => {
            let (lo, hi): (f64, f64) = (num("init", lo)?, num("init", hi)?);
            if lo >= hi || lo.is_nan() || hi.is_nan() {
                bail!("invalid value `{value}` for `init`: need lo < hi");
            }
            Ok(Init::Uniform { lo, hi })
        }
        _ => bail!("invalid value `{value}` for `init`: expected zeros or uniform:<lo>:<hi>"),
    }
}

pub fn parse_list<T>(
    key: &str,
    value: &str,
    item: impl Fn(&str, &str) -> Result<T>,
) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| item(key, s))
        .collect()
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let p = &mut self.params;
        match key {
            "rows_e" => p.rows_e = count(key, value)?,
            "num_tables" => self.num_tables = count(key, value)? as usize,
            "dim" => p.dim = count(key, value)? as usize,
            "pooling" => p.pooling = count(key, value)? as usize,
            "batch_b" => p.batch_b = count(key, value)? as usize,
            "iters_n" => p.iters_n = count(key, value)?,
            "clip_c" => p.clip_c = num(key, value)?,
            "noise_mult" => p.noise_mult = num(key, value)?,
            "lr" => p.lr = num(key, value)?,
            "precision" => p.precision = num::<Precision>(key, value)?,
            "seed" => p.seed = count(key, value)?,
            "algorithm" => self.algorithm = num(key, value)?,
            "skew" => self.skew = num(key, value)?,
            "init" => self.init = parse_init(value)?,
            "trace" => self.trace = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            "format" => self.format = num(key, value)?,
            "dump" => self.dump = Some(PathBuf::from(value)),
            "finalize" => self.finalize = switch(key, value)?,
            "clip_sgd" => self.clip_sgd = switch(key, value)?,
            "memory_cap" => self.memory_cap = count(key, value)?,
            "threads" => self.threads = count(key, value)? as usize,
            "delays" => self.delays = parse_list(key, value, count)?,
            "samples" => self.samples = count(key, value)? as usize,
            "alpha" => self.alpha = num(key, value)?,
            _ => bail!("unknown config key `{key}`"),
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        self.apply_text(&text)
            .with_context(|| format!("in config {}", path.display()))
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value", n + 1))?;
            self.set(key.trim(), value)
                .with_context(|| format!("line {}", n + 1))?;
        }
        Ok(())
    }

    /// Checks everything that does not depend on the subcommand.
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.num_tables == 0 {
            bail!("num_tables must be at least 1");
        }
        if self.threads == 0 {
            bail!("threads must be at least 1");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            bail!("alpha must be in (0, 1), got {}", self.alpha);
        }
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        let p = &self.params;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        json!({
            "rows_e": p.rows_e,
            "num_tables": self.num_tables,
            "dim": p.dim,
            "pooling": p.pooling,
            "batch_b": p.batch_b,
            "iters_n": p.iters_n,
            "clip_c": p.clip_c,
            "noise_mult": p.noise_mult,
            "lr": p.lr,
            "precision": p.precision.as_str(),
            "seed": p.seed,
            "algorithm": self.algorithm.to_string(),
            "skew": self.skew.to_string(),
            "init": match self.init {
                Init::Zeros => "zeros".to_string(),
                Init::Uniform { lo, hi } => format!("uniform:{lo}:{hi}"),
            },
            "trace": path(&self.trace),
            "out": path(&self.out),
            "format": match self.format {
                ReportFormat::Json => "json",
                ReportFormat::Csv => "csv",
            },
            "dump": path(&self.dump),
            "finalize": self.finalize,
            "clip_sgd": self.clip_sgd,
            "memory_cap": self.memory_cap,
            "threads": self.threads,
        })
    }
}
