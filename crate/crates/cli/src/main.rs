mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use lazydp::dump::{compare, TableDump};
use lazydp::instrument::{write_report, ReportContext, ReportFormat};
use lazydp::stats::ans_check;
use lazydp::trace_io::{load_trace, save_trace};
use lazydp::tracegen::{generate, SkewSpec};
use lazydp::{
    build_model, train, Algorithm, Metrics, Precision, Scalar, TrainOptions, TrainingTrace,
};
use serde_json::{json, Value};

use config::{parse_list, ExperimentConfig, KEYS};

#[derive(Parser)]
#[command(
    name = "lazydp",
    version,
    about = "Train sparse embedding tables under DP-SGD variants and compare them"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic training trace.
    Gen {
        #[command(flatten)]
        config: ConfigArgs,
        /// Overwrite an existing trace file.
        #[arg(long)]
        force: bool,
    },
    /// Train on a trace and write a metrics report.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Compare two table dumps element-wise.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Largest acceptable relative difference.
        #[arg(long, default_value_t = 1e-9)]
        rel_tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check aggregated noise against summed per-step noise.
    Stats {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run desk-scale sweeps over table size, pooling and skew.
    Bench {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        sweep: SweepArgs,
    },
}

/// Flags mirror config keys (`--rows-e` sets `rows_e`) and override `--config`.
#[derive(Args, Default)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Rows per embedding table.
    #[arg(long)]
    rows_e: Option<String>,
    #[arg(long)]
    num_tables: Option<String>,
    /// Embedding width.
    #[arg(long)]
    dim: Option<String>,
    /// Lookups per table per example.
    #[arg(long)]
    pooling: Option<String>,
    /// Examples per mini-batch.
    #[arg(long)]
    batch_b: Option<String>,
    /// Training iterations.
    #[arg(long)]
    iters_n: Option<String>,
    /// Per-example L2 clipping bound.
    #[arg(long)]
    clip_c: Option<String>,
    /// Noise multiplier.
    #[arg(long)]
    noise_mult: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    /// double or single.
    #[arg(long)]
    precision: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// sgd, dense, lazydp, lazydp-noans or eana.
    #[arg(long)]
    algorithm: Option<String>,
    /// uniform, zipf:<alpha>, skew:low|medium|high or hotset:<fraction>:<mass>.
    #[arg(long)]
    skew: Option<String>,
    /// zeros or uniform:<lo>:<hi>.
    #[arg(long)]
    init: Option<String>,
    /// Trace file path.
    #[arg(long)]
    trace: Option<String>,
    /// Report path (stdout when absent).
    #[arg(long)]
    out: Option<String>,
    /// json or csv.
    #[arg(long)]
    format: Option<String>,
    /// Write final tables here in double precision.
    #[arg(long)]
    dump: Option<String>,
    /// on/off: flush pending lazy noise after the last iteration.
    #[arg(long)]
    finalize: Option<String>,
    /// on/off: clip per-example gradients under sgd.
    #[arg(long)]
    clip_sgd: Option<String>,
    /// Largest table allocation in bytes.
    #[arg(long)]
    memory_cap: Option<String>,
    /// Worker threads.
    #[arg(long)]
    threads: Option<String>,
    /// Comma-separated delays checked by `stats`.
    #[arg(long)]
    delays: Option<String>,
    /// Samples per delay for `stats`.
    #[arg(long)]
    samples: Option<String>,
    /// Significance level for `stats`.
    #[arg(long)]
    alpha: Option<String>,
}

impl ConfigArgs {
    fn overrides(&self) -> [(&'static str, &Option<String>); 25] {
        [
            ("rows_e", &self.rows_e),
            ("num_tables", &self.num_tables),
            ("dim", &self.dim),
            ("pooling", &self.pooling),
            ("batch_b", &self.batch_b),
            ("iters_n", &self.iters_n),
            ("clip_c", &self.clip_c),
            ("noise_mult", &self.noise_mult),
            ("lr", &self.lr),
            ("precision", &self.precision),
            ("seed", &self.seed),
            ("algorithm", &self.algorithm),
            ("skew", &self.skew),
            ("init", &self.init),
            ("trace", &self.trace),
            ("out", &self.out),
            ("format", &self.format),
            ("dump", &self.dump),
            ("finalize", &self.finalize),
            ("clip_sgd", &self.clip_sgd),
            ("memory_cap", &self.memory_cap),
            ("threads", &self.threads),
            ("delays", &self.delays),
            ("samples", &self.samples),
            ("alpha", &self.alpha),
        ]
    }

    /// Defaults, then `base` overrides, then the config file, then flags.
    fn resolve(&self, base: &[(&str, &str)]) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        for (k, v) in base {
            cfg.set(k, v)?;
        }
        if let Some(path) = &self.config {
            cfg.load_file(path)?;
        }
        for (key, value) in self.overrides() {
            if let Some(v) = value {
                cfg.set(key, v)
                    .with_context(|| format!("flag --{}", key.replace('_', "-")))?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Sweep {
    Size,
    Pooling,
    Skew,
    All,
}

#[derive(Args)]
struct SweepArgs {
    /// Which axis to sweep.
    #[arg(long, value_enum, default_value = "size")]
    sweep: Sweep,
    /// Table sizes for the size sweep.
    #[arg(long, default_value = "1e4,1e5,1e6,1e7")]
    sizes: String,
    /// Pooling values for the pooling sweep.
    #[arg(long, default_value = "1,10,20,30")]
    poolings: String,
    /// Skew presets for the skew sweep.
    #[arg(long, default_value = "uniform,skew:low,skew:medium,skew:high")]
    skews: String,
    /// Algorithms timed at every point.
    #[arg(long, default_value = "dense,lazydp")]
    algorithms: String,
    /// Table size held fixed in the pooling and skew sweeps.
    #[arg(long, default_value = "1e6")]
    base_rows: String,
}

/// Bench defaults: production-like batch and width, scaled to a desktop.
const DESK_SCALE: &[(&str, &str)] = &[
    ("batch_b", "2048"),
    ("dim", "64"),
    ("iters_n", "5"),
    ("precision", "single"),
    ("finalize", "off"),
];

/// A failed check, as opposed to a usage or runtime error.
struct CheckFailed;

fn keys_help() -> String {
    let mut text =
        String::from("Config keys (file `key = value`, or the matching --flag) and defaults:\n");
    for (key, default) in KEYS {
        text.push_str(&format!("  {key:<12} {default}\n"));
    }
    text
}

fn main() -> ExitCode {
    let help = keys_help();
    let command = Cli::command().mut_subcommands(|sub| sub.after_long_help(help.clone()));
    let cli = match Cli::from_arg_matches(&command.get_matches()) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(CheckFailed)) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<Option<CheckFailed>> {
    match cli.command {
        Command::Gen { config, force } => cmd_gen(&config.resolve(&[])?, force).map(|_| None),
        Command::Train { config } => cmd_train(&config.resolve(&[])?).map(|_| None),
        Command::Compare { a, b, rel_tol, out } => cmd_compare(&a, &b, rel_tol, out.as_deref()),
        Command::Stats { config } => cmd_stats(&config.resolve(&[])?),
        Command::Bench { config, sweep } => {
            cmd_bench(&config.resolve(DESK_SCALE)?, &sweep).map(|_| None)
        }
    }
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn emit_json(out: Option<&Path>, value: &Value) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    emit(out, &bytes)
}

fn trace_path(cfg: &ExperimentConfig) -> Result<&Path> {
    cfg.trace
        .as_deref()
        .context("no trace path given (set `trace` or pass --trace)")
}

fn cmd_gen(cfg: &ExperimentConfig, force: bool) -> Result<()> {
    let path = trace_path(cfg)?;
    if path.exists() && !force {
        bail!(
            "{} already exists (pass --force to overwrite)",
            path.display()
        );
    }
    let trace = generate(&cfg.params, cfg.num_tables, cfg.skew, cfg.params.seed)?;
    save_trace(&trace, path)?;
    let bytes = std::fs::metadata(path)?.len();
    emit_json(
        cfg.out.as_deref(),
        &json!({ "trace": path.display().to_string(), "bytes": bytes, "config": cfg.to_json() }),
    )
}

fn train_options(cfg: &ExperimentConfig, algorithm: Algorithm) -> TrainOptions {
    TrainOptions::new(algorithm)
        .finalize(cfg.finalize)
        .clip_sgd(cfg.clip_sgd)
        .threads(cfg.threads)
}

struct RunResult {
    metrics: Metrics,
    finalized: bool,
    dump: Option<TableDump>,
}

fn train_as<T: Scalar>(
    cfg: &ExperimentConfig,
    trace: &TrainingTrace,
    algorithm: Algorithm,
    keep_dump: bool,
) -> Result<RunResult> {
    let model = build_model::<T>(&cfg.params, cfg.num_tables, cfg.init, cfg.memory_cap)?;
    let out = train(model, trace, &cfg.params, &train_options(cfg, algorithm))?;
    let dump = if keep_dump {
        Some(TableDump::from_tables(
            out.model.tables(),
            cfg.params.seed,
            cfg.params.iters_n,
        )?)
    } else {
        None
    };
    Ok(RunResult {
        metrics: out.metrics,
        finalized: out.finalized,
        dump,
    })
}

fn train_dispatch(
    cfg: &ExperimentConfig,
    trace: &TrainingTrace,
    algorithm: Algorithm,
    keep_dump: bool,
) -> Result<RunResult> {
    match cfg.params.precision {
        Precision::Double => train_as::<f64>(cfg, trace, algorithm, keep_dump),
        Precision::Single => train_as::<f32>(cfg, trace, algorithm, keep_dump),
    }
}

fn privacy_notes(
    cfg: &ExperimentConfig,
    algorithm: Algorithm,
    finalized: bool,
) -> (bool, Vec<String>) {
    let mut notes = Vec::new();
    let noisy = cfg.params.noise_mult > 0.0 && cfg.params.clip_c > 0.0;
    match algorithm {
        Algorithm::Sgd => notes.push("sgd adds no noise: noise fields are zero".to_string()),
        Algorithm::Eana => notes.push(
            "eana noises only gathered rows: its guarantee is weaker and data dependent"
                .to_string(),
        ),
        Algorithm::LazyDp { .. } if !finalized && cfg.params.iters_n > 0 => notes.push(
            "final model not private: pending noise was not flushed (finalize=off)".to_string(),
        ),
        _ => {}
    }
    if algorithm.is_private() && !noisy {
        notes.push("noise_mult or clip_c is zero: no noise was added".to_string());
    }
    let lazy_ok =
        !matches!(algorithm, Algorithm::LazyDp { .. }) || finalized || cfg.params.iters_n == 0;
    (algorithm.is_private() && noisy && lazy_ok, notes)
}

fn cmd_train(cfg: &ExperimentConfig) -> Result<()> {
    let path = trace_path(cfg)?;
    let trace = load_trace(path).with_context(|| format!("loading trace {}", path.display()))?;
    trace.check_against(&cfg.params, cfg.num_tables)?;
    let start = Instant::now();
    let result = train_dispatch(cfg, &trace, cfg.algorithm, cfg.dump.is_some())?;
    let seconds = start.elapsed().as_secs_f64();
    if let (Some(path), Some(dump)) = (&cfg.dump, &result.dump) {
        dump.save(path)
            .with_context(|| format!("writing dump {}", path.display()))?;
    }
    let (private, mut notes) = privacy_notes(cfg, cfg.algorithm, result.finalized);
    notes.push(format!("end-to-end training time {seconds:.3}s"));
    let ctx = ReportContext {
        config: cfg.to_json(),
        dense_rows_per_iteration: Some(cfg.params.rows_e * cfg.num_tables as u64),
        final_model_private: Some(private),
        notes,
    };
    let mut bytes = Vec::new();
    write_report(&result.metrics, &ctx, cfg.format, &mut bytes)?;
    emit(cfg.out.as_deref(), &bytes)
}

fn cmd_compare(
    a: &Path,
    b: &Path,
    rel_tol: f64,
    out: Option<&Path>,
) -> Result<Option<CheckFailed>> {
    let da = TableDump::load(a).with_context(|| format!("loading {}", a.display()))?;
    let db = TableDump::load(b).with_context(|| format!("loading {}", b.display()))?;
    let diffs = compare(&da, &db)?;
    let worst = diffs
        .iter()
        .map(|d| d.max_relative_diff)
        .fold(0.0, f64::max);
    let within = worst <= rel_tol;
    emit_json(
        out,
        &json!({
            "a": a.display().to_string(),
            "b": b.display().to_string(),
            "rel_tol": rel_tol,
            "tables": diffs,
            "max_relative_diff": worst,
            "within_tolerance": within,
        }),
    )?;
    Ok((!within).then_some(CheckFailed))
}

fn cmd_stats(cfg: &ExperimentConfig) -> Result<Option<CheckFailed>> {
    if cfg.delays.is_empty() || cfg.delays.contains(&0) {
        bail!("delays must be a non-empty list of positive integers");
    }
    if cfg.samples < 2 {
        bail!("samples must be at least 2");
    }
    let variance = cfg.params.per_step_variance();
    let checks: Vec<_> = cfg
        .delays
        .iter()
        .map(|&d| ans_check(cfg.params.seed, d, cfg.samples, variance, cfg.alpha))
        .collect();
    let passed = checks.iter().all(|c| c.passed());
    emit_json(
        cfg.out.as_deref(),
        &json!({
            "config": {
                "seed": cfg.params.seed,
                "clip_c": cfg.params.clip_c,
                "noise_mult": cfg.params.noise_mult,
                "per_step_variance": variance,
                "delays": cfg.delays,
                "samples": cfg.samples,
                "alpha": cfg.alpha,
            },
            "checks": checks,
            "passed": passed,
        }),
    )?;
    Ok((!passed).then_some(CheckFailed))
}

struct BenchPoint {
    sweep: &'static str,
    rows_e: u64,
    pooling: usize,
    skew: SkewSpec,
}

fn bench_points(cfg: &ExperimentConfig, args: &SweepArgs) -> Result<Vec<BenchPoint>> {
    let sizes = parse_list("sizes", &args.sizes, config_count)?;
    let poolings = parse_list("poolings", &args.poolings, config_count)?;
    let skews = parse_list("skews", &args.skews, |_, v| {
        v.parse::<SkewSpec>().map_err(anyhow::Error::msg)
    })?;
    let base_rows = config_count("base_rows", &args.base_rows)?;
    let all = args.sweep == Sweep::All;
    let mut points = Vec::new();
    if all || args.sweep == Sweep::Size {
        points.extend(sizes.iter().map(|&rows_e| BenchPoint {
            sweep: "size",
            rows_e,
            pooling: cfg.params.pooling,
            skew: cfg.skew,
        }));
    }
    if all || args.sweep == Sweep::Pooling {
        points.extend(poolings.iter().map(|&p| BenchPoint {
            sweep: "pooling",
            rows_e: base_rows,
            pooling: p as usize,
            skew: cfg.skew,
        }));
    }
    if all || args.sweep == Sweep::Skew {
        points.extend(skews.iter().map(|&skew| BenchPoint {
            sweep: "skew",
            rows_e: base_rows,
            pooling: cfg.params.pooling,
            skew,
        }));
    }
    Ok(points)
}

fn config_count(key: &str, value: &str) -> Result<u64> {
    let mut probe = ExperimentConfig::default();
    probe
        .set("rows_e", value)
        .with_context(|| format!("in --{}", key.replace('_', "-")))?;
    Ok(probe.params.rows_e)
}

fn cmd_bench(cfg: &ExperimentConfig, args: &SweepArgs) -> Result<()> {
    let algorithms = parse_list("algorithms", &args.algorithms, |_, v| {
        v.parse::<Algorithm>().map_err(anyhow::Error::msg)
    })?;
    let points = bench_points(cfg, args)?;
    // fail on sizing before spending time on the smaller points
    for pt in &points {
        let mut params = cfg.params.clone();
        params.rows_e = pt.rows_e;
        params.check_memory(cfg.num_tables, cfg.memory_cap)?;
    }
    let mut rows = Vec::new();
    for pt in &points {
        let mut point_cfg = cfg.clone();
        point_cfg.params.rows_e = pt.rows_e;
        point_cfg.params.pooling = pt.pooling;
        point_cfg.skew = pt.skew;
        point_cfg.validate()?;
        let trace = generate(&point_cfg.params, cfg.num_tables, pt.skew, cfg.params.seed)?;
        for &alg in &algorithms {
            eprintln!(
                "bench: {} E={} pooling={} skew={} {alg}",
                pt.sweep, pt.rows_e, pt.pooling, pt.skew
            );
            let start = Instant::now();
            let r = train_dispatch(&point_cfg, &trace, alg, false)?;
            let seconds = start.elapsed().as_secs_f64();
            let m = &r.metrics;
            let iters = cfg.params.iters_n.max(1) as f64;
            rows.push(json!({
                "sweep": pt.sweep,
                "rows_e": pt.rows_e,
                "pooling": pt.pooling,
                "skew": pt.skew.to_string(),
                "algorithm": alg.to_string(),
                "seconds": seconds,
                "seconds_per_iteration": seconds / iters,
                "rows_written": m.rows_written,
                "rows_written_per_iteration": m.rows_written as f64 / iters,
                "noise_scalars_sampled": m.noise_scalars_sampled,
                "flop_estimate": m.flop_estimate,
                "noise_flop_share": m.noise_flop_share(),
                "finalized": r.finalized,
            }));
        }
    }
    match cfg.format {
        ReportFormat::Json => emit_json(
            cfg.out.as_deref(),
            &json!({ "config": cfg.to_json(), "results": rows }),
        ),
        ReportFormat::Csv => emit(cfg.out.as_deref(), bench_csv(&rows).as_bytes()),
    }
}

const BENCH_COLUMNS: [&str; 13] = [
    "sweep",
    "rows_e",
    "pooling",
    "skew",
    "algorithm",
    "seconds",
    "seconds_per_iteration",
    "rows_written",
    "rows_written_per_iteration",
    "noise_scalars_sampled",
    "flop_estimate",
    "noise_flop_share",
    "finalized",
];

fn bench_csv(rows: &[Value]) -> String {
    let mut text = BENCH_COLUMNS.join(",");
    text.push('\n');
    for row in rows {
        let cells: Vec<String> = BENCH_COLUMNS
            .iter()
            .map(|c| match &row[*c] {
                Value::String(s) => s.clone(),
                v => v.to_string(),
            })
            .collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    text
}
