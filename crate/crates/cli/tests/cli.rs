use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn lazydp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lazydp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "bad json ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = "rows_e = 1000\ndim = 16\nbatch_b = 8\niters_n = 50\nclip_c = 1\nnoise_mult = 1\nlr = 0.1\nseed = 42\n";

#[test]
fn gen_is_reproducible_and_refuses_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.trace"), dir.path().join("b.trace"));
    for path in [&a, &b] {
        let out = lazydp(&[
            "gen",
            "--rows-e",
            "1e5",
            "--skew",
            "skew:high",
            "--trace",
            s(path),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let trace = lazydp::trace_io::load_trace(&a).unwrap();
    assert_eq!(trace.header().rows_e, 100_000);

    let again = lazydp(&["gen", "--trace", s(&a)]);
    assert_eq!(code(&again), 2);
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    assert_eq!(code(&lazydp(&["gen", "--trace", s(&a), "--force"])), 0);
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t.trace");
    let out = lazydp(&["gen", "--rows-e", "0", "--trace", s(&t)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("rows_e"));

    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "rows_e = 10\ncolour = blue\n").unwrap();
    let out = lazydp(&["gen", "--config", s(&cfg), "--trace", s(&t)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown config key `colour`"));

    assert_eq!(code(&lazydp(&["train"])), 2);
    assert_eq!(code(&lazydp(&["frobnicate"])), 2);
}

#[test]
fn memory_cap_error_names_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t.trace");
    assert_eq!(
        code(&lazydp(&["gen", "--rows-e", "1e6", "--trace", s(&t)])),
        0
    );
    let out = lazydp(&[
        "train",
        "--rows-e",
        "1e6",
        "--algorithm",
        "dense",
        "--trace",
        s(&t),
        "--memory-cap",
        "1000000",
    ]);
    assert_eq!(code(&out), 2);
    // 10^6 rows x 16 x 8 bytes
    assert!(String::from_utf8_lossy(&out.stderr).contains("128000000 bytes"));
}

#[test]
fn trace_mismatch_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t.trace");
    assert_eq!(code(&lazydp(&["gen", "--trace", s(&t)])), 0);
    let out = lazydp(&["train", "--trace", s(&t), "--batch-b", "16"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("trace does not match"));
}

#[test]
fn dense_and_lazy_dumps_compare_as_expected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    let trace = dir.path().join("t.trace");
    std::fs::write(&cfg, format!("{SMALL}trace = {}\n", trace.display())).unwrap();
    assert_eq!(code(&lazydp(&["gen", "--config", s(&cfg)])), 0);

    let mut dumps = Vec::new();
    for alg in ["dense", "lazydp-noans", "lazydp"] {
        let dump = dir.path().join(format!("{alg}.tbl"));
        let out = lazydp(&[
            "train",
            "--config",
            s(&cfg),
            "--algorithm",
            alg,
            "--dump",
            s(&dump),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let report = stdout_json(&out);
        assert_eq!(report["config"]["algorithm"], alg);
        assert_eq!(report["config"]["rows_e"], 1000);
        assert_eq!(report["derived"]["final_model_private"], true);
        dumps.push(dump);
    }

    let same = lazydp(&["compare", s(&dumps[0]), s(&dumps[0])]);
    assert_eq!(code(&same), 0);
    assert_eq!(stdout_json(&same)["max_relative_diff"], 0.0);

    let oracle = lazydp(&["compare", s(&dumps[0]), s(&dumps[1])]);
    assert_eq!(
        code(&oracle),
        0,
        "{}",
        String::from_utf8_lossy(&oracle.stdout)
    );
    assert!(stdout_json(&oracle)["max_relative_diff"].as_f64().unwrap() <= 1e-9);

    let ans = lazydp(&["compare", s(&dumps[0]), s(&dumps[2])]);
    assert_eq!(code(&ans), 1);
    assert!(stdout_json(&ans)["max_relative_diff"].as_f64().unwrap() > 1e-3);
}

#[test]
fn compare_rejects_shape_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let mk = |rows: u64, name: &str| {
        let t = dir.path().join(format!("{name}.trace"));
        let d = dir.path().join(format!("{name}.tbl"));
        let rows = rows.to_string();
        assert_eq!(
            code(&lazydp(&["gen", "--rows-e", &rows, "--trace", s(&t)])),
            0
        );
        let out = lazydp(&[
            "train",
            "--rows-e",
            &rows,
            "--trace",
            s(&t),
            "--dump",
            s(&d),
        ]);
        assert_eq!(code(&out), 0);
        d
    };
    let (a, b) = (mk(100, "a"), mk(200, "b"));
    let out = lazydp(&["compare", s(&a), s(&b)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("shape mismatch"));
}

#[test]
fn report_notes() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t.trace");
    assert_eq!(code(&lazydp(&["gen", "--trace", s(&t)])), 0);

    let out = lazydp(&["train", "--trace", s(&t), "--algorithm", "sgd"]);
    assert_eq!(code(&out), 0);
    let r = stdout_json(&out);
    assert_eq!(r["counters"]["noise_scalars_sampled"], 0);
    assert_eq!(r["derived"]["final_model_private"], false);
    assert!(r["notes"].to_string().contains("sgd adds no noise"));

    let out = lazydp(&[
        "train",
        "--trace",
        s(&t),
        "--algorithm",
        "lazydp",
        "--finalize",
        "off",
    ]);
    assert_eq!(code(&out), 0);
    let r = stdout_json(&out);
    assert_eq!(r["derived"]["final_model_private"], false);
    assert!(r["notes"].to_string().contains("final model not private"));
    assert_eq!(r["config"]["finalize"], false);
}

#[test]
fn csv_report_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t.trace");
    let report = dir.path().join("r.csv");
    assert_eq!(code(&lazydp(&["gen", "--trace", s(&t)])), 0);
    let out = lazydp(&[
        "train",
        "--trace",
        s(&t),
        "--format",
        "csv",
        "--out",
        s(&report),
    ]);
    assert_eq!(code(&out), 0);
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(&report).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines.len() >= 2);
    assert!(lines[0].starts_with("iter,rows_read,rows_written"));
}

#[test]
fn stats_suites() {
    // each KS check rejects a true null 1% of the time; this seed is not one of those
    let out = lazydp(&[
        "stats",
        "--delays",
        "1,3",
        "--samples",
        "1e5",
        "--seed",
        "2",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let r = stdout_json(&out);
    assert_eq!(r["passed"], true);
    let v = r["checks"][1]["ans"]["variance"].as_f64().unwrap();
    assert!((2.95..=3.05).contains(&v), "{v}");

    let out = lazydp(&[
        "stats",
        "--noise-mult",
        "0",
        "--delays",
        "5",
        "--samples",
        "1000",
    ]);
    assert_eq!(code(&out), 0);
    let r = stdout_json(&out);
    assert_eq!(r["checks"][0]["ans"]["variance"], 0.0);
    assert_eq!(r["checks"][0]["summed"]["mean"], 0.0);

    assert_eq!(code(&lazydp(&["stats", "--delays", "0"])), 2);
}

#[test]
fn bench_small_sweep() {
    let out = lazydp(&[
        "bench",
        "--sweep",
        "all",
        "--sizes",
        "1e3,1e4",
        "--poolings",
        "1,10",
        "--skews",
        "uniform,skew:high",
        "--base-rows",
        "1e4",
        "--iters-n",
        "2",
        "--dim",
        "8",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r = stdout_json(&out);
    let results = r["results"].as_array().unwrap();
    assert_eq!(results.len(), 6 * 2);
    assert_eq!(r["config"]["batch_b"], 2048);
    for row in results.iter().filter(|r| r["algorithm"] == "dense") {
        let e = row["rows_e"].as_f64().unwrap();
        assert_eq!(row["rows_written_per_iteration"].as_f64().unwrap(), e);
    }
}
