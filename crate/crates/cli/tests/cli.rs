use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_scalelaw"));
    cmd.env_remove("SCALELAW_SEED");
    cmd
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn json_stdout(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", stdout(out)))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn assert_rel(got: f64, want: f64, tol: f64, what: &str) {
    assert!(((got - want) / want).abs() <= tol, "{what}: {got} vs {want}");
}

/// A small dense LR sweep: one model, five batch sizes, six LR multiples.
const SMALL_SWEEP: &str = r#"{
  "models": [{"n_params": 3.5e8, "label": "350M", "base_lr": 3e-4, "base_batch": 5e5, "warmup_steps": 200, "decay_steps": 100000}],
  "batch_sizes": [2.5e5, 5e5, 1e6, 2e6, 4e6],
  "lr_schemes": ["origin"],
  "lr_factors": [0.25, 0.5, 1.0, 2.0, 4.0, 8.0],
  "tokens_per_run": 2e10,
  "cadence": {"kind": "log_spaced", "value": 100}
}"#;

#[test]
fn tradeoff_prints_the_reference_grid() {
    let out = run(&["tradeoff", "--gamma", "1"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().map(|v| v.parse().unwrap()).collect())
        .collect();
    let want = [
        [0.1, 1.1, 11.0],
        [0.5, 1.5, 3.0],
        [1.0, 2.0, 2.0],
        [2.0, 3.0, 1.5],
        [5.0, 6.0, 1.2],
        [10.0, 11.0, 1.1],
        [100.0, 101.0, 1.01],
    ];
    assert_eq!(rows.len(), want.len());
    for (row, w) in rows.iter().zip(want) {
        for (g, w) in row.iter().zip(w) {
            assert!((g - w).abs() < 1e-9 * w, "{text}");
        }
    }
}

#[test]
fn tradeoff_csv_and_json_agree() {
    let csv = stdout(&run(&["tradeoff", "--gamma", "2", "--csv"]));
    let json = json_stdout(&run(&["--json", "tradeoff", "--gamma", "2"]));
    let rows = json["rows"].as_array().unwrap();
    assert_eq!(csv.lines().count(), rows.len() + 1);
    assert_eq!(rows.len(), 7);
}

#[test]
fn tradeoff_rejects_a_non_positive_gamma() {
    let out = run(&["tradeoff", "--gamma", "-1"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn compute_advice_from_published_laws() {
    let laws = data("published.json");
    let out = run(&["--json", "advise", "--compute", "8.16e21", "--laws", p(&laws)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rec = &json_stdout(&out)["recommendation"];
    assert_rel(rec["N"].as_f64().unwrap(), 4.36e9, 0.01, "N");
    assert_rel(rec["D"].as_f64().unwrap(), 3.1178e11, 0.01, "D");
    assert_rel(rec["B"].as_f64().unwrap(), 1.10e6, 0.01, "B");
    assert!(rec["provenance"].as_object().unwrap().contains_key("N"));

    let text = stdout(&run(&["advise", "--compute", "8.16e21", "--laws", p(&laws)]));
    assert!(text.contains("4.36B"), "{text}");
}

#[test]
fn data_and_compression_advice_from_published_laws() {
    let laws = data("published.json");
    let out = run(&["--json", "advise", "--data", "1e12", "--laws", p(&laws)]);
    assert_eq!(code(&out), 0);
    assert_rel(json_stdout(&out)["recommendation"]["B"].as_f64().unwrap(), 4.7e6, 0.02, "B(1e12)");

    let out = run(&[
        "--json", "advise", "--compress", "2e12", "--reference-n", "7e10", "--reference-d", "1.4e12", "--laws", p(&laws),
    ]);
    assert_eq!(code(&out), 0);
    let c = &json_stdout(&out)["compression"];
    assert!(c["n_small"].as_f64().unwrap() < 7e10);
    assert!(c["inference_ratio"].as_f64().unwrap() > 1.0);
}

#[test]
fn missing_run_file_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["fit-law", "--runs", "missing.jsonl", "--out", p(&dir.path().join("laws.json"))]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.jsonl"));
    assert!(!dir.path().join("laws.json").exists());

    let out = run(&["--json", "fit-law", "--runs", "missing.jsonl", "--out", p(&dir.path().join("laws.json"))]);
    assert_eq!(code(&out), 1);
    let err = json_stdout(&out);
    assert_eq!(err["status"], "error");
    assert_eq!(err["exit_code"], 1);
}

#[test]
fn usage_errors_exit_one() {
    let laws = data("published.json");
    let both = run(&["advise", "--compute", "1e21", "--data", "1e11", "--laws", p(&laws)]);
    assert_eq!(code(&both), 1);
    let none = run(&["advise", "--laws", p(&laws)]);
    assert_eq!(code(&none), 1);
    assert_eq!(code(&run(&["no-such-verb"])), 1);
    assert_eq!(code(&run(&["tradeoff", "--no-such-flag"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["advise", "--help"])), 0);
}

#[test]
fn every_flag_has_help_text() {
    for verb in [
        "ingest", "simulate", "fit-law", "frontier", "fit-bopt", "fit-lr", "tradeoff", "advise", "export-plot",
    ] {
        let help = stdout(&run(&[verb, "--help"]));
        let lines: Vec<&str> = help.lines().collect();
        for (i, line) in lines.iter().enumerate() {
            let t = line.trim_start();
            if !(t.starts_with("--") || t.starts_with("-h,")) {
                continue;
            }
            let next = lines.get(i + 1).map_or("", |l| l.trim());
            let inline = t.split("  ").skip(1).any(|s| !s.trim().is_empty());
            assert!(inline || !next.is_empty() && !next.starts_with('-'), "{verb}: {t} is undocumented");
        }
    }
}

#[test]
fn simulate_is_deterministic_and_honours_the_seed_variable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, SMALL_SWEEP).unwrap();
    let sim = |out: &Path, seed: Option<&str>, env: Option<&str>| {
        let mut cmd = bin();
        cmd.args(["simulate", "--config", p(&cfg), "--out", p(out)]);
        if let Some(s) = seed {
            cmd.args(["--seed", s]);
        }
        if let Some(e) = env {
            cmd.env("SCALELAW_SEED", e);
        }
        let o = cmd.output().unwrap();
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(out).unwrap()
    };
    let a = sim(&dir.path().join("a.jsonl"), Some("5"), None);
    let b = sim(&dir.path().join("b.jsonl"), Some("5"), None);
    let c = sim(&dir.path().join("c.jsonl"), Some("6"), None);
    let d = sim(&dir.path().join("d.jsonl"), None, Some("5"));
    let e = sim(&dir.path().join("e.jsonl"), Some("6"), Some("5"));
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a, d, "SCALELAW_SEED replaces the ground-truth seed");
    assert_eq!(c, e, "--seed wins over SCALELAW_SEED");

    let mut bad = bin();
    bad.args(["simulate", "--config", p(&cfg), "--out", p(&dir.path().join("f.jsonl"))]);
    bad.env("SCALELAW_SEED", "not-a-number");
    assert_eq!(code(&bad.output().unwrap()), 1);
}

#[test]
fn emitted_config_reproduces_the_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, SMALL_SWEEP).unwrap();
    let first = dir.path().join("first.jsonl");
    let o = run(&["simulate", "--config", p(&cfg), "--seed", "9", "--out", p(&first), "--emit-config", p(dir.path())]);
    assert_eq!(code(&o), 0);
    let second = dir.path().join("second.jsonl");
    let o = run(&[
        "simulate",
        "--config",
        p(&dir.path().join("config.json")),
        "--truth",
        p(&dir.path().join("truth.json")),
        "--out",
        p(&second),
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(first).unwrap(), fs::read(second).unwrap());
}

#[test]
fn lr_sweep_fits_and_exports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, SMALL_SWEEP).unwrap();
    let runs = dir.path().join("runs.jsonl");
    assert_eq!(code(&run(&["simulate", "--config", p(&cfg), "--seed", "3", "--out", p(&runs)])), 0);

    let out = run(&["--json", "fit-lr", "--runs", p(&runs), "--out", p(&dir.path().join("lr.json"))]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = json_stdout(&out);
    let gamma = report["lr_law"]["gamma"].as_f64().expect("gamma fitted");
    assert!(gamma > 0.0 && gamma < 1.5, "gamma = {gamma}");

    for (kind, header) in [("lr-surface", None), ("lr-opt", Some("B,lr_opt")), ("curves", Some("run_id,"))] {
        let csv = dir.path().join(format!("{kind}.csv"));
        let o = run(&["export-plot", "--kind", kind, "--runs", p(&runs), "--out", p(&csv)]);
        assert_eq!(code(&o), 0, "{kind}: {}", String::from_utf8_lossy(&o.stderr));
        let text = fs::read_to_string(&csv).unwrap();
        assert!(text.lines().count() > 2, "{kind}");
        if let Some(h) = header {
            assert!(text.starts_with(h), "{kind}: {}", text.lines().next().unwrap());
        }
    }

    let missing = run(&["fit-lr", "--runs", p(&runs), "--model", "1e9", "--out", p(&dir.path().join("x.json"))]);
    assert_eq!(code(&missing), 1);
}

#[test]
fn ingest_merges_and_rejects_duplicate_ids() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, SMALL_SWEEP).unwrap();
    let runs = dir.path().join("runs.jsonl");
    assert_eq!(code(&run(&["simulate", "--config", p(&cfg), "--seed", "1", "--out", p(&runs)])), 0);

    let text = fs::read_to_string(&runs).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let (head, tail) = lines.split_at(lines.len() / 2);
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    fs::write(&a, head.join("\n") + "\n").unwrap();
    fs::write(&b, tail.join("\n") + "\n").unwrap();

    let merged = dir.path().join("merged.jsonl");
    let out = run(&["--json", "ingest", "--runs", p(&a), p(&b), "--out", p(&merged)]);
    assert_eq!(code(&out), 0);
    assert_eq!(json_stdout(&out)["runs"], lines.len());
    assert_eq!(fs::read_to_string(&merged).unwrap(), text);

    let out = run(&["ingest", "--runs", p(&a), p(&a), "--out", p(&dir.path().join("dup.jsonl"))]);
    assert_eq!(code(&out), 1);
    assert!(!dir.path().join("dup.jsonl").exists());

    let broken = dir.path().join("broken.jsonl");
    fs::write(&broken, "{\"run_id\": 3}\n").unwrap();
    assert_eq!(code(&run(&["ingest", "--runs", p(&broken), "--out", p(&merged)])), 1);
    assert_eq!(fs::read_to_string(&merged).unwrap(), text, "a failed command leaves earlier output intact");
}

#[test]
fn reference_sweep_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("runs.jsonl");
    assert_eq!(code(&run(&["simulate", "--seed", "20240501", "--out", p(&runs)])), 0);

    let laws = dir.path().join("laws.json");
    let out = run(&["--json", "fit-law", "--runs", p(&runs), "--out", p(&laws)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = json_stdout(&out);
    assert!(report["r_squared"].as_f64().unwrap() > 0.99);
    let warnings = report["warnings"].as_array().unwrap();
    assert!(warnings.iter().any(|w| w.as_str().unwrap().contains("lr law")), "the reference sweep has no dense LR grid");

    let again = dir.path().join("laws2.json");
    assert_eq!(code(&run(&["fit-law", "--runs", p(&runs), "--out", p(&again)])), 0);
    assert_eq!(fs::read(&laws).unwrap(), fs::read(&again).unwrap());

    let rec = dir.path().join("rec.json");
    let out = run(&["advise", "--compute", "1e21", "--laws", p(&laws), "--out", p(&rec)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rec: Value = serde_json::from_str(&fs::read_to_string(&rec).unwrap()).unwrap();
    assert!(rec["N"].as_f64().unwrap() > 1e8);
    let out = run(&["advise", "--data", "1e11", "--laws", p(&laws)]);
    assert_eq!(code(&out), 0);

    let fr = dir.path().join("frontier.json");
    assert_eq!(code(&run(&["frontier", "--runs", p(&runs), "--out", p(&fr)])), 0);
    let fr: Value = serde_json::from_str(&fs::read_to_string(&fr).unwrap()).unwrap();
    let (a, b) = (fr["report"]["n_opt"]["p"].as_f64().unwrap(), fr["report"]["d_opt"]["p"].as_f64().unwrap());
    assert_eq!(a + b, 1.0);

    let bo = dir.path().join("bopt.json");
    let out = run(&["fit-bopt", "--runs", p(&runs), "--out", p(&bo)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    for kind in ["envelope", "contours", "vertices"] {
        let csv = dir.path().join(format!("{kind}.csv"));
        let o = run(&["export-plot", "--kind", kind, "--runs", p(&runs), "--out", p(&csv)]);
        assert_eq!(code(&o), 0, "{kind}");
        assert!(fs::read_to_string(&csv).unwrap().lines().count() > 5, "{kind}");
    }

    // The reference sweep ties LR to batch size, so no 3x3 block exists.
    let out = run(&["fit-lr", "--runs", p(&runs), "--out", p(&dir.path().join("lr.json"))]);
    assert_eq!(code(&out), 1);
}

#[test]
fn outputs_leave_no_temporary_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rec.json");
    let o = run(&["advise", "--compute", "1e22", "--laws", p(&data("published.json")), "--out", p(&out)]);
    assert_eq!(code(&o), 0);
    let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, vec![std::ffi::OsString::from("rec.json")]);

    let o = run(&["advise", "--compute", "1e22", "--laws", p(&data("published.json")), "--out", "/nonexistent/dir/rec.json"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn degenerate_losses_are_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        SMALL_SWEEP
            .replace(r#""models": [{"n_params": 3.5e8"#, r#""models": [{"n_params": 1.25e8, "label": "125M", "base_lr": 6e-4, "base_batch": 5e5, "warmup_steps": 200, "decay_steps": 100000}, {"n_params": 3.5e8"#)
            .replace(r#"{"n_params": 3.5e8, "label": "350M", "base_lr": 3e-4, "base_batch": 5e5, "warmup_steps": 200, "decay_steps": 100000}]"#, r#"{"n_params": 3.5e8, "label": "350M", "base_lr": 3e-4, "base_batch": 5e5, "warmup_steps": 200, "decay_steps": 100000}, {"n_params": 7.6e8, "label": "760M", "base_lr": 2.5e-4, "base_batch": 5e5, "warmup_steps": 200, "decay_steps": 100000}]"#),
    )
    .unwrap();
    let runs = dir.path().join("runs.jsonl");
    assert_eq!(code(&run(&["simulate", "--config", p(&cfg), "--seed", "1", "--out", p(&runs)])), 0);

    // Every run reports the same constant loss.
    let flat: String = fs::read_to_string(&runs)
        .unwrap()
        .lines()
        .map(|l| {
            let mut r: Value = serde_json::from_str(l).unwrap();
            for pt in r["points"].as_array_mut().unwrap() {
                pt[2] = Value::from(3.0);
            }
            r["diverged"] = Value::Bool(false);
            serde_json::to_string(&r).unwrap() + "\n"
        })
        .collect();
    fs::write(&runs, flat).unwrap();

    let laws = dir.path().join("laws.json");
    let out = run(&["--json", "fit-law", "--runs", p(&runs), "--out", p(&laws)]);
    assert_eq!(code(&out), 2, "{}", stdout(&out));
    assert_eq!(json_stdout(&out)["exit_code"], 2);
    assert!(!laws.exists());
}
