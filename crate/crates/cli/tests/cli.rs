use owalloc::config::Config;
use std::path::Path;
use std::process::{Command, Output};

fn owalloc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_owalloc"))
        .arg("--config")
        .arg(dir.join("config.toml"))
        .arg("--out-dir")
        .arg(dir.join("out"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = owalloc(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn small_workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = Config::default();
    cfg.room.users = 3;
    cfg.room.ap_grid = [2, 2];
    cfg.surrogate.arch = "dense:8".into();
    cfg.surrogate.epochs = 3;
    cfg.surrogate.batch_size = 8;
    cfg.experiments.seeds = vec![4];
    cfg.experiments.dataset_sizes = vec![20, 40];
    cfg.experiments.sweep_drops = 2;
    std::fs::write(dir.path().join("config.toml"), cfg.to_toml()).unwrap();
    dir
}

#[test]
fn dataset_train_predict_pipeline() {
    let ws = small_workspace();
    let d = ws.path();
    ok(d, &["gen-dataset", "--samples", "40"]);
    let ds = d.join("out/dataset.csv");
    let first = std::fs::read(&ds).unwrap();
    ok(d, &["gen-dataset", "--samples", "40"]);
    assert_eq!(std::fs::read(&ds).unwrap(), first);

    ok(d, &["train", "--dataset", ds.to_str().unwrap()]);
    let model = d.join("out/model.txt");
    assert!(model.exists());
    let history = std::fs::read_to_string(d.join("out/train_history.csv")).unwrap();
    assert_eq!(history.lines().count(), 4);

    let stdout = ok(
        d,
        &[
            "predict",
            "--model",
            model.to_str().unwrap(),
            "--refine",
            "0",
        ],
    );
    assert!(stdout.contains("method surrogate"), "{stdout}");
    assert!(stdout.contains("feasible true"), "{stdout}");
    let sol = std::fs::read_to_string(d.join("out/solution.toml")).unwrap();
    assert!(sol.contains("allocation"));
}

#[test]
fn solve_methods_write_solution_and_trace() {
    let ws = small_workspace();
    let d = ws.path();
    for args in [
        &["solve"][..],
        &["solve", "--update", "subgradient", "--max-iters", "500"],
        &["solve", "--method", "uniform"],
    ] {
        ok(d, args);
        let trace = std::fs::read_to_string(d.join("out/trace.csv")).unwrap();
        assert_eq!(trace.lines().next(), Some("iter,utility,max_violation"));
    }
    let out = owalloc(d, &["solve", "--update", "bogus"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
    let out = owalloc(d, &["solve", "--method", "surrogate"]);
    assert!(!out.status.success());
}

#[test]
fn verify_bia_reports_exact_decoding() {
    let ws = small_workspace();
    let stdout = ok(
        ws.path(),
        &["verify-bia", "--aps", "2", "--users", "3", "--draws", "10"],
    );
    assert!(stdout.contains("supersymbol length 4"), "{stdout}");
    assert!(ws.path().join("out/bia_plan.txt").exists());
}

#[test]
fn experiments_and_report() {
    let ws = small_workspace();
    let d = ws.path();
    ok(d, &["training-curves"]);
    let curves = std::fs::read_to_string(d.join("out/training_curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1 + 2 * 3);
    let model = d.join("out/model_seed4_n40.txt");
    assert!(model.exists());
    ok(d, &["sweep-beamwaist", "--model", model.to_str().unwrap()]);
    ok(d, &["cdf"]);
    let cdf = std::fs::read_to_string(d.join("out/sum_rate_cdf.csv")).unwrap();
    assert_eq!(cdf.lines().count(), 1 + 2 * 100);
    let stdout = ok(d, &["report"]);
    for name in [
        "training_curves.svg",
        "beamwaist_sweep.svg",
        "sum_rate_cdf.svg",
    ] {
        assert!(stdout.contains(name), "{stdout}");
        assert!(d.join("out").join(name).exists());
    }
}

#[test]
fn missing_inputs_fail_with_context() {
    let ws = small_workspace();
    let out = owalloc(ws.path(), &["train", "--dataset", "/nonexistent.csv"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error: reading /nonexistent.csv"), "{err}");
    let out = owalloc(ws.path(), &["report"]);
    assert!(!out.status.success());
}
