use owalloc::allocator::{sum_rate, Method};
use owalloc::config::Config;
use owalloc::harness::*;
use std::path::PathBuf;

fn small_config() -> Config {
    let mut cfg = Config::default();
    cfg.room.users = 3;
    cfg.room.ap_grid = [2, 2];
    cfg.surrogate.arch = "conv1d:2:3,dense:8".into();
    cfg.surrogate.epochs = 3;
    cfg.surrogate.batch_size = 8;
    cfg.surrogate.learning_rate = 0.01;
    cfg.experiments.seeds = vec![1, 2];
    cfg.experiments.dataset_sizes = vec![20, 40];
    cfg.experiments.sweep_drops = 2;
    cfg.experiments.drops = 100;
    cfg
}

#[test]
fn curves_have_one_row_per_epoch_and_size() {
    let cfg = small_config();
    let curves = run_training_curves_all(&cfg).unwrap();
    assert_eq!(curves.rows.len(), 2 * 2 * 3);
    assert_eq!(curves.runs.len(), 4);
    for seed in [1, 2] {
        for n in [20, 40] {
            let c = curves.curve(seed, n);
            assert_eq!(c.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![1, 2, 3]);
            assert!(curves.model(seed, n).is_some());
        }
    }
    let csv = curves.to_csv();
    assert_eq!(csv.lines().next(), Some(CURVES_HEADER));
    assert_eq!(csv.lines().count(), 13);
    assert_eq!(run_training_curves_all(&cfg).unwrap().to_csv(), csv);
}

#[test]
fn sweep_rows_carry_recomputable_sum_rates() {
    let cfg = small_config();
    let pool = training_pool(&cfg, 1).unwrap();
    let curves = run_training_curves(&cfg, 1, &pool).unwrap();
    let model = curves.model(1, 40).unwrap();
    let sweep = run_beamwaist_sweep(&cfg, 1, Some(model)).unwrap();
    let waists = cfg.experiments.beam_waists_um.len();
    assert_eq!(sweep.points.len(), waists * 2);
    for pt in &sweep.points {
        assert_eq!(pt.results.len(), 3);
        for r in &pt.results {
            let again = sum_rate(&r.solution.allocation, &pt.scenario.problem);
            assert!((again - r.sum_rate).abs() <= 1e-9 * again.abs().max(1.0));
        }
    }
    let csv = sweep.to_csv();
    assert_eq!(csv.lines().next(), Some(SWEEP_HEADER));
    assert_eq!(csv.lines().count(), 1 + waists * 3);
    assert_eq!(sweep.series(Method::Dual).len(), waists);
}

#[test]
fn cdf_has_one_row_per_drop_and_method() {
    let cfg = small_config();
    let cdf = run_cdf_experiment(&cfg, 3, None).unwrap();
    assert_eq!(cdf.methods(), vec![Method::Dual, Method::Uniform]);
    for m in cdf.methods() {
        assert_eq!(cdf.samples(m).len(), 100);
    }
    let csv = cdf.to_csv();
    assert_eq!(csv.lines().next(), Some(CDF_HEADER));
    assert_eq!(csv.lines().count(), 201);
    let mut few = cfg.clone();
    few.experiments.drops = 99;
    assert!(run_cdf_experiment(&few, 3, None).is_err());
}

#[test]
fn report_is_deterministic_and_rejects_empty_input() {
    let dir = tempfile::tempdir().unwrap();
    let csv = "w0_um,method,sum_rate\n10,dual,1.5\n10,uniform,1.0\n20,dual,2.5\n20,uniform,1.2\n";
    let path = write_csv(dir.path(), "beamwaist_sweep.csv", csv).unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let a = emit_report(std::slice::from_ref(&path), &out_a).unwrap();
    let b = emit_report(std::slice::from_ref(&path), &out_b).unwrap();
    assert_eq!(a[0].file_name(), b[0].file_name());
    let svg = std::fs::read(&a[0]).unwrap();
    assert_eq!(svg, std::fs::read(&b[0]).unwrap());
    assert!(String::from_utf8(svg).unwrap().contains("<svg"));

    let empty = write_csv(dir.path(), "empty.csv", "").unwrap();
    assert!(emit_report(&[empty], &out_a).is_err());
    let header_only = write_csv(dir.path(), "header.csv", &format!("{CDF_HEADER}\n")).unwrap();
    assert!(emit_report(&[header_only], &out_a).is_err());
    assert!(emit_report(&[PathBuf::from("/nonexistent/x.csv")], &out_a).is_err());
    assert!(emit_report(&[], &out_a).is_err());
}
