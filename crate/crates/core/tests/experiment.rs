use std::path::Path;

use serde_json::json;

use vir_core::experiment::{
    load_config, report, run, run_theory, ExperimentConfig, ExperimentError, RunOptions,
    TheoryConfig,
};

fn small_config(dir: &Path, extra: serde_json::Value) -> ExperimentConfig {
    let mut doc = json!({
        "dataset": {
            "kind": "synthetic",
            "spec": {
                "n": 300, "d": 4, "signal_dims": 2, "lo": 0.0, "hi": 10.0, "num_bins": 10,
                "density": {"family": "exponential-decay", "rate": 0.3},
                "link": {"kind": "linear"}, "noise": 0.5, "heteroscedastic": false, "seed": 0
            },
            "val_per_bin": 5,
            "test_per_bin": 10
        },
        "base": {"epochs": 2, "hidden": [8], "latent_dim": 4, "decay_epochs": [1], "batch_size": 32},
        "variants": [{"variant": "vanilla"}, {"variant": "vir", "name": "vir-small", "overrides": {"lambda": 0.5}}],
        "seeds": [0, 1, 2],
        "output_dir": "out"
    });
    for (k, v) in extra.as_object().unwrap() {
        doc[k] = v.clone();
    }
    let path = dir.join("config.json");
    std::fs::write(&path, doc.to_string()).unwrap();
    load_config(&path).unwrap()
}

fn options(dir: &Path, jobs: usize) -> RunOptions {
    RunOptions {
        jobs: Some(jobs),
        output_dir: Some(dir.to_path_buf()),
        ..RunOptions::default()
    }
}

#[test]
fn sweep_fans_out_and_refuses_to_overwrite() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path(), json!({}));
    let out = tmp.path().join("run");
    let summary = run(&config, &options(&out, 1)).unwrap();
    assert_eq!(summary.cells, 6);
    assert!(summary.failed.is_empty());
    let logs = std::fs::read_dir(out.join("cells"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().join("log.csv").exists())
        .count();
    assert_eq!(logs, 6);

    let merged = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(merged.lines().count(), 7);
    let hash = config.hash(0);
    assert!(merged.lines().skip(1).all(|l| l.starts_with(&hash)));
    for cell in std::fs::read_dir(out.join("cells")).unwrap() {
        let record = std::fs::read_to_string(cell.unwrap().path().join("metrics.json")).unwrap();
        assert!(record.contains(&hash));
    }
    let summary_doc = std::fs::read_to_string(out.join("summary.json")).unwrap();
    assert!(summary_doc.contains(&hash) && summary_doc.contains("\"mae_all\""));

    assert!(matches!(
        run(&config, &options(&out, 1)),
        Err(ExperimentError::Refused(_))
    ));
    let forced = RunOptions {
        force: true,
        ..options(&out, 1)
    };
    run(&config, &forced).unwrap();
    assert_eq!(
        std::fs::read_to_string(out.join("metrics.csv")).unwrap(),
        merged
    );
}

#[test]
fn parallel_and_serial_runs_write_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path(), json!({"seeds": [4, 5]}));
    let a = tmp.path().join("serial");
    let b = tmp.path().join("parallel");
    run(&config, &options(&a, 1)).unwrap();
    run(&config, &options(&b, 3)).unwrap();
    for f in ["metrics.csv", "summary.json"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn seed_offset_changes_results_and_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(
        tmp.path(),
        json!({"seeds": [0], "variants": [{"variant": "vanilla"}]}),
    );
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    run(&config, &options(&a, 1)).unwrap();
    let shifted = RunOptions {
        seed_offset: 7,
        ..options(&b, 1)
    };
    run(&config, &shifted).unwrap();
    let (x, y) = (
        std::fs::read_to_string(a.join("metrics.csv")).unwrap(),
        std::fs::read_to_string(b.join("metrics.csv")).unwrap(),
    );
    assert_ne!(x, y);
    assert!(y.contains(&config.hash(7)));
}

#[test]
fn report_emits_bars_sparsification_and_sweeps() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(
        tmp.path(),
        json!({
            "variants": [{"variant": "vir"}, {"variant": "vanilla"}],
            "seeds": [0, 1],
            "lambda_sweep": [10.0, 1.0, 0.1, 0.01, 0.001],
            "bin_sweep": [5]
        }),
    );
    let out = tmp.path().join("run");
    let summary = run(&config, &options(&out, 0)).unwrap();
    // vir: 2 main + 10 λ + 2 bins; vanilla: 2 main + 2 bins.
    assert_eq!(summary.cells, 18);
    let files = report(&out).unwrap();

    let sparse = std::fs::read_to_string(&files.sparsification).unwrap();
    let lines: Vec<&str> = sparse.lines().collect();
    assert_eq!(lines.len(), 101);
    assert!(lines[0].contains("vir_model") && !lines[0].contains("vanilla"));
    assert!(lines[1].contains(",0.00,") && lines[100].contains(",0.99,"));

    let lambda = std::fs::read_to_string(files.lambda_sweep.as_ref().unwrap()).unwrap();
    let rows: Vec<&str> = lambda.lines().skip(1).collect();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r.contains(",vir,")));
    let bins = std::fs::read_to_string(files.bins_sweep.as_ref().unwrap()).unwrap();
    assert_eq!(bins.lines().count(), 3);

    let bars = std::fs::read_to_string(&files.region_bars).unwrap();
    assert_eq!(bars.lines().count(), 1 + 2 * 4 * 7);

    let again = report(&out).unwrap();
    assert_eq!(
        std::fs::read(&again.sparsification).unwrap(),
        sparse.as_bytes()
    );
}

#[test]
fn report_lists_missing_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    match report(tmp.path()) {
        Err(ExperimentError::Missing(paths)) => assert!(paths[0].ends_with("metrics.csv")),
        other => panic!("expected missing inputs, got {other:?}"),
    }
}

#[test]
fn missing_csv_dataset_is_a_path_error() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("config.json");
    let doc = json!({
        "dataset": {"kind": "csv", "path": "nowhere.csv", "schema": {"label_column": "y"}, "num_bins": 5},
        "variants": [{"variant": "vanilla"}],
        "seeds": [0],
        "output_dir": "out"
    });
    std::fs::write(&path, doc.to_string()).unwrap();
    let config = load_config(&path).unwrap();
    let err = run(&config, &options(&tmp.path().join("out"), 1)).unwrap_err();
    assert!(err.to_string().contains("nowhere.csv"), "{err}");
}

#[test]
fn csv_datasets_run_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let mut text = String::from("a,b,y\n");
    for i in 0..200 {
        let y = (i % 40) as f64 * 0.25 * (1.0 + (i % 3) as f64);
        text.push_str(&format!("{},{},{y}\n", y * 0.5, (i * 7 % 11) as f64));
    }
    std::fs::write(tmp.path().join("data.csv"), text).unwrap();
    let path = tmp.path().join("config.json");
    let doc = json!({
        "dataset": {"kind": "csv", "path": "data.csv", "schema": {"label_column": "y"}, "num_bins": 5,
                    "balanced_test": false},
        "base": {"epochs": 2, "hidden": [4]},
        "variants": [{"variant": "der"}],
        "seeds": [0],
        "calibrate": true,
        "output_dir": "out"
    });
    std::fs::write(&path, doc.to_string()).unwrap();
    let config = load_config(&path).unwrap();
    let out = tmp.path().join("out");
    run(&config, &options(&out, 1)).unwrap();
    let merged = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let header: Vec<&str> = merged.lines().next().unwrap().split(',').collect();
    let row: Vec<&str> = merged.lines().nth(1).unwrap().split(',').collect();
    let col = header
        .iter()
        .position(|h| *h == "nll_all_calibrated")
        .unwrap();
    assert!(row[col].parse::<f64>().is_ok());
}

fn theory(dir: &Path, doc: serde_json::Value) -> TheoryConfig {
    let path = dir.join("theory.json");
    std::fs::write(&path, doc.to_string()).unwrap();
    TheoryConfig::load(&path).unwrap()
}

#[test]
fn theory_reproduces_the_canonical_world() {
    let tmp = tempfile::tempdir().unwrap();
    let config = theory(
        tmp.path(),
        json!({"worlds": [{"kind": "canonical"}], "draws": 20000, "output_dir": "t"}),
    );
    let out = tmp.path().join("t");
    let summary = run_theory(&config, Some(&out), false, None).unwrap();
    let w = &summary.worlds[0];
    assert!(w.bias_within_bound);
    assert!(w.tail.unwrap().within);
    assert!(w.tail.unwrap().ips_mean_z < 3.0);

    let mut r = csv::Reader::from_path(out.join("estimators.csv")).unwrap();
    let header = r.headers().unwrap().clone();
    assert_eq!(
        header.iter().collect::<Vec<_>>(),
        [
            "world_id",
            "estimator",
            "E",
            "Var",
            "bias",
            "bias_bound",
            "variance_term",
            "violations",
            "η"
        ]
    );
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    let vir = rows.iter().find(|r| &r[1] == "vir").unwrap();
    assert!((vir[4].parse::<f64>().unwrap() - 0.10).abs() < 1e-12);
    assert!((vir[5].parse::<f64>().unwrap() - 0.25).abs() < 1e-12);
    assert!(vir[7].parse::<f64>().unwrap() <= 0.05);
    let ips = rows.iter().find(|r| &r[1] == "ips").unwrap();
    assert!(ips[4].parse::<f64>().unwrap().abs() < 1e-12);

    assert!(matches!(
        run_theory(&config, Some(&out), false, None),
        Err(ExperimentError::Refused(_))
    ));
}

#[test]
fn identical_propensities_give_zero_bias_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let config = theory(
        tmp.path(),
        json!({
            "worlds": [
                {"kind": "canonical", "identity_smoothing": true},
                {"kind": "random", "spec": {"bins": [3, 8], "per_bin": [1, 4], "min_propensity": [0.01, 0.05],
                 "delta": 1.0, "losses": "two-point", "kernel": {"family": "gaussian", "bandwidth": 2.0, "radius": 2}},
                 "count": 4, "identity_smoothing": true}
            ],
            "draws": 0,
            "output_dir": "t"
        }),
    );
    let out = tmp.path().join("t");
    run_theory(&config, Some(&out), false, Some(1)).unwrap();
    let mut r = csv::Reader::from_path(out.join("estimators.csv")).unwrap();
    let mut checked = 0;
    for rec in r.records() {
        let rec = rec.unwrap();
        if &rec[1] != "naive" {
            assert_eq!(rec[4].parse::<f64>().unwrap(), 0.0, "{rec:?}");
            assert_eq!(rec[5].parse::<f64>().unwrap(), 0.0);
            checked += 1;
        }
    }
    assert_eq!(checked, 10);
}
