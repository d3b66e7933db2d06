use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lipmargin::bounds::{generalization_bound, BoundInput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tempfile::TempDir;

fn lipmargin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lipmargin")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout_json(out: &Output) -> Value {
    assert_eq!(code(out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn blobs_csv(dir: &TempDir, name: &str, n: usize, seed: u64) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = String::from("a,b,label\n");
    for i in 0..n {
        let t = if i % 2 == 0 { 1.0 } else { -1.0 };
        let a: f64 = rng.random_range(-1.0..1.0) + 1.2 * t;
        let b: f64 = rng.random_range(-3.0..3.0);
        text.push_str(&format!("{a},{b},{}\n", if t > 0.0 { 1 } else { 0 }));
    }
    write(dir, name, &text)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn fit_is_deterministic_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = blobs_csv(&dir, "train.csv", 30, 1);
    let (m1, m2) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for m in [&m1, &m2] {
        let out = lipmargin(&["fit", s(&data), "-o", s(m), "--max-iter", "400"]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(std::fs::read(&m1).unwrap(), std::fs::read(&m2).unwrap());
    let model: Value = serde_json::from_str(&std::fs::read_to_string(&m1).unwrap()).unwrap();
    assert_eq!(model["metric"]["p"], 2);
    assert_eq!(model["metric"]["m"].as_array().unwrap().len(), 4);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("a.report.json")).unwrap()).unwrap();
    assert_eq!(report["method"], "LipD");
    assert!(report["solve"]["objective_trace"].as_array().unwrap().len() <= 400);
    if report["converged"] == false {
        assert!(report["warning"].is_string());
    }
}

#[test]
fn predict_reproduces_training_labels() {
    let dir = tempfile::tempdir().unwrap();
    let data = blobs_csv(&dir, "train.csv", 24, 2);
    let model = dir.path().join("m.json");
    assert_eq!(code(&lipmargin(&["fit", s(&data), "-o", s(&model), "--variant", "lipi", "--max-iter", "300"])), 0);
    let out = stdout_json(&lipmargin(&["predict", s(&data), "-m", s(&model)]));
    assert_eq!(out["n"], 24);
    assert_eq!(out["accuracy"].as_f64().unwrap(), 1.0);
    assert_eq!(out["predictions"].as_array().unwrap().len(), 24);
}

#[test]
fn input_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let single = write(&dir, "single.csv", "x,y\n1,1\n2,1\n3,1\n");
    let out = lipmargin(&["fit", s(&single), "-o", s(&dir.path().join("m.json"))]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("both classes"));

    let data = blobs_csv(&dir, "d.csv", 10, 3);
    assert_eq!(code(&lipmargin(&["experiment", s(&data), "--repeats", "1", "--train-fraction", "1.0"])), 2);
    assert_eq!(code(&lipmargin(&["fit", s(&dir.path().join("absent.csv")), "-o", "x.json"])), 2);
    assert_eq!(code(&lipmargin(&["fit", s(&data), "-o", "x.json", "--variant", "svm"])), 2);
    assert_eq!(code(&lipmargin(&["fit", s(&data), "-o", "x.json", "--c", "-1"])), 2);
    assert_eq!(code(&lipmargin(&["no-such-command"])), 2);
}

#[test]
fn margin_report_on_four_points() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(&dir, "four.csv", "x,t\n-3,1\n-1,1\n1,-1\n3,-1\n");
    let out = stdout_json(&lipmargin(&["margin-report", s(&data), "--identity", "--no-standardize"]));
    assert_eq!(out["metric"], "identity");
    assert!((out["global"]["ratio_diam"].as_f64().unwrap() - 1.0 / 9.0).abs() < 1e-15);
    assert!(out["local"].is_null());

    // Standardizing one feature is affine, so the ratios are unchanged.
    let std = stdout_json(&lipmargin(&["margin-report", s(&data)]));
    assert!((std["global"]["ratio_diam"].as_f64().unwrap() - 1.0 / 9.0).abs() < 1e-12);

    let local = stdout_json(&lipmargin(&["margin-report", s(&data), "--no-standardize", "--local", "1,2", "--form", "root"]));
    assert_eq!(local["local"]["n"], 2);
    assert_eq!(local["local"]["ratio_intra"], "inf");
    assert_eq!(local["global"]["form"], "root");
}

#[test]
fn margin_report_singletons_serialize_infinity() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(&dir, "two.csv", "x,t\n0,1\n2,-1\n");
    let out = stdout_json(&lipmargin(&["margin-report", s(&data), "--no-standardize"]));
    assert_eq!(out["global"]["ratio_intra"], "inf");
    assert_eq!(out["global"]["margin"].as_f64().unwrap(), 4.0);
}

#[test]
fn bound_wraps_the_library_exactly() {
    let out = stdout_json(&lipmargin(&["bound", "--n", "5000", "--k", "37", "--surrogate-c", "0.75", "--ddim", "2", "--delta", "0.1"]));
    let lib = generalization_bound(&BoundInput {
        n: 5000,
        k: 37,
        delta: 0.1,
        ddim: 2.0,
        surrogate_c: 0.75,
    })
    .unwrap();
    let r = &out["result"];
    assert_eq!(r["raw"].as_f64().unwrap().to_bits(), lib.raw.to_bits());
    assert_eq!(r["clamped"].as_f64().unwrap().to_bits(), lib.clamped.to_bits());
    assert_eq!(r["surrogate"]["value"].as_f64().unwrap().to_bits(), lib.surrogate.value.to_bits());
    assert_eq!(out["valid"], true);
}

#[test]
fn bound_all_wrong_is_clamped_to_one() {
    let out = stdout_json(&lipmargin(&["bound", "--n", "100", "--k", "100", "--surrogate-c", "0.1"]));
    assert_eq!(out["result"]["clamped"].as_f64().unwrap(), 1.0);
    assert_eq!(out["result"]["vacuous"], true);
}

#[test]
fn bound_condition_not_met_is_informational() {
    let out = stdout_json(&lipmargin(&["bound", "--n", "10", "--surrogate-c", "5", "--ddim", "3"]));
    assert_eq!(out["valid"], false);
    assert!(out["required_n"].as_f64().unwrap() > 10.0);
    assert!(out["result"].is_null());
}

#[test]
fn bound_from_data_orders_surrogate_modes() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..5 {
        let data = blobs_csv(&dir, &format!("d{seed}.csv"), 20, 10 + seed);
        for ddim in ["1", "2.5"] {
            let out = stdout_json(&lipmargin(&["bound", "--data", s(&data), "--ddim", ddim, "--c-mode", "diam"]));
            assert_eq!(out["source"], "margin_report");
            assert_eq!(out["form"], "root");
            let d = &out["fat_dim"];
            assert!(d["diam"].as_f64().unwrap() <= d["intra"].as_f64().unwrap());
        }
    }
    let data = blobs_csv(&dir, "m.csv", 20, 40);
    let model = dir.path().join("m.json");
    assert_eq!(code(&lipmargin(&["fit", s(&data), "-o", s(&model), "--max-iter", "200"])), 0);
    let out = stdout_json(&lipmargin(&["bound", "--data", s(&data), "--model", s(&model), "--squared"]));
    assert_eq!(out["form"], "squared");
    assert_eq!(out["result"]["input"]["n"], 20);
    assert_eq!(out["result"]["input"]["k"], 0);
}

#[test]
fn experiment_writes_csv_and_honours_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = blobs_csv(&dir, "d.csv", 40, 5);
    let config = write(&dir, "run.toml", "repeats = 2\nmax_iter = 150\nvariant = [\"nn\", \"lipi\"]\nseed = 9\n");
    let csv = dir.path().join("out.csv");
    let out = stdout_json(&lipmargin(&["experiment", s(&data), "--config", s(&config), "--repeats", "3", "--csv", s(&csv)]));
    assert_eq!(out["config"]["plan"]["repeats"], 3);
    assert_eq!(out["config"]["plan"]["seed"], 9);
    assert_eq!(out["config"]["solver"]["max_iter"], 150);
    let results = out["results"].as_array().unwrap();
    assert_eq!(results.len(), 2);
    for r in results {
        let acc: Vec<f64> = r["per_split_accuracy"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        assert_eq!(acc.len(), 3);
        let mean = acc.iter().sum::<f64>() / 3.0;
        assert!((mean - r["mean"].as_f64().unwrap()).abs() <= 1e-12);
    }
    assert!(out["metadata"]["timestamp"].is_string());

    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("variant,repeat,accuracy,wall_ms"));
    assert_eq!(lines.clone().count(), 6);
    assert!(lines.next().unwrap().starts_with("NN-Euclidean,0,"));
}

#[test]
fn experiment_stdout_is_reproducible_apart_from_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let data = blobs_csv(&dir, "d.csv", 30, 6);
    let run = || {
        let mut v = stdout_json(&lipmargin(&["experiment", s(&data), "--repeats", "2", "--max-iter", "100"]));
        v.as_object_mut().unwrap().remove("metadata");
        v
    };
    assert_eq!(run(), run());
}

#[test]
fn hidden_oracle_runs_on_small_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = blobs_csv(&dir, "d.csv", 10, 7);
    let out = stdout_json(&lipmargin(&["oracle", s(&data), "--iterations", "500"]));
    assert_eq!(out["variant"], "lipd");
    assert!(out["result"]["objective"].as_f64().unwrap() >= 0.0);
    assert!(!String::from_utf8_lossy(&lipmargin(&["--help"]).stdout).contains("oracle"));
}
