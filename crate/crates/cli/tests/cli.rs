use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_eit-cs");
const SMALL_MESH: [&str; 4] = ["--h", "0.2", "--electrodes", "8"];

struct Outcome {
    code: i32,
    stdout: Value,
    stderr: String,
}

fn run(dir: &Path, args: &[&str]) -> Outcome {
    let out = Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("EIT_CS_THREADS")
        .output()
        .unwrap();
    let stdout = String::from_utf8(out.stdout).unwrap();
    Outcome {
        code: out.status.code().unwrap(),
        stdout: serde_json::from_str(&stdout).unwrap_or(Value::Null),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn ok(dir: &Path, args: &[&str]) -> Value {
    let o = run(dir, args);
    assert_eq!(o.code, 0, "{args:?} failed: {}", o.stderr);
    o.stdout
}

fn error_json(o: &Outcome) -> Value {
    serde_json::from_str(o.stderr.trim()).unwrap_or_else(|_| panic!("stderr is not JSON: {}", o.stderr))
}

fn dataset(dir: &Path, name: &str, n: &str, seed: &str) {
    let mut args = vec!["dataset-gen", "--n-samples", n, "--seed", seed, "--out", name];
    args.extend(SMALL_MESH);
    ok(dir, &args);
}

fn files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn dataset_gen_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    dataset(tmp.path(), "a", "10", "7");
    dataset(tmp.path(), "b", "10", "7");
    let (a, b) = (files(&tmp.path().join("a")), files(&tmp.path().join("b")));
    assert!(a.contains_key("manifest.json") && a.contains_key("masks/0009.json"));
    assert!(a == b, "directories differ");
}

#[test]
fn reconstruct_with_a_mask_file() {
    let tmp = tempfile::tempdir().unwrap();
    dataset(tmp.path(), "ds", "3", "1");
    let ds = tmp.path().join("ds");
    let summary = ok(
        &ds,
        &["reconstruct", "--dataset", ".", "--sample", "1", "--variant", "pgm-tv-mo", "--mask", "masks/0001.json", "--lambda", "1e-4", "--max-iters", "30"],
    );
    assert_eq!(summary["config"]["lambda"], 1e-4);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(ds.join("reconstruction/report.json")).unwrap()).unwrap();
    assert_eq!(report["variant"], "pgm-tv-mo");
    assert!(report["objective"].as_array().unwrap().len() >= 2);
    for f in ["report.meta.json", "sigma.csv", "sigma.eitb"] {
        assert!(ds.join("reconstruction").join(f).exists(), "{f} missing");
    }
    let meta: Value = serde_json::from_str(&std::fs::read_to_string(ds.join("reconstruction/report.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["fn"], 0.0);
    assert_eq!(meta["config"]["variant"], "pgm-tv-mo");
}

#[test]
fn thresholded_mask_from_outside_is_accepted() {
    let tmp = tempfile::tempdir().unwrap();
    dataset(tmp.path(), "ds", "1", "3");
    let ds = tmp.path().join("ds");
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(ds.join("manifest.json")).unwrap()).unwrap();
    let n = manifest["n"].as_u64().unwrap() as usize;
    let bits: Vec<u8> = (0..n).map(|i| u8::from(i % 2 == 0)).collect();
    let mask = serde_json::json!({
        "version": 1,
        "mesh_digest": manifest["mesh_digest"],
        "provenance": "thresholded",
        "sigma_th": 0.4,
        "bits": bits,
    });
    std::fs::write(tmp.path().join("pred.json"), mask.to_string()).unwrap();
    ok(
        tmp.path(),
        &["reconstruct", "--dataset", "ds", "--sample", "0", "--variant", "pgm-l1-mo", "--mask", "pred.json", "--max-iters", "5", "--out", "rec"],
    );
    let sigma: Vec<f64> = std::fs::read_to_string(tmp.path().join("rec/sigma.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').next_back().unwrap().parse().unwrap())
        .collect();
    assert_eq!(sigma.len(), n);
    for (i, s) in sigma.iter().enumerate() {
        if i % 2 == 1 {
            assert_eq!(*s, 1.0);
        }
    }
    let o = ok(tmp.path(), &["metrics", "--predicted-mask", "pred.json", "--true-mask", "ds/masks/0000.json"]);
    assert!(o["fn"].as_f64().unwrap() >= 0.0);
}

#[test]
fn cs_sweep_wide_table_has_four_measurement_columns() {
    let tmp = tempfile::tempdir().unwrap();
    ok(
        tmp.path(),
        &["experiment", "cs-sweep", "--m", "16,64,256,1024", "--h", "0.12", "--radii", "0.2,0.3", "--max-iters", "3", "--out", "sw"],
    );
    let wide = std::fs::read_to_string(tmp.path().join("sw/cs_sweep_wide.csv")).unwrap();
    let mut lines = wide.lines();
    assert_eq!(lines.next().unwrap(), "sample,s,m16,m64,m256,m1024");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.split(',').count() == 6));
    for f in ["cs_sweep.csv", "cs_curve.csv", "cs_sweep.svg", "cs_curve.svg", "cs_sweep.meta.json"] {
        assert!(tmp.path().join("sw").join(f).exists(), "{f} missing");
    }
    let long = std::fs::read_to_string(tmp.path().join("sw/cs_sweep.csv")).unwrap();
    assert_eq!(long.lines().next().unwrap(), "sample,s,m,rel_err,psnr,iterations,wall_time_s");
}

#[test]
fn rate_plot_annotation_matches_the_table() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["experiment", "rate", "--max-iters", "20", "--out", "rate"];
    args.extend(SMALL_MESH);
    let summary = ok(tmp.path(), &args);
    let slope = summary["slope"].as_f64().unwrap();
    let svg = std::fs::read_to_string(tmp.path().join("rate/rate.svg")).unwrap();
    assert!(svg.contains(&format!("slope = {slope:.3}")));
    let csv = std::fs::read_to_string(tmp.path().join("rate/rate.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "delta,lambda,error,rel_err,iterations,termination,mu,wall_time_s");
    assert_eq!(csv.lines().count(), 6);
    assert!(svg.contains(csv.trim_end()));
}

#[test]
fn compare_and_lambda_grid_on_a_small_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    dataset(tmp.path(), "ds", "4", "2");
    ok(tmp.path(), &["experiment", "compare", "--dataset", "ds", "--max-iters", "10", "--out", "cmp"]);
    let csv = std::fs::read_to_string(tmp.path().join("cmp/compare.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "sample,variant,lambda,psnr,rel_err,fn,mask_cardinality,iterations,termination,mu,wall_time_s"
    );
    assert_eq!(csv.lines().count(), 1 + 16);
    assert!(tmp.path().join("cmp/compare.svg").exists());

    let summary = ok(
        tmp.path(),
        &["experiment", "lambda-grid", "--dataset", "ds", "--grid", "2e-7", "--max-iters", "5", "--out", "grid"],
    );
    assert_eq!(summary["best_lambda"], 2e-7);
    let grid = std::fs::read_to_string(tmp.path().join("grid/lambda_grid_summary.csv")).unwrap();
    assert_eq!(grid.lines().next().unwrap(), "lambda,mean_psnr");
}

#[test]
fn forward_oracle_and_metrics_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["forward", "--seed", "4", "--noise-level", "1e-3", "--out", "fw"];
    args.extend(SMALL_MESH);
    ok(tmp.path(), &args);
    let csv = std::fs::read_to_string(tmp.path().join("fw/measurements.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "measurement,injection_source,injection_sink,measure_high,measure_low,clean,noisy"
    );
    let mut args = vec!["mesh-gen", "--out", "mesh.json"];
    args.extend(SMALL_MESH);
    ok(tmp.path(), &args);
    let mask = ok(tmp.path(), &["oracle-ideal", "--mesh", "mesh.json", "--sigma", "fw/sigma.csv", "--out", "ideal.json"]);
    assert!(mask["cardinality"].as_u64().unwrap() > 0);
    let m = ok(
        tmp.path(),
        &["metrics", "--truth", "fw/sigma.csv", "--reconstruction", "fw/sigma.csv", "--predicted-mask", "ideal.json", "--true-mask", "ideal.json"],
    );
    assert_eq!(m["rel_err"], 0.0);
    assert_eq!(m["fn"], 0.0);

    ok(
        tmp.path(),
        &["reconstruct", "--mesh", "mesh.json", "--data", "fw/measurements.csv", "--truth", "fw/sigma.csv", "--max-iters", "5", "--out", "rec"],
    );
    assert!(tmp.path().join("rec/report.json").exists());
}

#[test]
fn usage_errors_exit_2_with_json() {
    let tmp = tempfile::tempdir().unwrap();
    for args in [
        vec!["reconstruct", "--bogus"],
        vec!["reconstruct", "--dataset", "x"],
        vec!["reconstruct", "--variant", "pgm-nope", "--data", "d.csv"],
        vec!["experiment"],
    ] {
        let o = run(tmp.path(), &args);
        assert_eq!(o.code, 2, "{args:?}: {}", o.stderr);
        assert_eq!(error_json(&o)["error"]["kind"], "usage", "{args:?}");
    }
}

#[test]
fn runtime_errors_exit_1_with_json() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(tmp.path(), &["reconstruct", "--dataset", "missing", "--sample", "0"]);
    assert_eq!(o.code, 1);
    assert_eq!(error_json(&o)["error"]["kind"], "io");

    dataset(tmp.path(), "ds", "1", "1");
    std::fs::write(tmp.path().join("ds/masks/0000.json"), "{}").unwrap();
    let o = run(tmp.path(), &["reconstruct", "--dataset", "ds", "--sample", "0"]);
    assert_eq!(o.code, 1);
    assert!(error_json(&o)["error"]["message"].as_str().unwrap().contains("0000.json"));
}

#[test]
fn config_files_layer_under_flags() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("c.toml"), "h = 0.25\nelectrodes = 8\ncoverage = 0.4\n").unwrap();
    let s = ok(tmp.path(), &["--config", "c.toml", "mesh-gen", "--coverage", "0.6", "--out", "m.json"]);
    assert_eq!(s["config"]["h"], 0.25);
    assert_eq!(s["config"]["electrodes"], 8);
    assert_eq!(s["config"]["coverage"], 0.6);
    assert!(s["config"].get("out").is_none());

    std::fs::write(tmp.path().join("c.json"), r#"{"n-samples": 2, "seed": 5, "h": 0.3, "electrodes": 8}"#).unwrap();
    let s = ok(tmp.path(), &["dataset-gen", "--config", "c.json", "--out", "ds"]);
    assert_eq!(s["samples"], 2);
    assert_eq!(s["config"]["seed"], 5);
    let resolved: Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("ds/resolved_config.json")).unwrap()).unwrap();
    assert_eq!(resolved["config"]["n_samples"], 2);

    std::fs::write(tmp.path().join("bad.toml"), "lambda = 1e-6\n").unwrap();
    let o = run(tmp.path(), &["--config", "bad.toml", "mesh-gen"]);
    assert_eq!(o.code, 2);
    assert!(error_json(&o)["error"]["message"].as_str().unwrap().contains("lambda"));

    std::fs::write(tmp.path().join("typed.toml"), "electrodes = \"many\"\n").unwrap();
    assert_eq!(run(tmp.path(), &["--config", "typed.toml", "mesh-gen"]).code, 2);
}
