use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ustpile::cli::{RunConfig, EXIT_CONFIG, EXIT_OK, EXIT_RESOURCE, EXIT_VALIDATION};

fn ustpile(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ustpile"))
        .args(args)
        .env_remove("USTPILE_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn small_ratio_run(dir: &Path, workers: &str) -> Output {
    ustpile(&[
        "first-wave-ratio",
        "--box-radius",
        "4",
        "--reps",
        "300",
        "--seed",
        "7",
        "--workers",
        workers,
        "--output-dir",
        dir.to_str().unwrap(),
    ])
}

#[test]
fn verify_oracle_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("oracle");
    let o = ustpile(&["verify-oracle", "--output-dir", out.to_str().unwrap()]);
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&out);
    assert_eq!(m["status"], "complete");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
}

#[test]
fn zero_reps_is_a_config_error_without_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("alpha");
    let o = ustpile(&["alpha", "--reps", "0", "--output-dir", out.to_str().unwrap()]);
    assert_eq!(code(&o), EXIT_CONFIG);
    assert!(String::from_utf8_lossy(&o.stderr).contains("reps"));
    assert!(!out.exists());
}

#[test]
fn config_file_errors_name_the_problem() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty.toml");
    fs::write(&empty, "").unwrap();
    let o = ustpile(&["run", "--config", empty.to_str().unwrap()]);
    assert_eq!(code(&o), EXIT_CONFIG);
    assert!(String::from_utf8_lossy(&o.stderr).contains("experiment"));

    let unknown = tmp.path().join("unknown.toml");
    fs::write(&unknown, "experiment = \"alpha\"\nbogus_key = 3\n").unwrap();
    let o = ustpile(&["run", "--config", unknown.to_str().unwrap()]);
    assert_eq!(code(&o), EXIT_CONFIG);
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus_key"));

    let o = ustpile(&["alpha", "--no-such-flag"]);
    assert_eq!(code(&o), EXIT_CONFIG);
}

#[test]
fn config_file_runs_and_flags_override() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("dhar.toml");
    let out = tmp.path().join("dhar");
    fs::write(
        &cfg,
        format!(
            "experiment = \"dhar-check\"\nbox_radius = 2\nreps = 50\nseed = 1\noutput_dir = \"{}\"\n",
            out.display()
        ),
    )
    .unwrap();
    let o = ustpile(&["run", "--config", cfg.to_str().unwrap(), "--reps", "4000"]);
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&out);
    assert_eq!(m["config"]["reps"], 4000);
    assert_eq!(m["config"]["box_radius"], 2);
    let table = fs::read_to_string(out.join("dhar.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("v,x,reps,mean,stderr,green,z"));
    for l in lines {
        assert_eq!(l.split(',').count(), 7, "{l}");
    }
}

#[test]
fn runs_are_reproducible_and_rerunnable() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    assert_eq!(code(&small_ratio_run(&a, "1")), EXIT_OK);
    assert_eq!(code(&small_ratio_run(&b, "2")), EXIT_OK);
    let o = ustpile(&[
        "rerun",
        a.join("manifest.json").to_str().unwrap(),
        "--output-dir",
        c.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));

    let m = manifest(&a);
    assert_eq!(m["status"], "complete");
    assert_eq!(m["manifest_version"], 1);
    assert_eq!(m["config"]["experiment"], "first-wave-ratio");
    let files: Vec<String> = m["files"].as_array().unwrap().iter().map(|f| f.as_str().unwrap().to_string()).collect();
    for f in ["first_wave.csv", "zero_tree.csv", "ratio.csv", "fits.json", "report.json", "plot.gp"] {
        assert!(files.iter().any(|x| x == f), "{f} missing from manifest");
    }
    for f in files.iter().filter(|f| f.ends_with(".csv")) {
        let x = fs::read(a.join(f)).unwrap();
        assert_eq!(x, fs::read(b.join(f)).unwrap(), "{f} differs across worker counts");
        assert_eq!(x, fs::read(c.join(f)).unwrap(), "{f} differs on rerun");
    }
    let curve = fs::read_to_string(a.join("first_wave.csv")).unwrap();
    assert!(curve.starts_with("# ustpile-curve v1 first_wave\nthreshold,exceed,total,censored\n"));
    let ratio = fs::read_to_string(a.join("ratio.csv")).unwrap();
    assert!(ratio.starts_with("threshold,p_wave,p_tree,ratio,sigma,z,usable\n"));
}

#[test]
fn environment_sets_the_default_output_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_ustpile"))
        .args(["dhar-check", "--box-radius", "1", "--reps", "2000"])
        .env("USTPILE_OUTPUT_DIR", &out)
        .output()
        .unwrap();
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("dhar.csv").exists());
}

#[test]
fn memory_budget_is_enforced() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("big");
    let o = ustpile(&[
        "past-tails",
        "--box-radius",
        "512",
        "--memory-limit-mb",
        "64",
        "--output-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), EXIT_RESOURCE);
    assert!(!out.exists());
}

#[test]
fn heavy_censoring_fails_validation_but_keeps_data() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("past");
    let o = ustpile(&[
        "past-tails",
        "--box-radius",
        "4",
        "--reps",
        "200",
        "--output-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), EXIT_VALIDATION);
    let m = manifest(&out);
    assert_eq!(m["status"], "failed");
    assert_eq!(m["failure"]["kind"], "validation");
    assert!(out.join("diam_ext.csv").exists());
}

#[test]
fn defaults_print_valid_toml() {
    let o = ustpile(&["defaults", "avalanche-tails"]);
    assert_eq!(code(&o), EXIT_OK);
    let cfg = RunConfig::from_toml(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(cfg, RunConfig::defaults(ustpile::cli::Experiment::AvalancheTails));
}
