use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "grid.n1 = 16\ngrid.n2 = 256\nmodel.tau = 2^-16\ntau = 2^-18, 2^-17, 2^-16, 2^-15\n\
samples = 40\nsamples.fourth = 40\nt = 2^-12, 2^-10, 2^-8\nscales = 2^-4, 2^-3, 2^-2\n";

fn mirs(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mirs"))
        .args(args)
        .env_remove("MIRS_OUTPUT_DIR")
        .current_dir(dir)
        .output()
        .unwrap()
}

fn setup() -> tempfile::TempDir {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("small.conf"), SMALL).unwrap();
    d
}

#[test]
fn selftest_passes() {
    let d = setup();
    let o = mirs(&["selftest-algebra", "--config", "small.conf", "--out", "o"], d.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(d.path().join("o/selftest.json").exists());
}

#[test]
fn calibrate_is_byte_identical() {
    let d = setup();
    let mut files = Vec::new();
    for out in ["a", "b"] {
        let o = mirs(&["calibrate", "--config", "small.conf", "--out", out, "--seed", "3"], d.path());
        assert_eq!(o.status.code(), Some(0));
        files.push(fs::read(d.path().join(out).join("counterterms.json")).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn estimate_json_matches_schema() {
    let d = setup();
    let o = mirs(&["estimate", "--config", "small.conf", "--out", "o", "--json"], d.path());
    assert!(matches!(o.status.code(), Some(0) | Some(1)));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["config"].is_object());
    let fits = v["fits"].as_array().unwrap();
    assert!(!fits.is_empty());
    for f in fits {
        for k in ["quantity", "beta", "slope", "stderr", "target", "tol", "pass"] {
            assert!(f.get(k).is_some(), "missing {k}");
        }
    }
    let csv = fs::read_to_string(d.path().join("o/estimate.csv")).unwrap();
    assert!(csv.starts_with("quantity,beta,p,scale_kind,scale,estimate,stderr,n_samples\n"));
}

#[test]
fn config_and_usage_errors_exit_2() {
    let d = setup();
    fs::write(d.path().join("bad.conf"), "colour = red\n").unwrap();
    assert_eq!(mirs(&["calibrate", "--config", "bad.conf"], d.path()).status.code(), Some(2));
    assert_eq!(mirs(&["calibrate"], d.path()).status.code(), Some(2));
    assert_eq!(mirs(&["estimate", "--config", "missing.conf"], d.path()).status.code(), Some(2));
}

#[test]
fn output_dir_from_environment() {
    let d = setup();
    let o = Command::new(env!("CARGO_BIN_EXE_mirs"))
        .args(["kernels-check", "--config", "small.conf"])
        .env("MIRS_OUTPUT_DIR", "envout")
        .current_dir(d.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(d.path().join("envout/kernels.json").exists());
}
