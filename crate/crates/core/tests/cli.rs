//! End-to-end tests of the `mbpetc` binary.

mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_mbpetc");

fn mbpetc(args: &[&str], cwd: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(cwd)
        .env_remove("MBPETC_OUT")
        .output()
        .expect("binary runs")
}

fn text(out: &Output) -> String {
    format!(
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    )
}

fn write_constants(dir: &Path) -> String {
    let path = dir.join("pendulum.constants");
    fs::write(&path, common::pendulum_constants().to_manifest("pendulum")).unwrap();
    path.display().to_string()
}

fn spec_with_constants(constants: &str, scenarios: &str) -> String {
    format!(
        "[batch]\nmodel = \"pendulum\"\nc = 0.258\nsigma = 0.35\nconstants = \"{constants}\"\n\n{scenarios}"
    )
}

#[test]
fn certify_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifests = Vec::new();
    for sub in ["a", "b"] {
        let out = mbpetc(&["certify", "pendulum", "--grid", "40", "--out", sub], dir.path());
        assert_eq!(out.status.code(), Some(0), "{}", text(&out));
        manifests.push(fs::read(dir.path().join(sub).join("pendulum.constants")).unwrap());
    }
    assert_eq!(manifests[0], manifests[1]);
    let manifest = String::from_utf8(manifests.remove(0)).unwrap();
    let (model, k) = mbpetc::CertifiedConstants::from_manifest(&manifest).unwrap();
    assert_eq!(model, "pendulum");
    assert_eq!(k.grid_resolution, 40);
}

#[test]
fn certify_accepts_sigma_near_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = mbpetc(&["certify", "pendulum", "--sigma", "0.9999", "--grid", "24", "--out", "."], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let manifest = fs::read_to_string(dir.path().join("pendulum.constants")).unwrap();
    let (_, k) = mbpetc::CertifiedConstants::from_manifest(&manifest).unwrap();
    assert!(k.h_sigma_masp > 0.0 && k.h_sigma_masp < 1e-8, "{}", k.h_sigma_masp);
}

#[test]
fn certify_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let out = mbpetc(&["certify", "cartpole"], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", text(&out));
    assert!(text(&out).contains("cartpole"));
    let out = mbpetc(&["certify", "pendulum", "--sigma", "1.0", "--grid", "24"], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", text(&out));
}

#[test]
fn empty_spec_succeeds_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("empty.toml"), "[batch]\nmodel = \"pendulum\"\n").unwrap();
    let out = mbpetc(&["run", "--spec", "empty.toml", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    assert!(text(&out).to_lowercase().contains("no scenario"), "{}", text(&out));
}

#[test]
fn spec_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("bad.toml"),
        "[batch]\nmodel = \"pendulum\"\n\n[scenario.a]\nprediction = \"telepathy\"\n",
    )
    .unwrap();
    let out = mbpetc(&["run", "--spec", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", text(&out));
    assert!(text(&out).contains("line 5"), "{}", text(&out));
    let out = mbpetc(&["run", "--spec", "missing.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", text(&out));
}

#[test]
fn sampling_period_above_bound_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let constants = write_constants(dir.path());
    let scenario = "[scenario.fast]\nprediction = \"zoh\"\nx0 = [0.4, 0.0]\nhorizon = 0.01\nh = 1e-3\n";
    fs::write(dir.path().join("fast.toml"), spec_with_constants(&constants, scenario)).unwrap();
    let out = mbpetc(&["run", "--spec", "fast.toml", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", text(&out));
    let out = mbpetc(&["run", "--spec", "fast.toml", "--out", "o", "--unsafe-h-override"], dir.path());
    assert_ne!(out.status.code(), Some(2), "{}", text(&out));
}

#[test]
fn run_writes_traces_summaries_and_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let constants = write_constants(dir.path());
    let scenarios = "\
[scenario.zoh]
prediction = \"zoh\"
x0 = [0.4, 0.0]
horizon = 0.2
h = \"masp\"
substeps = 5
decimation = 10
checks = [\"convergence\", \"nonmonotone\"]

[scenario.euler]
prediction = \"scaled_euler\"
euler_scale = 1.05
x0 = [0.4, 0.0]
horizon = 0.2
h = \"masp\"
substeps = 5
decimation = 10
checks = [\"convergence\", \"nonmonotone\"]
";
    fs::write(dir.path().join("short.toml"), spec_with_constants(&constants, scenarios)).unwrap();
    let out = Command::new(BIN)
        .args(["run", "--spec", "short.toml"])
        .current_dir(dir.path())
        .env("MBPETC_OUT", "envout")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let root = dir.path().join("envout").join("short");
    for file in ["zoh.csv", "euler.csv", "zoh.summary.json", "euler.summary.json", "comparison.txt", "summary.json"] {
        assert!(root.join(file).is_file(), "missing {file}");
    }
    let csv = fs::read_to_string(root.join("zoh.csv")).unwrap();
    assert!(csv.starts_with("t,x1,x2,xhat1,xhat2,u1,V,S,transmit,reason,lambda,budget"), "{}", &csv[..80]);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(root.join("euler.summary.json")).unwrap()).unwrap();
    assert_eq!(summary["summary"]["prediction"], "scaled_euler(1.05)");
}

#[test]
fn corrupted_manifest_fails_certification_and_skips_dependants() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.constants"), "model = pendulum\nl1 = banana\n").unwrap();
    let out = mbpetc(
        &["accept", "--only", "A1,A2", "--constants", "bad.constants", "--out", "o"],
        dir.path(),
    );
    let output = text(&out);
    assert_eq!(out.status.code(), Some(1), "{output}");
    assert!(output.lines().any(|l| l.starts_with("A1 FAIL")), "{output}");
    assert!(output.lines().any(|l| l.starts_with("A2 SKIP")), "{output}");
}

#[test]
fn accept_runs_a_single_criterion() {
    let dir = tempfile::tempdir().unwrap();
    let out = mbpetc(&["accept", "--only", "A7", "--out", "o"], dir.path());
    let output = text(&out);
    assert_eq!(out.status.code(), Some(0), "{output}");
    assert!(output.lines().any(|l| l.starts_with("A7 PASS")), "{output}");
    assert!(!output.lines().any(|l| l.starts_with("A3 ")), "{output}");
    assert!(dir.path().join("o/accept/acceptance.json").is_file());
}
