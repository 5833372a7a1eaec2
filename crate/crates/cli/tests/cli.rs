use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wittenlab"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn run(config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg("run")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let j = header.iter().position(|h| *h == name).unwrap();
    lines
        .map(|l| l.split(',').nth(j).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn rigidity_run_exits_zero_with_flat_w() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&scenario("euclidean_rigidity.toml"), dir.path(), &[]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = fs::read_to_string(dir.path().join("series.csv")).unwrap();
    assert!(csv.starts_with("t,H,fisher,H_m,W_m,dWm_fd,dWm_rhs,H_K,W_K"));
    assert!(!csv.contains('\r'));
    let w = column(&csv, "W_m");
    assert!(w.iter().all(|v| v.abs() <= 1e-3), "{w:?}");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["exit_code"], 0);
}

#[test]
fn negative_control_is_found_and_exit_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &scenario("control_hyperbolic_hamilton.toml"),
        dir.path(),
        &[],
    );
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let controls = report["negative_controls"].as_array().unwrap();
    assert_eq!(controls.len(), 1);
    assert_eq!(controls[0]["detected"], true);
    assert_eq!(report["monitors"][0]["verdict"], "violated");
    assert_eq!(report["monitors"][0]["refinement_verdict"], "persistent");
    assert_eq!(report["monitors"][0]["premise"]["verdict"], "falsified");
}

const SMALL: &str = r#"
name = "small"

[model]
kind = "sphere"
n = 2
nodes = 64

[initial]
kind = "gaussian_bump"
center = 0.0
width = 0.6

[solve]
dt = 0.01
horizon = 0.2
output_dt = 0.02

[functionals]
m = 2.0

[[monitors]]
kind = "lsi"
k = 0.0
"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn m_below_n_exits_three_citing_precondition() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("m = 2.0", "m = 1.0"));
    let out = run(&cfg, &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("functionals.m"), "{err}");
    assert!(err.contains("m >= n"), "{err}");
}

#[test]
fn config_errors_carry_the_key_path() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (
            SMALL.replace("horizon = 0.2", "horizon = 0.2\nhorizn = 1.0"),
            "solve.horizn",
        ),
        (
            SMALL.replace("k = 0.0", "k = 0.0\nnegative_contrl = true"),
            "monitors[0].negative_contrl",
        ),
        (
            SMALL.replace("kind = \"sphere\"", "kind = \"torus\""),
            "line",
        ),
        (SMALL.replace("width = 0.6", "width = 0.01"), "initial"),
        (
            SMALL.replace("output_dt = 0.02", "output_dt = 0.015"),
            "solve.output_dt",
        ),
        (SMALL.replace("k = 0.0", "k = -3.0"), "monitors[0]"),
    ];
    for (text, path) in cases {
        let cfg = write_config(dir.path(), &text);
        let out = run(&cfg, &dir.path().join("out"), &[]);
        assert_eq!(out.status.code(), Some(3), "{path}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(path), "{path}: {err}");
    }
}

#[test]
fn report_validates_against_schema() {
    let schema: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(
            Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schema/report.schema.json"),
        )
        .unwrap(),
    )
    .unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    for (i, config) in [cfg, scenario("control_sphere_rlsi.toml")]
        .iter()
        .enumerate()
    {
        let out_dir = dir.path().join(format!("out{i}"));
        let out = run(config, &out_dir, &[]);
        assert_eq!(out.status.code(), Some(0));
        let report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap())
                .unwrap();
        let errors: Vec<String> = validator
            .iter_errors(&report)
            .map(|e| e.to_string())
            .collect();
        assert!(errors.is_empty(), "{errors:?}");
    }
}

#[test]
fn identical_runs_give_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("{SMALL}\n[[monitors]]\nkind = \"cor1\"\n"),
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&cfg, &a, &["--seed", "7"]).status.code(), Some(0));
    assert_eq!(run(&cfg, &b, &["--seed", "7"]).status.code(), Some(0));
    for file in ["series.csv", "report.json"] {
        assert_eq!(
            fs::read(a.join(file)).unwrap(),
            fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn refinement_writes_levels_and_orders() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &scenario("interval_eigenmode.toml"),
        dir.path(),
        &["--refine", "2"],
    );
    assert_eq!(out.status.code(), Some(0));
    for level in ["level_1", "level_2"] {
        assert!(dir
            .path()
            .join("refine")
            .join(level)
            .join("series.csv")
            .exists());
        assert!(dir
            .path()
            .join("refine")
            .join(level)
            .join("report.json")
            .exists());
    }
    let conv: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("refine/convergence.json")).unwrap(),
    )
    .unwrap();
    let orders = conv["orders"].as_array().unwrap();
    assert_eq!(orders.len(), 2);
    assert!(
        orders.iter().all(|o| o.as_f64().unwrap() >= 1.8),
        "{orders:?}"
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("convergence orders"));
}

#[test]
fn several_configs_write_separate_directories() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .arg("run")
        .arg(scenario("sphere_lsi.toml"))
        .arg(scenario("control_sphere_lsi.toml"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("sphere_lsi/report.json").exists());
    assert!(dir.path().join("control_sphere_lsi/report.json").exists());
}

#[test]
fn calibrate_prints_constants() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = bin().arg("calibrate").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let cal: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cal["monitors"].as_array().unwrap().len(), 1);
    assert!(cal["monitors"][0]["c1"].as_f64().unwrap() >= 0.0);
    assert_eq!(cal["identities"].as_array().unwrap().len(), 4);
}

#[test]
fn catalog_lists_entries() {
    let out = bin().arg("list-catalog").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for needle in [
        "W_m - ",
        "lsi - ",
        "shrinking_sphere - Ricci flow on round sphere",
    ] {
        assert!(text.contains(needle), "{needle}");
    }
    let out = bin().args(["list-catalog", "--json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let tree: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let flows = tree["flows"].as_array().unwrap();
    assert!(flows.iter().any(|f| f["name"] == "shrinking_sphere"
        && f["anchor"] == "Ricci flow on round sphere, c(t) = 1 - 2(n-1)t"));
    assert!(tree["functionals"]
        .as_array()
        .unwrap()
        .iter()
        .any(|f| f["name"] == "W_m"));
    assert!(tree["monitors"]
        .as_array()
        .unwrap()
        .iter()
        .any(|f| f["name"] == "lsi"));
}

#[test]
fn unknown_flag_prints_usage_and_exits_three() {
    let out = bin().args(["list-catalog", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = bin().output().unwrap();
    assert_eq!(out.status.code(), Some(3));
}
