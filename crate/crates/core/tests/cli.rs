use std::process::Command;

fn dperm() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dperm"))
}

fn calib_args(cmd: &mut Command) -> &mut Command {
    cmd.args([
        "--epsilon",
        "0.1",
        "--delta",
        "1e-5",
        "--steps",
        "100",
        "--n",
        "1000",
        "--modulus",
        "0.01",
    ])
}

#[test]
fn calibrate_prints_sigma() {
    let out = calib_args(dperm().arg("calibrate")).output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let s = v["sigma_sq"].as_f64().unwrap();
    assert!((s - 100.0 * 1e5f64.ln() / 999.0).abs() < 1e-12);
}

#[test]
fn verify_privacy_exit_codes() {
    let weak = calib_args(dperm().arg("verify-privacy")).output().unwrap();
    assert_eq!(weak.status.code(), Some(1));
    let strong = calib_args(dperm().arg("verify-privacy"))
        .args(["--c", "16"])
        .output()
        .unwrap();
    assert_eq!(strong.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&strong.stdout).unwrap();
    assert_eq!(v["report"]["passed"], true);
}

fn write_spec(dir: &std::path::Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("spec.toml");
    std::fs::write(&p, body).unwrap();
    p
}

const BASE: &str = "dataset = \"blobs\"\nsynthetic_n = 100\nsynthetic_d = 3\nsteps = 20\nepsilon_grid = [0.2]\nrecord_wall_time = false\n";

#[test]
fn run_writes_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(
        dir.path(),
        &format!(
            "{BASE}model = \"lr_l2\"\nreg_lambda = 0.1\nmechanisms = [\"input\", \"objective\"]\n"
        ),
    );
    let csv = dir.path().join("r.csv");
    let status = dperm()
        .args(["run", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(&csv)
        .args(["--workers", "2", "--seed", "4"])
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 4);

    let out = dperm()
        .args(["run", "--format", "json", "--spec"])
        .arg(&spec)
        .args(["--seed", "4"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let table = dperm::bench::read_json(out.stdout.as_slice()).unwrap();
    assert_eq!(table, dperm::bench::read_csv(text.as_bytes()).unwrap());
}

#[test]
fn run_exits_2_on_cell_errors() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(
        dir.path(),
        &format!("{BASE}model = \"lr\"\nmechanisms = [\"output\"]\n"),
    );
    let out = dperm().args(["run", "--spec"]).arg(&spec).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_spec_and_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(
        dir.path(),
        &format!("{BASE}model = \"lr\"\nmechanisms = [\"laplace\"]\n"),
    );
    let out = dperm().args(["run", "--spec"]).arg(&spec).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("laplace"));

    let spec = write_spec(
        dir.path(),
        &format!("{BASE}model = \"lr_l2\"\nreg_lambda = 0.1\nmechanisms = [\"none\"]\n"),
    );
    let out = dperm()
        .args(["oracle", "--spec"])
        .arg(&spec)
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["grad_norm"].as_f64().unwrap() <= 1e-8);
    assert_eq!(v["theta"].as_array().unwrap().len(), 3);
}
