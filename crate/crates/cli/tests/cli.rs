use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
samples = 48
heldout = 16
input_dim = 5
width = 6
teacher_width = 4
epochs = 3
verify_nets = 2
verify_samples = 20
gen_trials = 2
output_dir = run
";

fn wnorm(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wnorm"))
        .args(args)
        .current_dir(dir)
        .env_remove("WNORM_DATA_DIR")
        .output()
        .expect("spawn wnorm")
}

fn setup(extra: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("exp.cfg"), format!("{SMALL}{extra}")).unwrap();
    dir
}

#[test]
fn train_writes_outputs_deterministically() {
    let dir = setup("");
    let out = wnorm(&["train", "exp.cfg"], dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = fs::read_to_string(dir.path().join("run/diagnostics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "step,epoch,loss,grad_ratio,min_weight_norm,loss_ratio,alpha,beta,rate_bound,eta,bounds_ok"
    );
    assert_eq!(lines.count(), 4);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run/report.json")).unwrap())
            .unwrap();
    assert!(report["bounds"]["hessian_spec"].as_f64().unwrap() > 0.0);

    let again = wnorm(&["train", "exp.cfg", "--out", "second"], dir.path());
    assert!(again.status.success());
    let csv2 = fs::read_to_string(dir.path().join("second/diagnostics.csv")).unwrap();
    assert_eq!(csv, csv2);
}

#[test]
fn verify_exit_codes() {
    let dir = setup("");
    let ok = wnorm(&["verify", "exp.cfg"], dir.path());
    assert!(
        ok.status.success(),
        "{}",
        String::from_utf8_lossy(&ok.stdout)
    );
    assert!(String::from_utf8_lossy(&ok.stdout).contains("all checks passed"));
    let bad = wnorm(&["verify", "exp.cfg", "--corrupt-gradient"], dir.path());
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("grad_theta_fd"));
    // a loose enough tolerance accepts the corrupted gradient
    let loose = wnorm(
        &["verify", "exp.cfg", "--corrupt-gradient", "--fd-tol", "1"],
        dir.path(),
    );
    assert!(loose.status.success());
}

#[test]
fn bounds_prints_json() {
    let dir = setup("");
    let out = wnorm(&["bounds", "exp.cfg"], dir.path());
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in [
        "layer_output",
        "predictor_abs",
        "grad_theta_rho",
        "grad_x",
        "hessian_spec",
        "loss_varphi",
        "loss_grad",
    ] {
        assert!(v["bounds"].get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["inputs"]["phi0"], 0.0);
}

#[test]
fn bounds_reads_trained_snapshot() {
    let dir = setup("params = run/params.json\n");
    assert!(wnorm(&["train", "exp.cfg"], dir.path()).status.success());
    let out = wnorm(&["bounds", "exp.cfg"], dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn gen_gap_reports_trials() {
    let dir = setup("");
    let out = wnorm(&["gen-gap", "exp.cfg"], dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["trials"].as_array().unwrap().len(), 2);
    assert!(v["trials"][0].get("rademacher_lower").is_some());
}

#[test]
fn config_errors_exit_nonzero() {
    let dir = setup("bogus = 1\n");
    let out = wnorm(&["train", "exp.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 11"));
    let missing = wnorm(&["train", "nope.cfg"], dir.path());
    assert!(!missing.status.success());
}

#[test]
fn data_dir_env_is_used() {
    let dir = setup("dataset = mnist\ndata_path = digits\n");
    let out = Command::new(env!("CARGO_BIN_EXE_wnorm"))
        .args(["train", "exp.cfg"])
        .current_dir(dir.path())
        .env("WNORM_DATA_DIR", "/nonexistent-wnorm-data")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("No such file"));
}
