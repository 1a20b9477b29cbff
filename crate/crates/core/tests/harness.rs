use std::path::{Path, PathBuf};

use wnorm::harness::config::ExperimentConfig;
use wnorm::harness::data::{load_idx, parse_idx_images, preprocess, DataSource};
use wnorm::harness::diagnostics::{read_csv, to_csv_string, CSV_HEADER};
use wnorm::harness::experiment::{
    bounds_at, gen_gap, load_dataset, run_experiment, verify, write_outputs, ParamsSnapshot,
};
use wnorm::Error;

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/digits")
}

fn digits_config(extra: &str) -> ExperimentConfig {
    let text = format!(
        "dataset = mnist\n\
         images = digits-images-idx3-ubyte\n\
         labels = digits-labels-idx1-ubyte\n\
         samples = 200\nheldout = 100\n\
         width = 16\ndepth = 2\nactivation = gelu\n\
         epochs = 4\nlr = 0.05\nseed = 3\n{extra}"
    );
    ExperimentConfig::parse(&text).unwrap()
}

#[test]
fn digits_fixture_loads() {
    let dir = fixture_dir();
    let raw = load_idx(
        &dir.join("digits-images-idx3-ubyte"),
        &dir.join("digits-labels-idx1-ubyte"),
    )
    .unwrap();
    assert_eq!(raw.len(), 1797);
    assert_eq!(raw.image_len, 64);
    assert!(raw.labels.iter().all(|&k| k < 10));
    let (data, skipped) = preprocess(&raw).unwrap();
    assert_eq!(data.len() + skipped, 1797);
    assert_eq!(data.dim(), 64);
    for (x, y) in data.inputs.iter().zip(&data.targets) {
        let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
        assert!(y.abs() <= 1.0);
    }
}

#[test]
fn truncated_idx_is_a_format_error() {
    let bytes = std::fs::read(fixture_dir().join("digits-images-idx3-ubyte")).unwrap();
    for cut in [3, 15, bytes.len() - 1] {
        match parse_idx_images(&bytes[..cut]) {
            Err(Error::Format { .. }) => {}
            other => panic!("cut {cut}: {other:?}"),
        }
    }
}

#[test]
fn training_is_deterministic_and_csv_round_trips() {
    let cfg = digits_config("");
    let dir = fixture_dir();
    let a = run_experiment(&cfg, Some(&dir)).unwrap();
    let b = run_experiment(&cfg, Some(&dir)).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.params.theta(), b.params.theta());
    assert_eq!(a.records.len(), 5);
    assert!(a.records[0].loss_ratio.is_none());
    assert!(a.records[1..].iter().all(|r| r.loss_ratio.is_some()));

    let csv = to_csv_string(&a.records).unwrap();
    assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
    assert_eq!(read_csv(csv.as_bytes()).unwrap(), a.records);

    let out = tempfile::tempdir().unwrap();
    write_outputs(&a, out.path()).unwrap();
    let file = std::fs::File::open(out.path().join("diagnostics.csv")).unwrap();
    assert_eq!(read_csv(file).unwrap(), a.records);
    let snap: ParamsSnapshot =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("params.json")).unwrap())
            .unwrap();
    assert_eq!(snap.into_params().unwrap().theta(), a.params.theta());
}

#[test]
fn bounds_ok_means_every_check_dominates() {
    let cfg = digits_config("hessian_samples = 2\n");
    let dir = fixture_dir();
    let out = run_experiment(&cfg, Some(&dir)).unwrap();
    for r in &out.records {
        assert!(r.alpha < r.beta);
        assert!(r.min_weight_norm > 0.0);
    }
    let last = out.records.last().unwrap();
    assert_eq!(
        last.bounds_ok,
        out.report.dominance.iter().all(|d| d.holds())
    );
    let splits = load_dataset(&cfg, Some(&dir)).unwrap();
    let summary = bounds_at(&cfg, &out.params, &splits.train.batch().unwrap()).unwrap();
    assert!(summary.dominance.iter().all(|d| d.holds()));
}

#[test]
fn synthetic_teacher_verify_passes_and_corruption_fails() {
    let base = "dataset = synthetic-teacher\ninput_dim = 4\nsamples = 32\nheldout = 8\n\
                width = 8\ndepth = 2\nverify_nets = 3\nverify_points = 3\nverify_samples = 20\n";
    let cfg = ExperimentConfig::parse(base).unwrap();
    assert_eq!(cfg.dataset, DataSource::SyntheticTeacher);
    let report = verify(&cfg, None).unwrap();
    assert!(report.passed(), "{:?}", report.failures());

    let bad = ExperimentConfig::parse(&format!("{base}verify_corrupt_gradient = true\n")).unwrap();
    let report = verify(&bad, None).unwrap();
    assert!(!report.passed());
    assert!(report
        .failures()
        .iter()
        .any(|c| c.name.starts_with("grad_theta")));
}

#[test]
fn gen_gap_trials_stay_within_bound() {
    let cfg = ExperimentConfig::parse(
        "dataset = synthetic-teacher\ninput_dim = 4\nsamples = 64\nheldout = 64\n\
         width = 8\ndepth = 1\nepochs = 3\nlr = 0.05\ngen_trials = 3\nrad_nets = 2\nrad_sign_draws = 4\n",
    )
    .unwrap();
    let summary = gen_gap(&cfg, None).unwrap();
    assert_eq!(summary.trials.len(), 3);
    assert_eq!(summary.within_bound, 3);
    for t in &summary.trials {
        assert!(t.rademacher_lower <= summary.rademacher_bound);
    }
}

#[test]
fn missing_data_is_an_io_error() {
    let cfg = digits_config("");
    let empty = tempfile::tempdir().unwrap();
    assert!(matches!(
        run_experiment(&cfg, Some(empty.path())),
        Err(Error::Io(_))
    ));
}
