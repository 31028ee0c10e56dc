use std::path::Path;
use std::process::{Command, Output};

fn singlet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_singlet")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Small, fast variant of the continuous preset.
const QUICK: [&str; 12] = [
    "--override",
    "model.mode3=3",
    "--override",
    "continuous.duration=\"1 ms\"",
    "--override",
    "continuous.window_start=\"0.5 ms\"",
    "--override",
    "continuous.window_end=\"1 ms\"",
    "--channels",
    "-mode4",
    "--quadrature",
    "1",
];

fn read_rows(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(|x| x.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

#[test]
fn continuous_run_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a");
    let o = singlet(&[&["run-continuous", "--out", out.to_str().unwrap()], &QUICK[..]].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    let (header, rows) = read_rows(&out.join("populations.csv"));
    assert_eq!(header, ["time_or_step", "P_S", "P_T", "P_uu", "P_dd", "P_a", "P_leak", "nbar_mode3"]);
    assert_eq!(rows.len(), 11);
    for row in &rows {
        let sum: f64 = row[1..7].iter().sum();
        assert!((sum - 1.0).abs() < 1e-8);
    }
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    for key in ["code_version", "params.omega_s", "params.kappa4", "model.tol", "model.channels", "ensemble.nodes"] {
        assert!(manifest.lines().any(|l| l.starts_with(&format!("{key} = "))), "missing {key}");
    }
    assert!(manifest.contains("model.mode3 = 3"));

    // Same configuration, same bytes.
    let out2 = dir.path().join("b");
    let o = singlet(&[&["run-continuous", "--out", out2.to_str().unwrap()], &QUICK[..]].concat());
    assert!(o.status.success());
    assert_eq!(
        std::fs::read(out.join("populations.csv")).unwrap(),
        std::fs::read(out2.join("populations.csv")).unwrap()
    );

    // The echoed configuration reproduces the run.
    let out3 = dir.path().join("c");
    let cfg = out.join("config.resolved.toml");
    let o = singlet(&["run-continuous", "--config", cfg.to_str().unwrap(), "--out", out3.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read(out.join("populations.csv")).unwrap(),
        std::fs::read(out3.join("populations.csv")).unwrap()
    );
}

#[test]
fn stepwise_run_counts_steps() {
    let dir = tempfile::tempdir().unwrap();
    let o = singlet(&[
        "run-stepwise",
        "--out",
        dir.path().to_str().unwrap(),
        "--override",
        "stepwise.n_steps=4",
        "--override",
        "stepwise.window_first=2",
        "--override",
        "stepwise.window_last=4",
        "--override",
        "model.mode3=3",
        "--channels",
        "-mode4",
        "--quadrature",
        "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (_, rows) = read_rows(&dir.path().join("populations.csv"));
    let steps: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    assert_eq!(steps, [0.0, 1.0, 2.0, 3.0, 4.0]);
    assert!(rows[4][1] > rows[1][1]);
}

#[test]
fn rate_model_reports_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = singlet(&["rate-model", "--preset", "continuous_fig2", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("error E = 0.2"), "{stdout}");
    let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains("rates.gamma_plus = "));
    assert!(dir.path().join("rate_model.csv").exists());
}

#[test]
fn validation_failures_exit_2() {
    let o = singlet(&["validate", "--override", "params.kappa=-1.0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("params.kappa"), "{}", stderr(&o));

    let o = singlet(&["validate", "--preset", "nope"]);
    assert_eq!(o.status.code(), Some(2));

    let o = singlet(&["validate", "--channels", "sideband,warp"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("warp"));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "protocol = \"continuous\"\nbogus = 1\n").unwrap();
    let o = singlet(&["validate", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("line 2") && msg.contains("bogus"), "{msg}");
}

#[test]
fn numerical_failures_exit_3() {
    // The effective-rate model is singular without a sideband drive.
    let dir = tempfile::tempdir().unwrap();
    let o = singlet(&["rate-model", "--override", "params.omega_s=0.0", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn validate_passes_on_preset() {
    let o = singlet(&["validate", "--override", "model.mode3=3", "--channels", "-mode4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("is valid"));
}
