use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn trisim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trisim"))
        .args(args)
        .env_remove("TRISIM_JOBS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn lists_every_builtin() {
    let o = trisim(&["list-models"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for name in ["growth_demo", "case1:1", "case1:4", "case2", "case3"] {
        assert!(text.contains(name), "{name} missing from\n{text}");
    }
}

#[test]
fn run_writes_csv_to_stdout() {
    let o = trisim(&[
        "run",
        "--model",
        "case1",
        "--scenario",
        "2",
        "--engine",
        "ode",
        "--horizon",
        "1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,T,E"));
    assert_eq!(lines.next(), Some("0,100,5"));
    assert_eq!(text.lines().count(), 12);
}

#[test]
fn overrides_apply() {
    let o = trisim(&[
        "run",
        "--model",
        "growth_demo",
        "--engine",
        "ssa-direct",
        "--set",
        "T=0",
        "--horizon",
        "2",
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).lines().skip(1).all(|l| l.ends_with(",0")));
}

#[test]
fn validation_errors_exit_with_one() {
    let cases: &[&[&str]] = &[
        &["run", "--model", "case9"],
        &["run", "--model", "case2", "--scenario", "1"],
        &["run", "--model", "case2", "--engine", "euler"],
        &["run", "--model", "case2", "--set", "nope=1"],
        &["run", "--model", "case2", "--set", "c"],
        &[
            "ensemble",
            "--model",
            "case2",
            "--engine",
            "ode",
            "--runs",
            "5",
            "--out",
            "/tmp/never",
        ],
        &["frobnicate"],
    ];
    for args in cases {
        let o = trisim(args);
        assert_eq!(
            o.status.code(),
            Some(1),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    assert!(!Path::new("/tmp/never").exists());
}

#[test]
fn runtime_failure_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ens");
    let o = trisim(&[
        "ensemble",
        "--model",
        "case2",
        "--engine",
        "ssa-nrm",
        "--runs",
        "2",
        "--max-steps",
        "1",
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));
    assert!(!out.exists());
}

#[test]
fn ensemble_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for (dir, jobs) in [(&a, "1"), (&b, "2")] {
        let o = Command::new(env!("CARGO_BIN_EXE_trisim"))
            .args([
                "ensemble", "--model", "case1:3", "--engine", "ssa-nrm", "--runs", "3", "--seed", "7",
            ])
            .args(["--horizon", "5", "--out", p(dir)])
            .env("TRISIM_JOBS", jobs)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["run_0.csv", "run_1.csv", "run_2.csv", "mean.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"], serde_json::json!([7, 8, 9]));
    assert_eq!(manifest["engine"], "ssa-nrm");
    assert_eq!(manifest["config"]["dt"], 0.1);
    assert_eq!(manifest["model_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn model_file_source() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("decay.model");
    fs::write(
        &path,
        "species X = 50\nparam k = 1\nreaction decay: X -> @ k*X\nhorizon 3\nsample 0.5\n",
    )
    .unwrap();
    let o = trisim(&["run", "--model", p(&path), "--engine", "ssa-nrm", "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 8);
    let o = trisim(&["run", "--model", p(&path), "--engine", "abm"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn extrema_fit_and_compare() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("wave.csv");
    let mut text = String::from("t,T\n");
    for k in 0..=6000 {
        let t = k as f64 * 0.1;
        let v = 20000.0 + 0.1 * (t - 300.0).powi(2) + 5000.0 * (2.0 * std::f64::consts::PI * t / 100.0).cos();
        text.push_str(&format!("{t},{v}\n"));
    }
    fs::write(&csv, text).unwrap();

    let o = trisim(&[
        "extrema",
        p(&csv),
        "--kind",
        "maxima",
        "--window",
        "1",
        "--min-separation",
        "50",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ex = stdout(&o);
    assert_eq!(ex.lines().next(), Some("t,T"));
    assert!(ex.lines().count() >= 5);

    let o = trisim(&[
        "fit",
        p(&csv),
        "--family",
        "parab_up",
        "--window",
        "1",
        "--min-separation",
        "50",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let fit: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(fit["fit"]["converged"], true);
    let b = fit["fit"]["params"][1].as_f64().unwrap();
    assert!((b - 300.0).abs() < 10.0, "{fit}");

    let o = trisim(&["fit", p(&csv), "--species", "Q"]);
    assert_eq!(o.status.code(), Some(1));
    let o = trisim(&["fit", p(&csv), "--family", "cubic"]);
    assert_eq!(o.status.code(), Some(1));

    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for (dir, seed) in [(&a, "1"), (&b, "101")] {
        let o = trisim(&[
            "ensemble",
            "--model",
            "case2",
            "--engine",
            "abm",
            "--runs",
            "4",
            "--seed",
            seed,
            "--out",
            p(dir),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let report = tmp.path().join("report.json");
    let o = trisim(&[
        "compare",
        p(&a),
        p(&b),
        "--family",
        "parab_up",
        "--slice",
        "300",
        "--out",
        p(&report),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    for key in ["ensembles", "fits", "tests", "extinction", "excluded_runs"] {
        assert!(r.get(key).is_some(), "{key}");
    }
    assert_eq!(r["time_slices"][0]["time"], 300.0);
}
