use std::path::Path;
use std::process::{Command, Output};

fn seqagg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqagg")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = seqagg(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec!["synth-gen", "--seed", "7", "--models", "5", "--steps", "60", "--series", "2", "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    ok(&args);
}

fn column(path: &Path, index: usize) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(index).unwrap().to_string())
        .collect()
}

#[test]
fn synth_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth(a.path(), &["--noise", "2"]);
    synth(b.path(), &["--noise", "2"]);
    let mut names: Vec<_> = std::fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 5);
    for name in names {
        assert_eq!(std::fs::read(a.path().join(&name)).unwrap(), std::fs::read(b.path().join(&name)).unwrap());
    }
}

#[test]
fn tune_echoes_default_grids() {
    let out = tempfile::tempdir().unwrap();
    let stdout = ok(&["tune", "--algorithm", "ewa,ridge,lasso", "--out", out.path().to_str().unwrap()]);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines[0], "algorithm,lo,hi,count");
    let parse = |line: &str| {
        let f: Vec<&str> = line.split(',').collect();
        (f[0].to_string(), f[1].parse::<f64>().unwrap(), f[2].parse::<f64>().unwrap(), f[3].parse::<usize>().unwrap())
    };
    assert_eq!(parse(lines[1]), ("ewa".into(), 1e-20, 1e10, 300));
    assert_eq!(parse(lines[2]), ("ridge".into(), 1e-30, 1e30, 100));
    assert_eq!(parse(lines[3]), ("lasso".into(), 1e-20, 1e10, 100));
}

#[test]
fn tampered_trace_fails_evaluation() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    synth(data.path(), &["--noise", "1"]);
    let common = ["--data", data.path().to_str().unwrap(), "--out", out.path().to_str().unwrap(), "--algorithm", "ewa", "--eta", "5e-6"];
    ok(&[&["forecast-online"], &common[..]].concat());
    let clean = ok(&[&["evaluate"], &common[..]].concat());
    assert!(clean.lines().all(|l| l.contains("pass")), "{clean}");

    let trace = out.path().join("BHP_S1.ewa.trace.csv");
    let text = std::fs::read_to_string(&trace).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    for line in lines.iter_mut().skip(1) {
        let mut f: Vec<String> = line.split(',').map(String::from).collect();
        f[1] = "1.0e4".into();
        *line = f.join(",");
    }
    std::fs::write(&trace, lines.join("\n") + "\n").unwrap();
    let status = seqagg(&[&["evaluate"], &common[..]].concat()).status;
    assert_eq!(status.code(), Some(2));
}

#[test]
fn forecasts_ignore_the_current_observation() {
    let data = tempfile::tempdir().unwrap();
    synth(data.path(), &["--noise", "1"]);
    let run = |out: &Path| {
        ok(&[
            "forecast-online",
            "--data",
            data.path().to_str().unwrap(),
            "--series",
            "BHP_S1",
            "--algorithm",
            "ridge",
            "--grid",
            "1e-2:1e4:5",
            "--out",
            out.to_str().unwrap(),
        ]);
        column(&out.join("BHP_S1.ridge.trace.csv"), 1)
    };
    let before = run(tempfile::tempdir().unwrap().path());

    let obs = data.path().join("BHP_S1.obs.csv");
    let text = std::fs::read_to_string(&obs).unwrap();
    let changed: Vec<String> = text
        .lines()
        .enumerate()
        .map(|(i, l)| if i == 30 { format!("30,{},{}", l.split(',').nth(1).unwrap(), "9.99e2") } else { l.to_string() })
        .collect();
    std::fs::write(&obs, changed.join("\n") + "\n").unwrap();
    let after = run(tempfile::tempdir().unwrap().path());
    assert_eq!(before[..30], after[..30]);
    assert_ne!(before[30..], after[30..]);
}

#[test]
fn interval_rejects_lasso() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    synth(data.path(), &[]);
    let o = seqagg(&[
        "forecast-interval",
        "--data",
        data.path().to_str().unwrap(),
        "--algorithm",
        "lasso",
        "--lambda",
        "1",
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("lasso"));
}

#[test]
fn interval_run_writes_plot_tables() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    synth(data.path(), &["--noise", "1"]);
    ok(&[
        "forecast-interval",
        "--data",
        data.path().to_str().unwrap(),
        "--algorithm",
        "ridge",
        "--lambda",
        "1",
        "--clamp",
        "0:600",
        "--out",
        out.path().to_str().unwrap(),
    ]);
    let header = std::fs::read_to_string(out.path().join("BHP_S1.ridge.interval.csv")).unwrap();
    assert!(header.starts_with("step,lo,hi,center,sigma_applied,shift\n"));
    let cone = std::fs::read_to_string(out.path().join("BHP_S2.cone.csv")).unwrap();
    assert!(cone.starts_with("step,cone_lo,cone_hi\n"));
    assert_eq!(cone.lines().nth(1).unwrap().split(',').next(), Some("41"));
}

#[test]
fn config_file_and_flag_override() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    synth(data.path(), &[]);
    let cfg = out.path().join("run.txt");
    std::fs::write(&cfg, format!("data = {}\nalgorithm = ridge\nlambda = 3\nburn_in = 10\n", data.path().display())).unwrap();
    ok(&["forecast-online", "--config", cfg.to_str().unwrap(), "--algorithm", "ewa", "--eta", "0.01", "--out", out.path().to_str().unwrap()]);
    assert!(out.path().join("BHP_S1.ewa.trace.csv").exists());
    assert!(!out.path().join("BHP_S1.ridge.trace.csv").exists());
    let burn = column(&out.path().join("rmse_summary.csv"), 3);
    assert_eq!(burn, vec!["10", "10"]);
}

#[test]
fn bad_flag_value_is_reported() {
    let o = seqagg(&["tune", "--grid", "1:2", "--out", "/tmp"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--grid"));
}
