use std::path::Path;
use std::process::{Command, Output};

fn pbos(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pbos"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run pbos")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = r#"
priors = ["central_informative", "flat"]
cil_targets = [{ percentile = 0.25 }]
tl_grid = [0.0, 0.3, 0.6]
n_min = [10]
replicates = 4
m = 20
threshold_reps = 200
"#;

fn write_config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    std::fs::write(&path, SMALL).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn simulate_is_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let o = pbos(&["simulate", "--config", &cfg, "--seed", "5", "--out", a.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("2 cells, 32 experiments"), "{}", stdout(&o));
    let o = pbos(&["simulate", "--config", &cfg, "--seed", "5", "--out", b.to_str().unwrap(), "--parallel", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["experiments.csv", "summary.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let csv = std::fs::read_to_string(a.join("experiments.csv")).unwrap();
    assert!(csv.starts_with("cell_id,prior_name,cil_target,cil_target_pct,tl,n_min,n_max,replicate,method,"));

    let c = dir.path().join("c");
    pbos(&["simulate", "--config", &cfg, "--seed", "6", "--out", c.to_str().unwrap()]);
    assert_ne!(std::fs::read(a.join("experiments.csv")).unwrap(), std::fs::read(c.join("experiments.csv")).unwrap());
}

#[test]
fn threshold_matches_grid_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("grid");
    assert!(pbos(&["simulate", "--config", &cfg, "--seed", "9", "--out", out.to_str().unwrap()]).status.success());
    let o = pbos(&["threshold", "--config", &cfg, "--seed", "9"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("prior_name,percentile,cil_thres"));
    let summary = std::fs::read_to_string(out.join("summary.json")).unwrap();
    for line in lines {
        let cil = line.rsplit(',').next().unwrap();
        assert!(summary.contains(&format!("\"cil_target\": {cil}")), "{line} not in summary");
    }
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "replicates = 2\nunknown_key = 1\n").unwrap();
    let o = pbos(&["simulate", "--config", bad.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("unknown_key"), "{}", stderr(&o));

    let o = pbos(&["threshold", "--prior", "nope", "--percentile", "0.5"]);
    assert!(!o.status.success());

    let o = pbos(&["simulate", "--replicates", "0"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("replicates"));
}

#[test]
fn fcw_reports_too_few_groups() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fcw");
    let o = pbos(&["fcw", "--groups", "300", "--replicates", "50", "--seed", "1", "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("balanced resample"), "{}", stderr(&o));
}

#[test]
fn fcw_log_space_small_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("fcw.toml");
    std::fs::write(&cfg, "preset = \"log_space\"\ngroups = 2000\nper_class = 5\nm = 20\n").unwrap();
    let out = dir.path().join("fcw");
    let o = pbos(&["fcw", "--config", cfg.to_str().unwrap(), "--seed", "2", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("reach probability"));
    assert!(out.join("fcw_experiments.csv").exists());
    assert!(out.join("fcw_summary.json").exists());
}
