use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn surropt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_surropt")).args(args).output().expect("binary runs")
}

fn write_spec(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("exp.toml");
    let out = dir.join("results");
    fs::write(&path, format!("output_dir = {:?}\n{body}", out.to_str().unwrap())).unwrap();
    path
}

const ONE_CELL: &str = r#"
budget = 60
seeds = [3]
[model]
id = "multimodal-1d"
noise_sd = 0.05
[[algorithms]]
id = "ucb"
"#;

fn result_dirs(root: &Path) -> Vec<PathBuf> {
    fs::read_dir(root).unwrap().map(|e| e.unwrap().path()).collect()
}

/// Trace with the wall-clock column removed.
fn strip_elapsed(csv: &str) -> String {
    csv.lines().map(|l| l.rsplit_once(',').unwrap().0).collect::<Vec<_>>().join("\n")
}

#[test]
fn one_algorithm_one_seed_writes_one_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), ONE_CELL);
    let out = surropt(&["optimize", spec.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dirs = result_dirs(&tmp.path().join("results"));
    assert_eq!(dirs.len(), 1);
    let traces: Vec<_> = fs::read_dir(dirs[0].join("traces")).unwrap().collect();
    assert_eq!(traces.len(), 1);
    assert!(dirs[0].join("traces/seed-3-ucb.csv").exists());
    assert!(dirs[0].join("spec.toml").exists());
    let summary = fs::read_to_string(dirs[0].join("summary.csv")).unwrap();
    let header: Vec<&str> = summary.lines().next().unwrap().split(',').collect();
    for line in summary.lines() {
        assert_eq!(line.split(',').count(), header.len(), "{line}");
    }
}

#[test]
fn rerun_reproduces_traces() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), ONE_CELL);
    let read = || {
        let out = surropt(&["optimize", spec.to_str().unwrap(), "--workers", "2"]);
        assert!(out.status.success());
        let dir = &result_dirs(&tmp.path().join("results"))[0];
        strip_elapsed(&fs::read_to_string(dir.join("traces/seed-3-ucb.csv")).unwrap())
    };
    let first = read();
    let second = read();
    assert_eq!(first, second);
}

#[test]
fn seed_and_override_flags_change_the_experiment() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), ONE_CELL);
    let out = surropt(&["optimize", spec.to_str().unwrap(), "--seed", "9", "--override", "budget=40"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = &result_dirs(&tmp.path().join("results"))[0];
    let trace = fs::read_to_string(dir.join("traces/seed-9-ucb.csv")).unwrap();
    let reps: u64 = trace.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse::<u64>().unwrap()).sum();
    assert_eq!(reps, 40);
    assert!(fs::read_to_string(dir.join("spec.toml")).unwrap().contains("budget = 40"));
}

#[test]
fn unknown_algorithm_is_reported_with_its_key() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), &ONE_CELL.replace("\"ucb\"", "\"simplex\""));
    let out = surropt(&["optimize", spec.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("algorithms.0.id") && err.contains("simplex"), "{err}");
}

#[test]
fn unknown_config_field_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), &format!("{ONE_CELL}config = {{ bogus = 1 }}\n"));
    let out = surropt(&["optimize", spec.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn approx_compare_full_rank_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("approx.toml");
    fs::write(&cfg, "n = 80\nms = [10, 80]\nvariants = [\"nystrom_naive\", \"nystrom_kernel\", \"rff\"]\n").unwrap();
    let out = surropt(&["approx-compare", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(tmp.path().join("approx.csv")).unwrap();
    let mut lines = table.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header[0], "variant");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    for row in &rows {
        assert_eq!(row.len(), header.len());
        let err: f64 = row[3].parse().unwrap();
        let var_err: f64 = row[4].parse().unwrap();
        assert!(err.is_finite() && var_err.is_finite());
        if row[0].starts_with("nystrom") && row[2] == "80" {
            assert!(err < 1e-6 && var_err < 1e-6, "{row:?}");
        }
    }
}

#[test]
fn selfcheck_passes_and_negative_control_fails() {
    let out = surropt(&["selfcheck"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 6, "{text}");

    let out = surropt(&["selfcheck", "--perturb", "kg-update"]);
    assert!(!out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    let failed: Vec<&str> = text.lines().filter(|l| l.starts_with("FAIL")).collect();
    assert_eq!(failed.len(), 1, "{text}");
    assert!(failed[0].contains("kg-update"));
}

#[test]
fn listings_name_models_and_algorithms() {
    let models = String::from_utf8(surropt(&["list-models"]).stdout).unwrap();
    assert!(models.contains("quadratic-2d") && models.contains("tandem-queue"));
    let algs = String::from_utf8(surropt(&["list-algorithms"]).stdout).unwrap();
    for id in ["rsm", "strong", "spas", "kg", "kg-saa", "ucb", "gps"] {
        assert!(algs.lines().any(|l| l.split_whitespace().next() == Some(id)), "{id}");
    }
}
