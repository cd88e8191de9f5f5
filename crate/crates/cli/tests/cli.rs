use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lead(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lead"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = r#"
dataset = "d.csv"
validation = "v.csv"
budget = 300
alpha = 0.05
log = "log.jsonl"
seed = 4
[gen]
group_sizes = [120, 90, 100]
dim = 4
label_noise = [0.5, 0.0, 0.5]
validation_size = 40
"#;

fn small_setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), SMALL).unwrap();
    let o = lead(&["gen", "--config", "c.toml"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    dir
}

#[test]
fn gen_is_deterministic() {
    let dir = small_setup();
    let first = fs::read(dir.path().join("d.csv")).unwrap();
    let o = lead(&["gen", "--config", "c.toml"], dir.path());
    assert!(o.status.success());
    assert_eq!(first, fs::read(dir.path().join("d.csv")).unwrap());
    assert!(dir.path().join("v.csv").exists());
}

#[test]
fn gen_reference_sizes_row_count() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("c.toml"),
        "dataset = \"big.csv\"\n[gen]\ngroup_sizes = [62828, 61844, 71712, 69728, 93923, 107415, 52574]\ndim = 2\nvalidation_size = 0\n",
    )
    .unwrap();
    let o = lead(&["gen", "--config", "c.toml"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("big.csv")).unwrap();
    assert_eq!(text.lines().count() - 1, 520024);
}

#[test]
fn gen_zero_samples_fails_without_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), "dataset = \"z.csv\"\n[gen]\ngroup_sizes = [0, 0]\n").unwrap();
    let o = lead(&["gen", "--config", "c.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(!dir.path().join("z.csv").exists());
}

#[test]
fn plan_reference_example() {
    let dir = tempfile::tempdir().unwrap();
    let o = lead(
        &["plan", "--sizes", "62828,61844,71712,69728,93923,107415,52574", "--budget", "15000", "--out", "p.txt"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("T_min           = 14"), "{out}");
    assert!(out.contains("b*              = 0.0918"), "{out}");
    let saved = fs::read_to_string(dir.path().join("p.txt")).unwrap();
    assert!(saved.contains("min_steps = 14"));
}

#[test]
fn plan_infeasible_exact_steps() {
    let dir = tempfile::tempdir().unwrap();
    let o = lead(
        &["plan", "--sizes", "62828,61844,71712,69728,93923,107415,52574", "--budget", "15000", "--steps", "5", "--exact"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("raw b = -1.54"), "{}", stderr(&o));
}

#[test]
fn plan_equal_sizes_has_unit_factor() {
    let dir = tempfile::tempdir().unwrap();
    let o = lead(&["plan", "--sizes", "1000,1000", "--budget", "300", "--alpha", "0.1"], dir.path());
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("CV^2            = 0.0000"), "{out}");
    // n0 = 100, T_min = 3 + 1, b* = 1 - 300 / 400
    assert!(out.contains("T_min           = 4") && out.contains("b*              = 0.2500"), "{out}");
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "budgett = 10\n").unwrap();
    fs::write(dir.path().join("range.toml"), "alpha = 2.0\n").unwrap();
    for f in ["bad.toml", "range.toml", "missing.toml"] {
        let o = lead(&["run", "--config", f], dir.path());
        assert_eq!(o.status.code(), Some(2), "{f}: {}", stderr(&o));
    }
}

#[test]
fn run_then_report() {
    let dir = small_setup();
    let o = lead(&["run", "--config", "c.toml"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let iterations: usize = out
        .lines()
        .find(|l| l.contains("\"iterations\""))
        .and_then(|l| l.split(':').nth(1))
        .map(|v| v.trim().trim_end_matches(',').parse().unwrap())
        .unwrap();
    assert!(out.contains("final_validation_loss"));

    let o = lead(&["report", "log.jsonl", "--budget", "300"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let table = stdout(&o);
    assert_eq!(table.lines().count(), iterations + 1);
    assert!(table.starts_with("t\tarm\tbatch_size"));
}

#[test]
fn run_logs_are_byte_identical() {
    let dir = small_setup();
    lead(&["run", "--config", "c.toml"], dir.path());
    let a = fs::read(dir.path().join("log.jsonl")).unwrap();
    lead(&["run", "--config", "c.toml"], dir.path());
    assert_eq!(a, fs::read(dir.path().join("log.jsonl")).unwrap());
}

#[test]
fn report_names_first_malformed_line() {
    let dir = small_setup();
    lead(&["run", "--config", "c.toml"], dir.path());
    let log = fs::read_to_string(dir.path().join("log.jsonl")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    let cut = format!("{}\n{}\n{}", lines[0], lines[1], &lines[2][..lines[2].len() / 2]);
    fs::write(dir.path().join("cut.jsonl"), cut).unwrap();
    let o = lead(&["report", "cut.jsonl"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn cluster_prints_sizes() {
    let dir = small_setup();
    let o = lead(&["cluster", "--config", "c.toml"], dir.path());
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("arms = 3"));
    assert!(out.contains("size 120") && out.contains("size 90") && out.contains("size 100"));
}

#[test]
fn verify_reports_each_check() {
    let dir = tempfile::tempdir().unwrap();
    let o = lead(&["verify"], dir.path());
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 9);
    let failed: Vec<&&str> = lines.iter().filter(|l| l.starts_with("FAIL")).collect();
    // the exit status tracks the aggregate
    assert_eq!(o.status.code(), Some(if failed.is_empty() { 0 } else { 3 }));
    for l in &lines {
        assert!(l.starts_with("PASS") || l.contains("exp3_steady_state"), "{l}");
    }
}
