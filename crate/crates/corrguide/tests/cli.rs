use std::path::Path;
use std::process::{Command, Output};

use corrguide::report::{read_csv, read_json};
use corrguide::trace::read_trace_file;

fn corrguide(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_corrguide")).args(args).current_dir(cwd).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn gen_writes_two_files_per_seed_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let out = corrguide(&["gen", "--seed", "4", "--count", "1", "--out", "a"], dir.path());
    assert_eq!(code(&out), 0);
    let mut names: Vec<String> = std::fs::read_dir(dir.path().join("a")).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["scene_000004.crfs", "scene_000004.json"]);
    let manifest: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(manifest["seed"], 4);

    assert_eq!(code(&corrguide(&["gen", "--seed", "4", "--count", "1", "--out", "b"], dir.path())), 0);
    for name in &names {
        assert_eq!(std::fs::read(dir.path().join("a").join(name)).unwrap(), std::fs::read(dir.path().join("b").join(name)).unwrap());
    }
}

#[test]
fn gen_defaults_to_500_scenes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&corrguide(&["gen", "--out", "s"], dir.path())), 0);
    assert_eq!(std::fs::read_dir(dir.path().join("s")).unwrap().count(), 1000);
}

#[test]
fn run_reads_generated_scenes_and_reports_metrics() {
    let dir = tempfile::tempdir().unwrap();
    corrguide(&["gen", "--seed", "2", "--count", "1", "--out", "."], dir.path());
    let out = corrguide(&["run", "--scene", "scene_000002.crfs", "--mode", "noguide", "--out", "t.jsonl"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let line = String::from_utf8(out.stdout).unwrap();
    assert!(line.starts_with("mode=noguide seed=2 steps=50 psnr="), "{line}");
    assert!(line.contains("ssim=") && line.contains("correct="));
    let traces = read_trace_file(&dir.path().join("t.jsonl")).unwrap();
    assert_eq!(traces.len(), 50);
    assert!(traces.iter().all(|t| !t.masked && !t.optimized));
}

#[test]
fn run_from_file_matches_run_from_seed() {
    let dir = tempfile::tempdir().unwrap();
    corrguide(&["gen", "--seed", "9", "--count", "1", "--out", "."], dir.path());
    let from_file = corrguide(&["run", "--scene", "scene_000009.crfs", "--out", "f.jsonl"], dir.path());
    let from_seed = corrguide(&["run", "--seed", "9", "--out", "s.jsonl"], dir.path());
    assert_eq!(from_file.stdout, from_seed.stdout);
    assert_eq!(std::fs::read(dir.path().join("f.jsonl")).unwrap(), std::fs::read(dir.path().join("s.jsonl")).unwrap());
}

#[test]
fn usage_and_input_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&corrguide(&["run", "--scene", "missing.crfs"], dir.path())), 2);
    assert_eq!(code(&corrguide(&["run", "--mode", "everything"], dir.path())), 2);
    assert_eq!(code(&corrguide(&["frobnicate"], dir.path())), 2);
    assert_eq!(code(&corrguide(&["run", "--seed", "minus-one"], dir.path())), 2);
    let junk = write(dir.path(), "junk.crfs", "CRFS but not really");
    assert_eq!(code(&corrguide(&["run", "--scene", &junk], dir.path())), 2);
    let unknown = write(dir.path(), "u.json", r#"{"stepz_total": 5}"#);
    assert_eq!(code(&corrguide(&["run", "--config", &unknown], dir.path())), 2);
    let future = write(dir.path(), "v.json", r#"{"version": 2}"#);
    assert_eq!(code(&corrguide(&["run", "--config", &future], dir.path())), 2);
    let invalid = write(dir.path(), "i.json", r#"{"steps_total": 10, "step_o": 11}"#);
    assert_eq!(code(&corrguide(&["run", "--config", &invalid], dir.path())), 2);
    assert_eq!(code(&corrguide(&["--help"], dir.path())), 0);
}

#[test]
fn numeric_failures_exit_3_with_the_step() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"steps_total": 5, "scene": {"amplitude": 1e307}}"#);
    let out = corrguide(&["run", "--config", &cfg], dir.path());
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("at step 0"));
}

#[test]
fn empty_config_is_valid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", "{}");
    let with = corrguide(&["run", "--config", &cfg, "--seed", "1"], dir.path());
    let without = corrguide(&["run", "--seed", "1"], dir.path());
    assert_eq!(code(&with), 0);
    assert_eq!(with.stdout, without.stdout);
}

#[test]
fn ablate_restricts_rows_to_the_requested_modes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"steps_total": 6}"#);
    let out = corrguide(&["ablate", "--config", &cfg, "--count", "3", "--modes", "full,noacc", "--jobs", "2", "--out", "r"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&dir.path().join("r/report.json")).unwrap();
    let names: Vec<&str> = report.modes.iter().map(|m| m.mode.as_str()).collect();
    assert_eq!(names, ["full", "noacc"]);
    assert!(report.modes.iter().all(|m| m.correct_curve.len() == 6 && m.lpips.is_none() && m.runs == 3));
    assert_eq!(read_csv(&dir.path().join("r/report.csv")).unwrap().len(), 2);
    assert!(dir.path().join("r/curve_noacc.csv").exists());
}

#[test]
fn ablate_records_failed_seeds_and_still_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    // Shifts of 8 or more columns leave no overlap on an 8-wide grid.
    let cfg = write(dir.path(), "c.json", r#"{"steps_total": 4, "shift_range": [0, 12]}"#);
    let out = corrguide(&["ablate", "--config", &cfg, "--count", "12", "--modes", "noguide", "--out", "r"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&dir.path().join("r/report.json")).unwrap();
    assert!(!report.failures.is_empty());
    let row = &report.modes[0];
    assert_eq!(row.runs + row.failures, 12);
    assert_eq!(row.failures, report.failures.len());
}

#[test]
fn gradcheck_passes_fails_when_corrupted_and_ignores_str_o() {
    let dir = tempfile::tempdir().unwrap();
    let ok = corrguide(&["gradcheck", "--seed", "3"], dir.path());
    assert_eq!(code(&ok), 0);
    let bad = corrguide(&["gradcheck", "--seed", "3", "--corrupt-gradient"], dir.path());
    assert_ne!(code(&bad), 0);
    let cfg = write(dir.path(), "c.json", r#"{"str_o": 7.5}"#);
    let other = corrguide(&["gradcheck", "--seed", "3", "--config", &cfg], dir.path());
    assert_eq!(code(&other), 0);
    assert_eq!(ok.stdout, other.stdout);
}
