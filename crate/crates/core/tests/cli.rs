use std::path::Path;
use std::process::Command;

use vibrotact::cli::{run, CliError};
use vibrotact::psychophysics::{read_jsonl_log, TrialRecord, TRIAL_LOG_SCHEMA};
use vibrotact::texture::{save_trace, AccelTrace};

fn args(list: &[&str]) -> Vec<String> {
    std::iter::once("vibrotact").chain(list.iter().copied()).map(String::from).collect()
}

fn run_ok(list: &[&str]) {
    if let Err(e) = run(args(list)) {
        panic!("{list:?} failed: {e}");
    }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn zero_trace(path: &Path) {
    let z = vec![0.0; 2000];
    save_trace(&AccelTrace::from_axes(0.0, 2000.0, &z, &z, &z).unwrap(), path).unwrap();
}

#[test]
fn synth_writes_ten_reproducible_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("nested/a");
    let b = dir.path().join("b");
    run_ok(&["synth", "--out", p(&a), "--seed", "7"]);
    run_ok(&["synth", "--out", p(&b), "--seed", "7"]);
    let mut csvs: Vec<String> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    csvs.sort();
    assert_eq!(csvs.len(), 10);
    assert!(csvs.contains(&"P60_v1.csv".to_string()) && csvs.contains(&"P1000_v2.csv".to_string()));
    for name in &csvs {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
    assert!(a.join("manifest.json").exists());
}

#[test]
fn zero_trace_renders_zero_duty() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("silent.csv");
    zero_trace(&input);
    let out = dir.path().join("out");
    run_ok(&["render", "--input", p(&input), "--out", p(&out)]);
    let pwm = std::fs::read_to_string(out.join("silent_pwm.csv")).unwrap();
    let mut lines = pwm.lines();
    assert_eq!(lines.next(), Some("t,duty"));
    let duties: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(duties.len(), 1000);
    assert!(duties.iter().all(|&d| d == 0.0));
    assert!(out.join("silent_rendered.csv").exists());
    assert!(out.join("silent_thumb_pwm.csv").exists());
}

#[test]
fn streamed_render_matches_batch_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let bank = dir.path().join("bank");
    run_ok(&["synth", "--out", p(&bank)]);
    let input = bank.join("P80_v1.csv");
    let batch = dir.path().join("batch");
    let chunked = dir.path().join("chunked");
    for reduction in ["magnitude", "dft321"] {
        run_ok(&["render", "--input", p(&input), "--out", p(&batch), "--reduction", reduction]);
        run_ok(&["render", "--input", p(&input), "--out", p(&chunked), "--stream-chunk", "64", "--reduction", reduction]);
        for f in ["P80_v1_pwm.csv", "P80_v1_rendered.csv"] {
            assert_eq!(std::fs::read(batch.join(f)).unwrap(), std::fs::read(chunked.join(f)).unwrap(), "{reduction} {f}");
        }
    }
}

#[test]
fn bad_config_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"pipeline": {"lp_cutoff_hz": 5000.0}}"#).unwrap();
    let err = run(args(&["--config", p(&cfg), "sus", "--items", "3,3,3,3,3,3,3,3,3,3"])).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("lp_cutoff"), "{err}");
    let err = run(args(&["sus", "--items", "3,3,3", "--hp-cutoff", "600"])).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn usage_errors_exit_with_one() {
    assert!(matches!(run(args(&["frobnicate"])), Err(CliError::Usage(_))));
    assert!(matches!(run(args(&["report", "--input", "x.jsonl"])), Err(CliError::Usage(_))));
    assert!(matches!(run(args(&["identify", "--feedback", "maybe"])), Err(CliError::Usage(_))));
}

#[test]
fn experiment_fit_report_chain() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("logs/s1.jsonl");
    run_ok(&["experiment", "--seed", "3", "--out", p(&log), "--subject", "s1"]);
    let records: Vec<TrialRecord> =
        read_jsonl_log(std::io::BufReader::new(std::fs::File::open(&log).unwrap()), TRIAL_LOG_SCHEMA).unwrap();
    assert_eq!(records.len(), 100);
    assert!(log.with_file_name("s1.jsonl.manifest.json").exists());

    let fit = dir.path().join("fit.json");
    run_ok(&["fit", "--input", p(&log), "--bootstrap", "200", "--seed", "5", "--out", p(&fit)]);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&fit).unwrap()).unwrap();
    assert_eq!(v["method"], "probit-ml");
    assert_eq!(v["n_trials"], 100);
    assert_eq!(v["bootstrap"]["n_resamples"], 200);
    assert_eq!(v["bootstrap"]["seed"], 5);
    assert!(v["jnd_um"].as_f64().unwrap() > 0.0);
    assert!(v["ci_jnd"][0].as_f64().unwrap() < v["ci_jnd"][1].as_f64().unwrap());

    let table = dir.path().join("pairwise.json");
    run_ok(&["report", "--input", p(&log), "--pairwise", "--out", p(&table)]);
    let t: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&table).unwrap()).unwrap();
    let rows = t["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r["n_trials"] == 20));
}

#[test]
fn scripted_responses_drive_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("r.txt");
    let responses: String = (0..100).map(|i| if i % 2 == 0 { "1\n" } else { "0\n" }).collect();
    std::fs::write(&script, responses).unwrap();
    let log = dir.path().join("log.jsonl");
    run_ok(&["experiment", "--responses", p(&script), "--out", p(&log)]);
    let records: Vec<TrialRecord> =
        read_jsonl_log(std::io::BufReader::new(std::fs::File::open(&log).unwrap()), TRIAL_LOG_SCHEMA).unwrap();
    assert!(records.iter().enumerate().all(|(i, r)| r.response_cmp_rougher == (i % 2 == 0)));

    std::fs::write(&script, "1\n0\n").unwrap();
    assert_eq!(run(args(&["experiment", "--responses", p(&script), "--out", p(&log)])).unwrap_err().exit_code(), 2);
}

#[test]
fn separated_responses_do_not_converge() {
    let dir = tempfile::tempdir().unwrap();
    let bank = dir.path().join("bank");
    run_ok(&["synth", "--out", p(&bank)]);
    // Answer "rougher" exactly for the two roughest comparisons: perfectly separated.
    let plan = vibrotact::psychophysics::build_plan(1);
    let script: String = plan.trials.iter().map(|t| if t.level >= 3 { "1\n" } else { "0\n" }).collect();
    let script_path = dir.path().join("r.txt");
    std::fs::write(&script_path, script).unwrap();
    let log = dir.path().join("log.jsonl");
    run_ok(&["experiment", "--seed", "1", "--responses", p(&script_path), "--bank", p(&bank), "--out", p(&log)]);
    let err = run(args(&["fit", "--input", p(&log)])).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
    assert!(err.to_string().contains("separation"));
}

#[test]
fn missing_bank_variant_fails_before_trials() {
    let dir = tempfile::tempdir().unwrap();
    let bank = dir.path().join("bank");
    run_ok(&["synth", "--out", p(&bank)]);
    std::fs::remove_file(bank.join("P220_v2.csv")).unwrap();
    let log = dir.path().join("log.jsonl");
    let err = run(args(&["experiment", "--bank", p(&bank), "--out", p(&log)])).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(!log.exists());
}

#[test]
fn identify_and_confusion_report() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("id.jsonl");
    run_ok(&["identify", "--feedback", "off", "--reps", "5", "--out", p(&log)]);
    let out = dir.path().join("cm.json");
    let csv = dir.path().join("cm.csv");
    run_ok(&["report", "--input", p(&log), "--confusion", "--out", p(&out), "--csv", p(&csv)]);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let counts = v["matrix"]["counts"].as_array().unwrap();
    let total: u64 = counts.iter().flat_map(|r| r.as_array().unwrap()).map(|c| c.as_u64().unwrap()).sum();
    assert_eq!(total, 25);
    for row in counts {
        assert_eq!(row.as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).sum::<u64>(), 5);
    }
    assert_eq!(v["matrix"]["labels"][0]["fepa_grade"], "P60");
    assert!(std::fs::read_to_string(&csv).unwrap().starts_with("presented\\chosen,P60"));
}

#[test]
fn binary_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_vibrotact");
    let ok = Command::new(bin).args(["sus", "--items", "5,1,5,1,5,1,5,1,5,1"]).output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(v["score"], 100.0);
    assert!(String::from_utf8_lossy(&ok.stderr).contains("\"command\": \"sus\""));
    let usage = Command::new(bin).arg("--bogus").output().unwrap();
    assert_eq!(usage.status.code(), Some(1));
    let data = Command::new(bin).args(["sus", "--items", "9,1,5,1,5,1,5,1,5,1"]).output().unwrap();
    assert_eq!(data.status.code(), Some(2));
    let missing = Command::new(bin).args(["fit", "--input", "/nonexistent/log.jsonl"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn demo_is_reproducible_and_job_count_independent() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let common = ["demo", "--seed", "4", "--subjects", "5", "--insensitive", "1", "--bootstrap", "200"];
    let mut with_a = common.to_vec();
    with_a.extend(["--out", p(&a), "--jobs", "1"]);
    let mut with_b = common.to_vec();
    with_b.extend(["--out", p(&b), "--jobs", "3"]);
    run_ok(&with_a);
    run_ok(&with_b);
    let ra = std::fs::read(a.join("report.json")).unwrap();
    assert_eq!(ra, std::fs::read(b.join("report.json")).unwrap());
    let logs = std::fs::read_dir(a.join("logs")).unwrap().count();
    assert_eq!(logs, 5);
    let v: serde_json::Value = serde_json::from_slice(&ra).unwrap();
    assert_eq!(v["subjects"].as_array().unwrap().len(), 5);
    assert!(v["pooled"]["converged"].as_bool().unwrap());
}
