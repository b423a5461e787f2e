//! End-to-end checks of the `uat20` binary: exit-code contract, report
//! shape, and output determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn uat20(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uat20"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8(output.stdout.clone()).unwrap()
}

fn stderr(output: &Output) -> String {
    String::from_utf8(output.stderr.clone()).unwrap()
}

fn figure1_path() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios/figure1.scn")
        .display()
        .to_string()
}

fn tmp_file(name: &str, contents: &str) -> PathBuf {
    let path = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    std::fs::write(&path, contents).unwrap();
    path
}

#[test]
fn run_figure1_reports_the_conflict_and_exits_zero() {
    let output = uat20(&["run", &figure1_path(), "--dump-state", "--trace"]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr(&output));
    let text = stdout(&output);
    assert!(text.contains("BLOCK 1 TE=R1-E1-0 TU=R1-E1-1,R2-E1-0"), "{text}");
    assert!(text.contains("STATUS R1-E1-0 COMMITTED"));
    assert!(text.contains("STATUS R1-E1-1 COMMITTED"));
    assert!(text.contains("STATUS R2-E1-0 FAILED(insufficient_balance)"));
    assert!(text.contains("UAT20.BU 0x000000000000000000000000000000000000000a 60"));
    assert!(text.contains("UAT20.BU 0x000000000000000000000000000000000000000c 40"));
    assert!(text.contains("INVARIANT digest_convergence PASS"));
    assert!(text.contains("SYNC 1 -> R2 "));
    assert!(text.contains("DIGEST "));
}

#[test]
fn run_output_is_deterministic() {
    let args = ["run", &figure1_path(), "--dump-state", "--trace"];
    let first = uat20(&args);
    let second = uat20(&args);
    assert_eq!(first.status.code(), Some(0));
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn run_missing_file_exits_one() {
    let output = uat20(&["run", "missing.scn"]);
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr(&output).contains("missing.scn"));
}

#[test]
fn run_parse_error_reports_line_and_exits_one() {
    let path = tmp_file(
        "bad.scn",
        "ROLLUPS 1\nE20XFER 1 0x000000000000000000000000000000000000000c 0x000000000000000000000000000000000000000a 1\n",
    );
    let output = uat20(&["run", path.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(1));
    let err = stderr(&output);
    assert!(err.contains("line 2"), "{err}");
    assert!(err.contains("EPOCH"), "{err}");
}

#[test]
fn fuzz_is_deterministic_and_reports_summary() {
    let args = ["fuzz", "--seed", "42", "--runs", "3"];
    let first = uat20(&args);
    let second = uat20(&args);
    assert_eq!(first.status.code(), Some(0), "stderr: {}", stderr(&first));
    assert_eq!(first.stdout, second.stdout);
    let text = stdout(&first);
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().all(|l| l.starts_with("FUZZ seed=") && l.ends_with("status=OK")));
}

#[test]
fn fuzz_rejects_bad_bounds() {
    let output = uat20(&["fuzz", "--rollups", "0"]);
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr(&output).contains("--rollups"));
}

#[test]
fn analyze_planted_log_finds_expected_events() {
    let log = uat20::analyzer::synth::planted_log(5, 40, 10);
    let text: String = log.iter().map(|r| format!("{r}\n")).collect();
    let path = tmp_file("planted.log", &text);
    let output = uat20(&["analyze", path.to_str().unwrap(), "--stats"]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr(&output));
    let text = stdout(&output);
    assert_eq!(text.lines().filter(|l| l.starts_with("EVENT ")).count(), 10);
    assert!(text.contains("UNIFICATION events=10 outs=40 share=25.00%"), "{text}");
    assert!(text.contains("FRAGTOTAL ALL multi="));
}

#[test]
fn analyze_empty_log_exits_zero() {
    let path = tmp_file("empty.log", "# nothing here\n");
    let output = uat20(&["analyze", path.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(0));
    assert!(stdout(&output).contains("UNIFICATION events=0 outs=0 share=0.00%"));
}

#[test]
fn analyze_rejects_zero_window_and_unsorted_logs() {
    let path = tmp_file("any.log", "");
    let output = uat20(&["analyze", path.to_str().unwrap(), "--window-seconds", "0"]);
    assert_eq!(output.status.code(), Some(1));

    let unsorted = "100 chainA T 0x000000000000000000000000000000000000000a IN 5\n\
                    50 chainA T 0x000000000000000000000000000000000000000a IN 5\n";
    let path = tmp_file("unsorted.log", unsorted);
    let output = uat20(&["analyze", path.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr(&output).contains("unsorted_log"));
}

#[test]
fn usage_errors_exit_one_not_two() {
    let output = uat20(&["run"]);
    assert_eq!(output.status.code(), Some(1));
    let output = uat20(&["no-such-command"]);
    assert_eq!(output.status.code(), Some(1));
}
