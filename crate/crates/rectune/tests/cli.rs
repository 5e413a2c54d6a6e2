//! End-to-end tests of the `rectune` binary: exit codes, workdir lifecycle,
//! reproducibility, report formats, and the fail-closed review gate.

use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use chrono::{TimeZone, Utc};
use rectune::agents::{CriticVerdict, ProposedCandidate};
use rectune::bench;
use rectune::memory::{MemoryStore, TaskRecord, TaskStatus};
use rectune::skillhub::save_skill;

fn rectune(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rectune"))
        .args(args)
        .stdin(Stdio::null())
        .output()
        .expect("spawn rectune")
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("exit code")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

/// Writes the benchmark skill and scenario fixtures and initializes a
/// workdir through the binary.
fn init_fixture(root: &Path) -> PathBuf {
    let skill_path = root.join("skill.json");
    let scenario_path = root.join("scenario.json");
    save_skill(&bench::planted_skill(), &skill_path).expect("skill fixture");
    bench::planted_scenario().save(&scenario_path).expect("scenario fixture");
    let workdir = root.join("work");
    let out = rectune(&[
        "init",
        "--workdir",
        workdir.to_str().unwrap(),
        "--skill",
        skill_path.to_str().unwrap(),
        "--scenario",
        scenario_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "init failed: {}", String::from_utf8_lossy(&out.stderr));
    workdir
}

fn run_loop_cli(workdir: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "loop",
        "--workdir",
        workdir.to_str().unwrap(),
        "--rounds",
        "3",
        "--batch",
        "4",
        "--seed",
        "5",
        "--num-requests",
        "100",
        "--fixed-clock",
        "1700000000:1",
    ];
    args.extend_from_slice(extra);
    rectune(&args)
}

#[test]
fn init_refuses_reinit_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let workdir = init_fixture(dir.path());
    let skill = dir.path().join("skill.json");
    let scenario = dir.path().join("scenario.json");

    let again = rectune(&[
        "init",
        "--workdir",
        workdir.to_str().unwrap(),
        "--skill",
        skill.to_str().unwrap(),
        "--scenario",
        scenario.to_str().unwrap(),
    ]);
    assert_eq!(code(&again), 1);
    assert!(String::from_utf8_lossy(&again.stderr).contains("already initialized"));

    let forced = rectune(&[
        "init",
        "--workdir",
        workdir.to_str().unwrap(),
        "--skill",
        skill.to_str().unwrap(),
        "--scenario",
        scenario.to_str().unwrap(),
        "--force",
    ]);
    assert_eq!(code(&forced), 0);
}

#[test]
fn loop_is_reproducible_and_reports_agree() {
    let run = |root: &Path| -> PathBuf {
        let workdir = init_fixture(root);
        let out = run_loop_cli(&workdir, &["--auto-approve"]);
        assert_eq!(code(&out), 0, "loop failed: {}", String::from_utf8_lossy(&out.stderr));
        assert!(stdout(&out).contains("round 3:"));
        workdir
    };
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let w1 = run(d1.path());
    let w2 = run(d2.path());

    // identical seed, clock, and flags: memory files match byte for byte
    let snapshot = |workdir: &Path| -> Vec<(String, Vec<u8>)> {
        let mut files = Vec::new();
        let mut stack = vec![workdir.join("memory")];
        while let Some(dir) = stack.pop() {
            for entry in std::fs::read_dir(&dir).expect("read_dir") {
                let path = entry.expect("entry").path();
                if path.is_dir() {
                    stack.push(path);
                } else if path.file_name().is_some_and(|n| n != "lock") {
                    let rel = path.strip_prefix(workdir).unwrap();
                    files.push((rel.to_string_lossy().into_owned(), std::fs::read(&path).unwrap()));
                }
            }
        }
        files.sort();
        files
    };
    assert_eq!(snapshot(&w1), snapshot(&w2));

    // report in both formats
    let md_out = rectune(&["report", "--workdir", w1.to_str().unwrap(), "--format", "md"]);
    assert_eq!(code(&md_out), 0);
    let md = std::fs::read_to_string(w1.join("reports/report.md")).expect("report.md");
    let csv_out = rectune(&["report", "--workdir", w1.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(code(&csv_out), 0);
    let csv_text = std::fs::read_to_string(w1.join("reports/report.csv")).expect("report.csv");

    // CSV parses under a strict RFC-4180 reader with a uniform field count
    let mut reader = csv::ReaderBuilder::new()
        .flexible(false)
        .from_reader(csv_text.as_bytes());
    let mut elites_csv = Vec::new();
    let mut round_rows = 0;
    for record in reader.records() {
        let record = record.expect("well-formed csv");
        assert_eq!(record.len(), 8);
        match &record[0] {
            "elite" => elites_csv.push((record[2].to_string(), record[3].to_string())),
            "round" => round_rows += 1,
            other => panic!("unknown section `{other}`"),
        }
    }
    assert!(round_rows >= 3);
    assert!(!elites_csv.is_empty());

    // the markdown elite table carries the same tasks and utilities
    let elite_lines: Vec<&str> = md
        .lines()
        .skip_while(|l| !l.starts_with("## Elite Archive"))
        .filter(|l| l.starts_with("| r"))
        .collect();
    assert_eq!(elite_lines.len(), elites_csv.len());
    for (line, (task, utility)) in elite_lines.iter().zip(&elites_csv) {
        let cells: Vec<&str> = line.split('|').map(str::trim).collect();
        assert_eq!(cells[1], task);
        assert_eq!(cells[2], utility);
    }
}

#[test]
fn review_gate_fails_closed_without_tty() {
    let dir = tempfile::tempdir().unwrap();
    let workdir = init_fixture(dir.path());
    // no --auto-approve and stdin is not a TTY: refuse to launch
    let out = run_loop_cli(&workdir, &[]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("review gate"));
}

#[test]
fn report_on_empty_history_is_a_clean_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let workdir = init_fixture(dir.path());
    let out = rectune(&["report", "--workdir", workdir.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("nothing to report"));
    assert!(!workdir.join("reports/report.md").exists());
}

#[test]
fn exit_codes_follow_the_discipline() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    // validation error: uninitialized workdir
    let out = rectune(&["report", "--workdir", missing.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    // usage error from the argument parser
    let out = rectune(&["report", "--workdir"]);
    assert_eq!(code(&out), 1);
    // runtime error: collecting an unknown experiment handle
    let workdir = init_fixture(dir.path());
    let out = rectune(&["collect", "--workdir", workdir.to_str().unwrap(), "nope"]);
    assert_eq!(code(&out), 2);
    // --help is not an error
    let out = rectune(&["--help"]);
    assert_eq!(code(&out), 0);
}

#[test]
fn propose_critique_run_collect_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let workdir = init_fixture(dir.path());

    let out = rectune(&[
        "propose",
        "--workdir",
        workdir.to_str().unwrap(),
        "--batch",
        "3",
        "--seed",
        "9",
    ]);
    assert_eq!(code(&out), 0);
    let proposals: Vec<ProposedCandidate> =
        serde_json::from_str(&stdout(&out)).expect("proposal JSON");
    assert_eq!(proposals.len(), 3);

    let input = dir.path().join("proposals.json");
    std::fs::write(&input, stdout(&out)).unwrap();
    let out = rectune(&[
        "critique",
        "--workdir",
        workdir.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--keep",
        "2",
    ]);
    assert_eq!(code(&out), 0);
    let verdict: CriticVerdict = serde_json::from_str(&stdout(&out)).expect("verdict JSON");
    assert_eq!(verdict.verdicts.len(), 3);
    assert_eq!(verdict.approved.len(), 2);

    // record the first approved proposal and launch it manually
    let task_id = "manual-1";
    {
        let store = MemoryStore::open(workdir.join("memory/planted")).expect("store");
        let chosen = &proposals[verdict.approved[0]];
        let record = TaskRecord::new(
            task_id,
            &chosen.config,
            &chosen.explanation,
            Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
        );
        store.write_task(&record).expect("write");
    }
    let out = rectune(&[
        "run",
        "--workdir",
        workdir.to_str().unwrap(),
        "--num-requests",
        "100",
        "--auto-approve",
        task_id,
    ]);
    assert_eq!(code(&out), 0, "run failed: {}", String::from_utf8_lossy(&out.stderr));
    let handle = stdout(&out).trim().to_string();

    let out = rectune(&["collect", "--workdir", workdir.to_str().unwrap(), &handle]);
    assert_eq!(code(&out), 0, "collect failed: {}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("Completed"));
    {
        // scoped so the advisory lock is free again for the next subprocess
        let store = MemoryStore::open(workdir.join("memory/planted")).expect("store");
        let record = store.read_task(task_id).expect("record");
        assert_eq!(record.status, TaskStatus::Completed);
        assert!(record.results.is_some());
    }

    // insight and evolve run cleanly on the resulting history
    let out = rectune(&["insight", "--workdir", workdir.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(workdir.join("memory/planted/insights.json").exists());
}
