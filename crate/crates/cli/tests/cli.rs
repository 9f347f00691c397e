//! The `iqsched` binary and `run_command` on the bundled scenarios.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use iqsched_cli::output::read_metrics;
use iqsched_cli::{run_command, Command, Outcome, Overrides, RunConfig};
use iqsched_core::{Fraction, Policy};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn run(command: Command, scn: Option<&str>, out: &Path, overrides: Overrides) -> Outcome {
    run_command(&RunConfig {
        command,
        scenario: scn.map(scenario),
        out: out.to_path_buf(),
        overrides,
    })
    .unwrap()
}

#[test]
fn single_on_case_three() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        run(
            Command::Single,
            Some("case3.conf"),
            dir.path(),
            Overrides::default()
        ),
        Outcome::Completed
    );
    let rows = read_metrics(&dir.path().join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].num_batches, 2);
    assert!(rows[0].deadline_met);
    assert_eq!(rows[0].total_cost_us, 5_000_000);
    let trace = fs::read_to_string(dir.path().join("trace_case3.csv")).unwrap();
    assert!(trace.contains("7000000,batch_start,case3,6,3000000"));
    assert!(trace.contains("10000000,batch_start,case3,4,2000000"));
}

#[test]
fn constraint_matches_single() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run(
        Command::Single,
        Some("case3.conf"),
        a.path(),
        Overrides::default(),
    );
    run(
        Command::Constraint,
        Some("case3.conf"),
        b.path(),
        Overrides::default(),
    );
    let ra = read_metrics(&a.path().join("metrics.csv")).unwrap();
    let rb = read_metrics(&b.path().join("metrics.csv")).unwrap();
    assert_eq!(ra[0].total_cost_us, rb[0].total_cost_us);
    assert_eq!(ra[0].num_batches, rb[0].num_batches);
    assert_eq!(rb[0].policy, "constraint");
}

#[test]
fn sweep_produces_24_groups() {
    let dir = tempfile::tempdir().unwrap();
    run(
        Command::Sweep,
        Some("stagger.conf"),
        dir.path(),
        Overrides::default(),
    );
    let rows = read_metrics(&dir.path().join("metrics.csv")).unwrap();
    let mut groups: Vec<(String, String)> = rows
        .iter()
        .map(|r| (r.policy.clone(), r.delta.clone()))
        .collect();
    groups.dedup();
    assert_eq!(groups.len(), 24);
    assert_eq!(rows.len(), 24 * 12);
    assert_eq!(groups[0], ("edf".to_string(), "1".to_string()));
    assert_eq!(groups[23], ("rr".to_string(), "0.1".to_string()));
    let plot = fs::read_to_string(dir.path().join("plotdata_normalized_cost.csv")).unwrap();
    assert_eq!(plot.lines().count(), 25);
    assert!(dir.path().join("trace_sjf_d0.4.csv").exists());
}

#[test]
fn metrics_round_trip_through_csv() {
    let dir = tempfile::tempdir().unwrap();
    let overrides = Overrides {
        policy: Some(Policy::Llf),
        deltas: Some(vec![Fraction::new(1, 2)]),
        ..Overrides::default()
    };
    run(
        Command::Dynamic,
        Some("three_queries.conf"),
        dir.path(),
        overrides,
    );
    let path = dir.path().join("metrics.csv");
    let rows = read_metrics(&path).unwrap();
    assert_eq!(rows.len(), 3);
    let again = tempfile::tempdir().unwrap();
    iqsched_cli::output::write_rows(&again.path().join("m.csv"), &rows).unwrap();
    assert_eq!(
        fs::read(&path).unwrap(),
        fs::read(again.path().join("m.csv")).unwrap()
    );
    let trace = iqsched_cli::read_trace_file(&dir.path().join("trace.csv")).unwrap();
    let mut bytes = Vec::new();
    trace.write_csv(&mut bytes).unwrap();
    assert_eq!(bytes, fs::read(dir.path().join("trace.csv")).unwrap());
}

#[test]
fn withdrawn_query_is_not_a_miss() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run(
        Command::Dynamic,
        Some("three_queries.conf"),
        dir.path(),
        Overrides::default(),
    );
    assert_eq!(outcome, Outcome::Completed);
    let rows = read_metrics(&dir.path().join("metrics.csv")).unwrap();
    let q2 = rows.iter().find(|r| r.query_id == "q2").unwrap();
    assert!(q2.removed && !q2.deadline_met);
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.lines().any(|l| l.contains(",query_remove,q2,")));
    assert!(!trace.lines().any(|l| l.contains(",agg_end,q2,")));
}

fn binary() -> Process {
    Process::new(env!("CARGO_BIN_EXE_iqsched"))
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();

    let ok = binary()
        .args(["single", "--scenario"])
        .arg(scenario("case3.conf"))
        .args(["--out", out])
        .status()
        .unwrap();
    assert_eq!(ok.code(), Some(0));

    // Tight deltas on the staggered workload miss deadlines: soft failure.
    let missed = binary()
        .args(["sweep", "--scenario"])
        .arg(scenario("stagger.conf"))
        .args(["--out", out, "--policy", "edf", "--delta", "0.1"])
        .status()
        .unwrap();
    assert_eq!(missed.code(), Some(2));

    let bad = dir.path().join("bad.conf");
    fs::write(&bad, "[scheduler]\ncmax_ms = soon\n").unwrap();
    let cfg = binary()
        .args(["dynamic", "--out", out, "--scenario"])
        .arg(&bad)
        .output()
        .unwrap();
    assert_eq!(cfg.status.code(), Some(1));
    let err = String::from_utf8_lossy(&cfg.stderr);
    assert!(err.contains(":2:") && err.contains("`cmax_ms`"), "{err}");

    let flag = binary()
        .args(["dynamic", "--rsf", "lots"])
        .output()
        .unwrap();
    assert_eq!(flag.status.code(), Some(1));

    let infeasible = dir.path().join("late.conf");
    fs::write(
        &infeasible,
        "[query q]\ndeadline_ms = 10000\ncost = linear{500000, 0}\n[profile q]\nactual = fixed{1000, 1, 10}\n",
    )
    .unwrap();
    let st = binary()
        .args(["single", "--out", out, "--scenario"])
        .arg(&infeasible)
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&st.stderr).contains("no schedule meets the deadline"));
}

#[test]
fn oracle_check_agrees() {
    let dir = tempfile::tempdir().unwrap();
    let out = binary()
        .args([
            "oracle-check",
            "--max-tuples",
            "10",
            "--instances",
            "200",
            "--seed",
            "7",
            "--out",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("200/200 instances agree"));
}

#[test]
fn fit_recovers_a_two_segment_curve() {
    let dir = tempfile::tempdir().unwrap();
    let samples = dir.path().join("s.csv");
    let mut text = String::from("tuples,cost_us\n");
    for n in (0..=100).step_by(10) {
        let cost = if n <= 40 {
            1000 + 50 * n
        } else {
            3000 + 20 * (n - 40)
        };
        text.push_str(&format!("{n},{cost}\n"));
    }
    fs::write(&samples, text).unwrap();
    let outcome = run(
        Command::Fit {
            samples,
            segments: 2,
        },
        None,
        dir.path(),
        Overrides::default(),
    );
    assert_eq!(outcome, Outcome::Completed);
    let report = fs::read_to_string(dir.path().join("fit.txt")).unwrap();
    assert_eq!(
        report,
        "model = pwl{[(0, 1000), (40, 3000), (100, 4200)]}\nsse = 0.000000\n"
    );
}
