use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use packmp_cli::launch::{launch, LaunchBackend, LaunchError, LaunchPlan};

const PACKRUN: &str = env!("CARGO_BIN_EXE_packrun");

fn alive(pid: u32) -> bool {
    Path::new(&format!("/proc/{pid}")).exists()
}

fn packrun(args: &[&str]) -> std::process::Output {
    Command::new(PACKRUN).args(args).output().unwrap()
}

fn rank_plan(n: usize, args: &[&str]) -> LaunchPlan {
    LaunchPlan::new(n, PACKRUN, ["rank"].iter().chain(args).map(|s| s.to_string()))
}

#[test]
fn trivial_single_rank() {
    let report = launch(&LaunchPlan::new(1, "true", Vec::<String>::new())).unwrap();
    assert_eq!(report.exit_codes, vec![0]);
}

#[test]
fn ping_on_four_ranks_registers_all() {
    let dir = tempfile::tempdir().unwrap();
    let out = packrun(&["mprun", "-n", "4", "--", PACKRUN, "rank", "ping", "--log-dir", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{out:?}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("4 ranks registered"));
    for r in 0..4 {
        assert!(dir.path().join(format!("rank-{r}.log")).exists());
    }
}

#[test]
fn failing_rank_code_passes_through() {
    let report = launch(&rank_plan(4, &["exit-code", "--rank", "2", "--code", "3"])).unwrap();
    assert_eq!(report.exit_codes, vec![0, 0, 3, 0]);
    assert!(!report.success());
    assert_eq!(report.status(), 3);

    let out = packrun(&["mprun", "-n", "4", "--", PACKRUN, "rank", "exit-code", "--rank", "2", "--code", "3"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn rank_environment_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let script = format!("echo $PACKRUN_RANK $PACKRUN_NPROCS > {}/$PACKRUN_RANK", dir.path().display());
    for _ in 0..3 {
        let report = launch(&LaunchPlan::new(3, "sh", ["-c", script.as_str()])).unwrap();
        assert_eq!(report.exit_codes, vec![0, 0, 0]);
        for r in 0..3 {
            let text = std::fs::read_to_string(dir.path().join(r.to_string())).unwrap();
            assert_eq!(text.trim(), format!("{r} 3"));
        }
    }
}

#[test]
fn thread_and_process_logs_are_identical() {
    for hetero in [false, true] {
        let mut logs = Vec::new();
        for backend in [LaunchBackend::Thread, LaunchBackend::Process] {
            let dir = tempfile::tempdir().unwrap();
            let plan = rank_plan(4, &["ping", "--rounds", "4", "--log-dir", dir.path().to_str().unwrap()])
                .backend(backend)
                .hetero(hetero);
            assert!(launch(&plan).unwrap().success());
            let text: Vec<String> =
                (0..4).map(|r| std::fs::read_to_string(dir.path().join(format!("rank-{r}.log"))).unwrap()).collect();
            logs.push(text);
        }
        assert_eq!(logs[0], logs[1]);
        assert!(logs[0][0].contains("gather at 0: [0, 10, 20, 30]"));
    }
}

#[test]
fn no_orphans_after_failure() {
    // rank 0 fails at once; rank 1 would sleep far past the grace period
    let mut plan = LaunchPlan::new(2, "sh", ["-c", "if [ $PACKRUN_RANK = 0 ]; then exit 2; else sleep 30; fi"]);
    plan.grace = Duration::from_millis(300);
    let start = Instant::now();
    let report = launch(&plan).unwrap();
    assert!(start.elapsed() < Duration::from_secs(5));
    assert_eq!(report.exit_codes, vec![2, 128 + 9]);
    assert!(report.pids.iter().all(|&p| !alive(p)));
}

#[test]
fn rendezvous_timeout_kills_ranks() {
    // the ranks never register, so the launcher gives up and kills them
    let plan = LaunchPlan::new(2, "sleep", ["30"]).timeout(Duration::from_millis(300));
    let start = Instant::now();
    assert!(matches!(launch(&plan), Err(LaunchError::RendezvousTimeout(_))));
    assert!(start.elapsed() < Duration::from_secs(5));
}

#[test]
fn spawn_failure_is_reported() {
    let plan = LaunchPlan::new(2, "/nonexistent/program", Vec::<String>::new());
    assert!(matches!(launch(&plan), Err(LaunchError::SpawnFailure { rank: 0, .. })));
    assert!(matches!(launch(&LaunchPlan::new(0, "true", Vec::<String>::new())), Err(LaunchError::NoRanks)));
}

#[test]
fn thread_backend_runs_only_builtins() {
    let plan = LaunchPlan::new(2, "true", Vec::<String>::new()).backend(LaunchBackend::Thread);
    assert!(matches!(launch(&plan), Err(LaunchError::NotBuiltin(_))));
    let dir = tempfile::tempdir().unwrap();
    let plan = rank_plan(2, &["abort", "--marker-dir", dir.path().to_str().unwrap()]).backend(LaunchBackend::Thread);
    assert!(matches!(launch(&plan), Err(LaunchError::NotBuiltin(_))));
    let plan = LaunchPlan::new(3, "hello", Vec::<String>::new()).backend(LaunchBackend::Thread);
    assert_eq!(launch(&plan).unwrap().exit_codes, vec![0, 0, 0]);
}

#[test]
fn hard_abort_skips_finalize() {
    let dir = tempfile::tempdir().unwrap();
    let report = launch(&rank_plan(2, &["abort", "--marker-dir", dir.path().to_str().unwrap()])).unwrap();
    assert_eq!(report.exit_codes, vec![128 + libc::SIGABRT, 0]);
    assert!(!dir.path().join("finalized-rank-0").exists());
    assert!(dir.path().join("peer-0-lost").exists());
    assert!(dir.path().join("finalized-rank-1").exists());
}

#[test]
fn idlc_listing_and_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, text: &str| {
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p.display().to_string()
    };
    let good = write("good.idl", "record a { x: i32; }\n// two\nrecord b { inner: a; tags: seq<string>; }\n");
    let out = packrun(&["idlc", &good]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        "record a (1 fields)\n  0 x: i32\n\nrecord b (2 fields)\n  0 inner: a\n  1 tags: seq<string>\n"
    );

    let missing = write("missing.idl", "record a { b_field: b; }");
    let out = packrun(&["idlc", &missing]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unresolved type `b`"));

    let empty = write("empty.idl", "");
    let out = packrun(&["idlc", &empty]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
}

fn machine_value(stdout: &[u8], key: &str) -> String {
    let text = String::from_utf8_lossy(stdout);
    let line = text.lines().find(|l| l.starts_with(&format!("{key}="))).unwrap_or_else(|| panic!("no {key} in {text}"));
    line[key.len() + 1..].to_string()
}

#[test]
fn bench_prints_ratio() {
    for extra in [&[][..], &["--portable"][..]] {
        let mut args = vec!["bench", "pack", "--size", "1", "--reps", "5"];
        args.extend_from_slice(extra);
        let out = packrun(&args);
        assert!(out.status.success());
        let ratio: f64 = machine_value(&out.stdout, "ratio").parse().unwrap();
        assert!(ratio.is_finite() && ratio > 0.0);
    }
}

#[test]
fn taskfarm_demo_edge_cases() {
    let out = packrun(&["demo", "taskfarm", "--jobs", "0", "--workers", "3"]);
    assert!(out.status.success());
    assert_eq!(machine_value(&out.stdout, "speedup"), "nan");

    let out = packrun(&["demo", "taskfarm", "--jobs", "4", "--workers", "1", "--ms", "50"]);
    let speedup: f64 = machine_value(&out.stdout, "speedup").parse().unwrap();
    assert!((speedup - 1.0).abs() < 0.2, "speedup {speedup}");

    let out = packrun(&["demo", "taskfarm", "--jobs", "4", "--workers", "0"]);
    assert!(!out.status.success());
}
