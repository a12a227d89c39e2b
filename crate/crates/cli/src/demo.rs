//! The task-farm speedup demo.

use std::path::Path;
use std::time::Duration;

use anyhow::{ensure, Context as _};
use packmp::spmd::SpmdContext;
use packmp::transport::run_in_process;
use packmp::Encoding;

use crate::launch::{launch, LaunchBackend, LaunchPlan};
use crate::programs::{farm_jobs, farm_master, farm_slave, job_result, Job};

#[derive(Clone, Debug)]
pub struct DemoReport {
    pub jobs: usize,
    pub workers: usize,
    pub serial: Duration,
    pub parallel: Duration,
}

impl DemoReport {
    /// NaN when there were no jobs.
    pub fn speedup(&self) -> f64 {
        if self.jobs == 0 {
            return f64::NAN;
        }
        self.serial.as_secs_f64() / self.parallel.as_secs_f64()
    }
}

/// Runs the farm with one slave per worker inside this process and checks
/// the replies against the serial results.
pub fn farm_in_process(jobs: &[Job], workers: usize) -> anyhow::Result<Duration> {
    let results = run_in_process(workers + 1, Encoding::Native, |ctx| -> anyhow::Result<Option<Duration>> {
        let spmd = SpmdContext::attach(ctx)?;
        if spmd.myid() == 0 {
            let outcome = farm_master(&spmd, jobs)?;
            let expected: Vec<(i64, i64)> = jobs.iter().map(|&(id, _)| (id, job_result(id))).collect();
            ensure!(outcome.replies == expected, "farm replies differ from the serial results");
            Ok(Some(outcome.elapsed))
        } else {
            farm_slave(&spmd)?;
            Ok(None)
        }
    });
    let mut elapsed = None;
    for r in results {
        if let Some(d) = r? {
            elapsed = Some(d);
        }
    }
    Ok(elapsed.expect("rank 0 reports"))
}

/// Runs the farm as `workers + 1` processes of `packrun` and reads the
/// master's timing.
pub fn farm_processes(packrun: &Path, jobs: usize, ms: u32, workers: usize) -> anyhow::Result<Duration> {
    let dir = std::env::temp_dir().join(format!("packrun-demo-{}-{workers}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let args = [
        "rank".to_string(),
        "farm".into(),
        "--jobs".into(),
        jobs.to_string(),
        "--ms".into(),
        ms.to_string(),
        "--out".into(),
        dir.display().to_string(),
    ];
    let report = launch(&LaunchPlan::new(workers + 1, packrun, args).backend(LaunchBackend::Process))?;
    ensure!(report.success(), "farm ranks exited with {:?}", report.exit_codes);
    let text = std::fs::read_to_string(dir.join("elapsed.txt")).context("reading the master's timing")?;
    let _ = std::fs::remove_dir_all(&dir);
    Ok(Duration::from_secs_f64(text.trim().parse()?))
}

pub fn taskfarm(jobs: usize, ms: u32, workers: usize, processes: Option<&Path>) -> anyhow::Result<DemoReport> {
    ensure!(workers >= 1, "at least one worker is needed");
    let run = |w: usize| match processes {
        Some(exe) => farm_processes(exe, jobs, ms, w),
        None => farm_in_process(&farm_jobs(jobs, ms, None), w),
    };
    let serial = run(1)?;
    let parallel = run(workers)?;
    Ok(DemoReport { jobs, workers, serial, parallel })
}
