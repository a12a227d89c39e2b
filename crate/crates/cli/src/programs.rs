//! Built-in rank programs, run by `packrun rank NAME` under either backend.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context as _};
use clap::{Parser, Subcommand};
use packmp::slave::{slave_loop, HandlerTable, MasterPool};
use packmp::spmd::SpmdContext;
use packmp::transport::{Membership, TransportError};
use packmp::{Buffer, Error};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const NAMES: &[&str] = &["hello", "ping", "idiom", "subset", "unwind", "abort", "farm", "exit-code"];

#[derive(Parser, Debug)]
#[command(no_binary_name = true)]
struct Line {
    #[command(subcommand)]
    program: Program,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Program {
    /// Print the rank and world size.
    Hello,
    /// Point-to-point rounds, a broadcast and a gather, logged per rank.
    Ping {
        #[arg(long)]
        log_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        rounds: u32,
    },
    /// Pack mixed values, send them to rank 1, then broadcast them from rank 0.
    Idiom,
    /// Broadcast on a child communicator of world ranks 1 and 3.
    Subset {
        #[arg(long, default_value = "subset payload")]
        payload: String,
    },
    /// The failing rank returns an error mid-scope; its peers wait on it.
    Unwind {
        #[arg(long)]
        marker_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        fail_rank: usize,
    },
    /// Rank 0 aborts the process inside its scope; its peers wait on it.
    Abort {
        #[arg(long)]
        marker_dir: PathBuf,
    },
    /// Master/slave farm of sleep jobs.
    Farm {
        #[arg(long)]
        jobs: usize,
        /// Job duration, or the upper bound with `--seed`.
        #[arg(long, default_value_t = 100)]
        ms: u32,
        /// Draw job durations uniformly from 0..=ms.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for replies, receipts and timing.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank `rank` exits with `code`; the others exit 0.
    ExitCode {
        #[arg(long)]
        rank: usize,
        #[arg(long)]
        code: i32,
    },
}

impl Program {
    /// Whether the program can run as a thread of the launcher.
    pub fn thread_safe(&self) -> bool {
        !matches!(self, Program::Abort { .. })
    }
}

pub fn parse(line: &[String]) -> Result<Program, clap::Error> {
    Line::try_parse_from(line).map(|l| l.program)
}

pub fn run(program: &Program, spmd: SpmdContext) -> anyhow::Result<i32> {
    match program {
        Program::Hello => {
            println!("hello from rank {} of {}", spmd.myid(), spmd.nprocs());
            spmd.transport().barrier(&spmd.world())?;
            Ok(0)
        }
        Program::Ping { log_dir, rounds } => ping(spmd, log_dir.as_deref(), *rounds),
        Program::Idiom => idiom(spmd),
        Program::Subset { payload } => subset(spmd, payload),
        Program::Unwind { marker_dir, fail_rank } => unwind(spmd, marker_dir, *fail_rank),
        Program::Abort { marker_dir } => abort(spmd, marker_dir),
        Program::Farm { jobs, ms, seed, out } => {
            let jobs = farm_jobs(*jobs, *ms, *seed);
            farm(spmd, &jobs, out.as_deref()).map(|ok| if ok { 0 } else { 1 })
        }
        Program::ExitCode { rank, code } => {
            spmd.transport().barrier(&spmd.world())?;
            Ok(if spmd.myid() == *rank { *code } else { 0 })
        }
    }
}

fn ping(spmd: SpmdContext, log_dir: Option<&Path>, rounds: u32) -> anyhow::Result<i32> {
    let (me, n) = (spmd.myid(), spmd.nprocs());
    let mut log = String::new();
    let mut mb = spmd.msgbuf();
    for round in 0..rounds as i32 {
        if me == 0 {
            for r in 1..n {
                mb.put(&round)?.put(&format!("ping {r}"))?.send(r)?;
                writeln!(log, "round {round} sent to {r}: ping {r}")?;
            }
            for r in 1..n {
                mb.get(r)?;
                let (k, text): (i32, String) = (mb.take()?, mb.take()?);
                writeln!(log, "round {k} recv from {r}: {text}")?;
            }
        } else {
            mb.get(0usize)?;
            let (k, text): (i32, String) = (mb.take()?, mb.take()?);
            writeln!(log, "round {k} recv from 0: {text}")?;
            mb.reset().put(&round)?.put(&format!("pong {me}"))?.send(0)?;
            writeln!(log, "round {round} sent to 0: pong {me}")?;
        }
    }

    mb.reset();
    if me == 0 {
        mb.put(&String::from("bye"))?.put(&(n as f64))?;
    }
    mb.bcast(0)?;
    let (text, size): (String, f64) = (mb.take()?, mb.take()?);
    writeln!(log, "bcast from 0: {text} {size}")?;

    mb.reset().put(&(me as i32 * 10))?.gather(0)?;
    if me == 0 {
        let all: Vec<i32> = (0..n).map(|_| mb.take()).collect::<Result<_, _>>()?;
        writeln!(log, "gather at 0: {all:?}")?;
    }

    match log_dir {
        Some(dir) => std::fs::write(dir.join(format!("rank-{me}.log")), &log)?,
        None => log.lines().for_each(|l| println!("[rank {me}] {l}")),
    }
    Ok(0)
}

fn idiom(spmd: SpmdContext) -> anyhow::Result<i32> {
    ensure!(spmd.nprocs() >= 2, "idiom needs at least 2 ranks");
    let me = spmd.myid();
    let (a, b, c) = (42i32, 2.5f64, String::from("mixed types"));
    let mut mb = spmd.msgbuf();

    if me == 0 {
        mb.put(&a)?.put(&b)?.put(&c)?.send(1)?;
    } else if me == 1 {
        mb.get(0usize)?;
        let got: (i32, f64, String) = (mb.take()?, mb.take()?, mb.take()?);
        ensure!(got == (a, b, c.clone()), "rank 1 received {got:?}");
    }

    mb.reset();
    if me == 0 {
        mb.put(&a)?.put(&b)?.put(&c)?;
    }
    mb.bcast(0)?;
    let got: (i32, f64, String) = (mb.take()?, mb.take()?, mb.take()?);
    ensure!(got == (a, b, c), "rank {me} unpacked {got:?} after broadcast");
    println!("rank {me}: idiom ok");
    Ok(0)
}

fn subset(spmd: SpmdContext, payload: &str) -> anyhow::Result<i32> {
    ensure!(spmd.nprocs() >= 4, "subset needs at least 4 ranks");
    let me = spmd.myid();
    let t = spmd.transport();
    let world = spmd.world();
    let child = t.comm_create(&world, &[1, 3])?;
    let report = match child {
        Membership::Member(c) => {
            let mut mb = spmd.msgbuf();
            mb.set_communicator(c.clone());
            if c.rank() == 0 {
                mb.put(&payload.to_string())?;
            }
            mb.bcast(0)?;
            let got: String = mb.take()?;
            ensure!(got == payload, "rank {me} received {got:?}");
            let expected_local = if me == 1 { 0 } else { 1 };
            ensure!(c.rank() == expected_local, "rank {me} has local rank {}", c.rank());
            format!("rank {me}: member, local rank {}, received {got:?}", c.rank())
        }
        Membership::NotMember => String::new(),
    };
    // every frame sent before the barrier has arrived once it completes
    t.barrier(&world)?;
    let report = if report.is_empty() {
        let pending = t.pending();
        ensure!(pending == 0, "rank {me} is not a member but holds {pending} messages");
        format!("rank {me}: not a member, nothing delivered")
    } else {
        report
    };
    println!("{report}");
    Ok(0)
}

fn write_marker(dir: &Path, name: &str) {
    let _ = std::fs::write(dir.join(name), name);
}

fn wait_on(spmd: &SpmdContext, rank: usize, dir: &Path) -> anyhow::Result<i32> {
    let t = spmd.transport();
    match t.recv(&spmd.world(), rank, 0u32) {
        Err(TransportError::PeerGone { finalized, .. }) => {
            let how = if finalized { "finalized" } else { "lost" };
            write_marker(dir, &format!("peer-{rank}-{how}"));
            Ok(0)
        }
        Ok(_) => bail!("unexpected message from rank {rank}"),
        Err(e) => Err(e.into()),
    }
}

fn unwind(spmd: SpmdContext, dir: &Path, fail_rank: usize) -> anyhow::Result<i32> {
    let me = spmd.myid();
    let marker_dir = dir.to_path_buf();
    spmd.on_exit(move || write_marker(&marker_dir, &format!("finalized-rank-{me}")));
    if me != fail_rank {
        return wait_on(&spmd, fail_rank, dir);
    }
    halfway(&spmd).context("rank failed mid-scope")?;
    Ok(0)
}

fn halfway(spmd: &SpmdContext) -> packmp::Result<()> {
    let mut mb = spmd.msgbuf();
    mb.put(&1i32)?;
    // unpacking past the end is the simulated mid-scope failure
    mb.take::<i32>()?;
    mb.take::<i32>()?;
    Ok(())
}

fn abort(spmd: SpmdContext, dir: &Path) -> anyhow::Result<i32> {
    let me = spmd.myid();
    let marker_dir = dir.to_path_buf();
    spmd.on_exit(move || write_marker(&marker_dir, &format!("finalized-rank-{me}")));
    if me == 0 {
        std::process::abort();
    }
    wait_on(&spmd, 0, dir)
}

/// A job: id and duration in milliseconds.
pub type Job = (i64, u32);

pub fn farm_jobs(n: usize, ms: u32, seed: Option<u64>) -> Vec<Job> {
    let mut rng = seed.map(ChaCha8Rng::seed_from_u64);
    (0..n as i64)
        .map(|id| {
            let d = match &mut rng {
                Some(r) => r.gen_range(0..=ms),
                None => ms,
            };
            (id, d)
        })
        .collect()
}

/// The result a slave computes for job `id`; also the serial oracle.
pub fn job_result(id: i64) -> i64 {
    id * id + 7
}

pub fn farm_table() -> HandlerTable<Vec<i64>> {
    HandlerTable::new()
        .with("sleep_job", |receipts: &mut Vec<i64>, args| {
            let (id, ms): (i64, u32) = (args.take()?, args.take()?);
            std::thread::sleep(Duration::from_millis(ms as u64));
            receipts.push(id);
            args.reset().put(&id)?.put(&job_result(id))?;
            Ok(())
        })
        .expect("one handler")
}

pub struct FarmOutcome {
    /// (job id, result) in job order.
    pub replies: Vec<(i64, i64)>,
    pub elapsed: Duration,
}

/// Runs `jobs` through the slaves and times the job list alone.
pub fn farm_master(spmd: &SpmdContext, jobs: &[Job]) -> packmp::Result<FarmOutcome> {
    let table = farm_table();
    let mut pool = MasterPool::new(spmd, &table)?;
    let packed: Vec<Vec<u8>> = jobs
        .iter()
        .map(|j| {
            let mut b = Buffer::new(spmd.transport().encoding());
            b.put(j).map(|_| ()).map_err(Error::from)?;
            Ok(b.into_bytes())
        })
        .collect::<packmp::Result<_>>()?;
    let start = Instant::now();
    let replies = pool.run_joblist("sleep_job", &packed)?;
    let elapsed = start.elapsed();
    pool.shutdown()?;
    let replies = replies
        .into_iter()
        .map(|mut r| Ok((r.take::<i64>()?, r.take::<i64>()?)))
        .collect::<packmp::Result<_>>()?;
    Ok(FarmOutcome { replies, elapsed })
}

pub fn farm_slave(spmd: &SpmdContext) -> packmp::Result<Vec<i64>> {
    let mut receipts = Vec::new();
    slave_loop(spmd, &farm_table(), &mut receipts)?;
    Ok(receipts)
}

/// Returns whether the replies matched the serial oracle.
fn farm(spmd: SpmdContext, jobs: &[Job], out: Option<&Path>) -> anyhow::Result<bool> {
    ensure!(spmd.nprocs() >= 2, "farm needs a master and at least one slave");
    let me = spmd.myid();
    if me != 0 {
        let receipts = farm_slave(&spmd)?;
        if let Some(dir) = out {
            let text: String = receipts.iter().map(|id| format!("{id}\n")).collect();
            std::fs::write(dir.join(format!("receipts-rank-{me}.txt")), text)?;
        }
        return Ok(true);
    }
    let outcome = farm_master(&spmd, jobs)?;
    let ok = outcome.replies.iter().zip(jobs).all(|(&(id, r), &(job, _))| id == job && r == job_result(job));
    if let Some(dir) = out {
        let text: String = outcome.replies.iter().map(|(id, r)| format!("{id} {r}\n")).collect();
        std::fs::write(dir.join("replies.txt"), text)?;
        std::fs::write(dir.join("elapsed.txt"), format!("{}\n", outcome.elapsed.as_secs_f64()))?;
    }
    println!(
        "farm: {} jobs on {} slaves in {:.3} s, replies {}",
        jobs.len(),
        spmd.nprocs() - 1,
        outcome.elapsed.as_secs_f64(),
        if ok { "match" } else { "DIFFER" }
    );
    Ok(ok)
}
