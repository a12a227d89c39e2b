//! Starting a world: child processes joined by a rendezvous, or threads.

use std::io;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use packmp::transport::rendezvous::Coordinator;
use packmp::transport::{
    self, TransportError, DEFAULT_RENDEZVOUS_TIMEOUT, ENV_COORD, ENV_HETERO, ENV_NPROCS, ENV_RANK, ENV_TIMEOUT,
};
use packmp::Encoding;
use thiserror::Error;

use crate::programs;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum LaunchBackend {
    /// Ranks are threads of the launcher; only built-in programs can run.
    Thread,
    /// Ranks are child processes connected by a TCP mesh.
    Process,
}

#[derive(Debug, Error)]
pub enum LaunchError {
    #[error("a world needs at least one rank")]
    NoRanks,
    #[error("rendezvous did not complete within {0:?}; all ranks were killed")]
    RendezvousTimeout(Duration),
    #[error("failed to start rank {rank}: {reason}")]
    SpawnFailure { rank: usize, reason: String },
    #[error("`{0}` is not a built-in program; the thread backend runs only `packrun rank ...` programs")]
    NotBuiltin(String),
    #[error("coordinator: {0}")]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug)]
pub struct LaunchPlan {
    pub nprocs: usize,
    pub program: PathBuf,
    pub args: Vec<String>,
    pub backend: LaunchBackend,
    pub timeout: Duration,
    /// Portable encoding for the whole world.
    pub hetero: bool,
    /// Once a rank has failed, how long the others may keep running.
    pub grace: Duration,
    pub env: Vec<(String, String)>,
}

impl LaunchPlan {
    pub fn new(nprocs: usize, program: impl Into<PathBuf>, args: impl IntoIterator<Item = impl Into<String>>) -> Self {
        LaunchPlan {
            nprocs,
            program: program.into(),
            args: args.into_iter().map(Into::into).collect(),
            backend: LaunchBackend::Process,
            timeout: DEFAULT_RENDEZVOUS_TIMEOUT,
            hetero: false,
            grace: Duration::from_secs(5),
            env: Vec::new(),
        }
    }

    pub fn backend(mut self, backend: LaunchBackend) -> Self {
        self.backend = backend;
        self
    }

    pub fn timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn hetero(mut self, hetero: bool) -> Self {
        self.hetero = hetero;
        self
    }

    pub fn env(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.env.push((key.into(), value.into()));
        self
    }

    fn encoding(&self) -> Encoding {
        if self.hetero {
            Encoding::Portable
        } else {
            Encoding::Native
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LaunchReport {
    /// Per rank; 128 + signal number for ranks killed by a signal.
    pub exit_codes: Vec<i32>,
    /// Child process ids (empty for the thread backend).
    pub pids: Vec<u32>,
    /// Ranks that completed the rendezvous.
    pub registered: usize,
}

impl LaunchReport {
    pub fn success(&self) -> bool {
        self.exit_codes.iter().all(|&c| c == 0)
    }

    /// The launcher's own exit status: 0, or the first failing rank's code.
    pub fn status(&self) -> i32 {
        self.exit_codes.iter().copied().find(|&c| c != 0).unwrap_or(0)
    }
}

pub fn launch(plan: &LaunchPlan) -> Result<LaunchReport, LaunchError> {
    if plan.nprocs == 0 {
        return Err(LaunchError::NoRanks);
    }
    match plan.backend {
        LaunchBackend::Process => launch_processes(plan),
        LaunchBackend::Thread => launch_threads(plan),
    }
}

fn exit_code(status: ExitStatus) -> i32 {
    use std::os::unix::process::ExitStatusExt;
    match (status.code(), status.signal()) {
        (Some(c), _) => c,
        (None, Some(sig)) => 128 + sig,
        (None, None) => 255,
    }
}

fn spawn_rank(plan: &LaunchPlan, rank: usize, coord: &str) -> io::Result<Child> {
    let mut cmd = Command::new(&plan.program);
    cmd.args(&plan.args)
        .env(ENV_RANK, rank.to_string())
        .env(ENV_NPROCS, plan.nprocs.to_string())
        .env(ENV_COORD, coord)
        .env(ENV_TIMEOUT, plan.timeout.as_secs_f64().to_string())
        .env(ENV_HETERO, if plan.hetero { "1" } else { "0" })
        .envs(plan.env.iter().map(|(k, v)| (k, v)));
    #[cfg(target_os = "linux")]
    {
        use std::os::unix::process::CommandExt;
        // SAFETY: prctl is async-signal-safe and touches no shared state.
        unsafe {
            cmd.pre_exec(|| {
                // ranks die with the launcher instead of lingering
                if libc::prctl(libc::PR_SET_PDEATHSIG, libc::SIGKILL) != 0 {
                    return Err(io::Error::last_os_error());
                }
                Ok(())
            });
        }
    }
    cmd.spawn()
}

fn kill_all(children: &mut [Child], codes: &mut [Option<i32>]) {
    for (child, code) in children.iter_mut().zip(codes.iter()) {
        if code.is_none() {
            let _ = child.kill();
        }
    }
    for (child, code) in children.iter_mut().zip(codes.iter_mut()) {
        if code.is_none() {
            *code = Some(child.wait().map(exit_code).unwrap_or(255));
        }
    }
}

fn launch_processes(plan: &LaunchPlan) -> Result<LaunchReport, LaunchError> {
    let coordinator = Coordinator::bind("127.0.0.1:0", plan.nprocs)?;
    let coord = coordinator.local_addr()?.to_string();

    let mut children: Vec<Child> = Vec::with_capacity(plan.nprocs);
    for rank in 0..plan.nprocs {
        match spawn_rank(plan, rank, &coord) {
            Ok(c) => children.push(c),
            Err(e) => {
                let mut codes = vec![None; children.len()];
                kill_all(&mut children, &mut codes);
                return Err(LaunchError::SpawnFailure { rank, reason: e.to_string() });
            }
        }
    }
    let pids: Vec<u32> = children.iter().map(Child::id).collect();

    let abort = Arc::new(AtomicBool::new(false));
    let rendezvous = {
        let abort = abort.clone();
        let timeout = plan.timeout;
        thread::spawn(move || coordinator.run_until(timeout, || abort.load(Ordering::SeqCst)))
    };
    let mut rendezvous = Some(rendezvous);
    let mut registered = 0;

    let mut codes: Vec<Option<i32>> = vec![None; plan.nprocs];
    let mut failed_at: Option<Instant> = None;
    loop {
        for (child, code) in children.iter_mut().zip(codes.iter_mut()) {
            if code.is_none() {
                if let Some(status) = child.try_wait()? {
                    let c = exit_code(status);
                    *code = Some(c);
                    if c != 0 && failed_at.is_none() {
                        failed_at = Some(Instant::now());
                    }
                }
            }
        }
        let any_exited = codes.iter().any(Option::is_some);

        if rendezvous.as_ref().is_some_and(|h| h.is_finished()) {
            let outcome = rendezvous.take().expect("checked above").join().expect("coordinator thread");
            match outcome {
                Ok(regs) => {
                    registered = regs.len();
                    eprintln!("mprun: rendezvous complete, {registered} ranks registered");
                }
                // ranks that never joined exited on their own; their codes tell the story
                Err(_) if abort.load(Ordering::SeqCst) => {}
                Err(TransportError::RendezvousTimeout(_)) => {
                    kill_all(&mut children, &mut codes);
                    return Err(LaunchError::RendezvousTimeout(plan.timeout));
                }
                Err(e) => eprintln!("mprun: rendezvous failed: {e}"),
            }
        } else if rendezvous.is_some() && any_exited {
            abort.store(true, Ordering::SeqCst);
        }

        if codes.iter().all(Option::is_some) {
            break;
        }
        if failed_at.is_some_and(|t| t.elapsed() >= plan.grace) {
            kill_all(&mut children, &mut codes);
            break;
        }
        thread::sleep(Duration::from_millis(5));
    }
    if let Some(h) = rendezvous {
        abort.store(true, Ordering::SeqCst);
        let _ = h.join();
    }
    Ok(LaunchReport { exit_codes: codes.into_iter().map(|c| c.expect("all reaped")).collect(), pids, registered })
}

/// Splits `PROG ARGS` into a built-in program line: either
/// `packrun rank NAME ARGS` or `NAME ARGS`.
pub fn builtin_line(program: &Path, args: &[String]) -> Option<Vec<String>> {
    let prog = program.to_string_lossy().into_owned();
    let is_self = program.file_name().is_some_and(|f| f == "packrun")
        || std::env::current_exe().ok().is_some_and(|exe| exe == program);
    if is_self {
        match args.split_first() {
            Some((first, rest)) if first == "rank" => Some(rest.to_vec()),
            _ => None,
        }
    } else if programs::NAMES.contains(&prog.as_str()) {
        Some(std::iter::once(prog).chain(args.iter().cloned()).collect())
    } else {
        None
    }
}

fn launch_threads(plan: &LaunchPlan) -> Result<LaunchReport, LaunchError> {
    let line = builtin_line(&plan.program, &plan.args)
        .ok_or_else(|| LaunchError::NotBuiltin(plan.program.display().to_string()))?;
    let program = programs::parse(&line).map_err(|e| LaunchError::NotBuiltin(e.to_string()))?;
    if !program.thread_safe() {
        return Err(LaunchError::NotBuiltin(format!("{} (needs the process backend)", line[0])));
    }
    let codes = transport::run_in_process(plan.nprocs, plan.encoding(), |ctx| {
        let rank = ctx.rank();
        let run = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            let spmd = packmp::spmd::SpmdContext::attach(ctx)?;
            programs::run(&program, spmd)
        }));
        match run {
            Ok(Ok(code)) => code,
            Ok(Err(e)) => {
                eprintln!("rank {rank}: {e:#}");
                1
            }
            Err(_) => 101,
        }
    });
    Ok(LaunchReport { exit_codes: codes, pids: Vec::new(), registered: plan.nprocs })
}
