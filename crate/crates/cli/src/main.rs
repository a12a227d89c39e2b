use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Context as _;
use clap::{Parser, Subcommand};
use packmp::spmd::SpmdContext;
use packmp::Encoding;
use packmp_cli::launch::{launch, LaunchBackend, LaunchPlan};
use packmp_cli::programs::{self, Program};
use packmp_cli::{bench, demo, idlc};

#[derive(Parser)]
#[command(name = "packrun", version, about = "Launch and exercise packmp worlds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run PROG as N ranks.
    Mprun {
        #[arg(short = 'n', long = "nprocs")]
        n: usize,
        #[arg(long, value_enum, default_value = "process")]
        backend: LaunchBackend,
        /// Rendezvous timeout in seconds.
        #[arg(long, default_value_t = 10.0)]
        timeout: f64,
        /// Use the portable encoding world-wide.
        #[arg(long)]
        hetero: bool,
        #[arg(required = true, last = true)]
        command: Vec<String>,
    },
    /// Parse and validate an IDL file and list its descriptors.
    Idlc { file: PathBuf },
    /// Serialization micro-benchmarks.
    Bench {
        #[command(subcommand)]
        what: BenchCommand,
    },
    /// Example programs.
    Demo {
        #[command(subcommand)]
        what: DemoCommand,
    },
    /// Run a built-in rank program (normally started by `mprun`).
    #[command(hide = true)]
    Rank {
        #[command(subcommand)]
        program: Program,
    },
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Pack a byte sequence and compare with a raw copy.
    Pack {
        #[arg(long, default_value_t = 1 << 20)]
        size: usize,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        #[arg(long)]
        portable: bool,
    },
}

#[derive(Subcommand)]
enum DemoCommand {
    /// Sleep jobs on 1 worker, then on W workers.
    Taskfarm {
        #[arg(long)]
        jobs: usize,
        #[arg(long)]
        workers: usize,
        /// Duration of each job.
        #[arg(long, default_value_t = 100)]
        ms: u32,
        /// Run ranks as processes instead of threads.
        #[arg(long)]
        processes: bool,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code.clamp(0, 255) as u8),
        Err(e) => {
            eprintln!("packrun: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Mprun { n, backend, timeout, hetero, command } => {
            let (prog, args) = command.split_first().expect("clap requires a program");
            let plan = LaunchPlan::new(n, prog, args.iter().cloned())
                .backend(backend)
                .timeout(Duration::from_secs_f64(timeout))
                .hetero(hetero);
            let report = launch(&plan)?;
            if !report.success() {
                eprintln!("mprun: exit codes {:?}", report.exit_codes);
            }
            Ok(report.status())
        }
        Command::Idlc { file } => {
            let source = std::fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
            match idlc::compile(&file.display().to_string(), &source) {
                Ok(listing) => {
                    print!("{listing}");
                    Ok(0)
                }
                Err(diagnostics) => {
                    for d in diagnostics {
                        eprintln!("{d}");
                    }
                    Ok(1)
                }
            }
        }
        Command::Bench { what: BenchCommand::Pack { size, reps, portable } } => {
            let encoding = if portable { Encoding::Portable } else { Encoding::Native };
            let r = bench::bench_pack(size, reps, encoding);
            println!("size={} reps={} encoding={:?}", r.size, r.reps, r.encoding);
            println!("copy: {:.1} MB/s (median {:?})", r.throughput(r.copy), r.copy);
            println!("pack: {:.1} MB/s (median {:?})", r.throughput(r.pack), r.pack);
            println!("descriptor pack: {:.1} MB/s, ratio {:.3}", r.throughput(r.dyn_pack), r.dyn_ratio());
            println!("portable seq<f64>: ratio {:.3}", r.f64_portable_ratio());
            println!("ratio={:.4}", r.ratio());
            Ok(0)
        }
        Command::Demo { what: DemoCommand::Taskfarm { jobs, workers, ms, processes } } => {
            let exe = if processes { Some(std::env::current_exe()?) } else { None };
            let r = demo::taskfarm(jobs, ms, workers, exe.as_deref())?;
            println!("jobs={} ms={ms} workers={}", r.jobs, r.workers);
            println!("1 worker: {:.3} s", r.serial.as_secs_f64());
            println!("{} workers: {:.3} s", r.workers, r.parallel.as_secs_f64());
            let speedup = r.speedup();
            if speedup.is_nan() {
                println!("speedup=nan");
            } else {
                println!("speedup={speedup:.3}");
            }
            Ok(0)
        }
        Command::Rank { program } => {
            let spmd = SpmdContext::from_env()?;
            programs::run(&program, spmd)
        }
    }
}
