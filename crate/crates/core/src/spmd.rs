//! Scoped runtime lifecycle.
//!
//! An [`SpmdContext`] initializes the transport when created and finalizes
//! it when dropped, so finalization also happens when the scope is left by
//! `?` or by a panic. It does not happen on `std::process::abort` or when
//! the process is killed; peers then observe a connection lost without a
//! finalize notice.
//!
//! ```no_run
//! use packmp::spmd::SpmdContext;
//!
//! fn main() -> packmp::Result<()> {
//!     let spmd = SpmdContext::from_env()?;
//!     println!("rank {} of {}", spmd.myid(), spmd.nprocs());
//!     // ... computation ...
//!     Ok(())
//! } // finalized here
//! ```
//!
//! Keep the context a local of `main` and pass references to code that
//! needs it. A context stored in a `static` is never dropped, so it never
//! finalizes; one still active at process exit is reported on stderr.
//! Entering once `main` has returned is refused.

use std::sync::atomic::{AtomicBool, AtomicU8, Ordering};
use std::sync::Once;

use crate::msgbuf::MsgBuf;
use crate::transport::{self, Communicator, TransportContext, WorldConfig};
use crate::{Error, Result};

const IDLE: u8 = 0;
const ACTIVE: u8 = 1;
const FINISHED: u8 = 2;

static PROCESS_STATE: AtomicU8 = AtomicU8::new(IDLE);
static EXIT_PHASE: AtomicBool = AtomicBool::new(false);
static HOOK: Once = Once::new();

extern "C" fn mark_exit_phase() {
    EXIT_PHASE.store(true, Ordering::SeqCst);
    if PROCESS_STATE.load(Ordering::SeqCst) == ACTIVE {
        // a context that outlived main, e.g. one kept in a static
        eprintln!("packmp: runtime still active at process exit; it was never finalized");
    }
}

fn install_exit_hook() {
    HOOK.call_once(|| unsafe {
        // SAFETY: registering a plain extern "C" function with no captured state.
        libc::atexit(mark_exit_phase);
    });
}

/// Owns one rank's runtime for the duration of a scope.
#[derive(Debug)]
pub struct SpmdContext {
    transport: TransportContext,
    myid: usize,
    nprocs: usize,
    exited: bool,
    owns_process: bool,
}

impl SpmdContext {
    /// Initializes the runtime for this process. The configuration must
    /// give this process exactly one rank (a socket-mesh rank, or an
    /// in-process world of one).
    pub fn enter(config: &WorldConfig) -> Result<SpmdContext> {
        if EXIT_PHASE.load(Ordering::SeqCst) {
            return Err(Error::OutsideMain);
        }
        install_exit_hook();
        if PROCESS_STATE.compare_exchange(IDLE, ACTIVE, Ordering::SeqCst, Ordering::SeqCst).is_err() {
            return Err(Error::AlreadyActive);
        }
        let mut contexts = match transport::init(config) {
            Ok(c) => c,
            Err(e) => {
                PROCESS_STATE.store(FINISHED, Ordering::SeqCst);
                return Err(e.into());
            }
        };
        if contexts.len() != 1 {
            PROCESS_STATE.store(FINISHED, Ordering::SeqCst);
            for c in &contexts {
                c.finalize();
            }
            return Err(Error::Transport(transport::TransportError::Config(format!(
                "this process hosts {} ranks; attach each rank's context instead",
                contexts.len()
            ))));
        }
        let ctx = contexts.pop().expect("one context");
        ctx.claim_spmd();
        Ok(SpmdContext::wrap(ctx, true))
    }

    /// Enters using the launcher's environment variables.
    pub fn from_env() -> Result<SpmdContext> {
        SpmdContext::enter(&WorldConfig::from_env()?)
    }

    /// Takes ownership of one rank of an existing world, such as a thread of
    /// an in-process world. Each context can be attached once.
    pub fn attach(ctx: TransportContext) -> Result<SpmdContext> {
        if ctx.is_finalized() || !ctx.claim_spmd() {
            return Err(Error::AlreadyActive);
        }
        Ok(SpmdContext::wrap(ctx, false))
    }

    fn wrap(transport: TransportContext, owns_process: bool) -> SpmdContext {
        SpmdContext { myid: transport.rank(), nprocs: transport.size(), transport, exited: false, owns_process }
    }

    pub fn myid(&self) -> usize {
        self.myid
    }

    pub fn nprocs(&self) -> usize {
        self.nprocs
    }

    pub fn transport(&self) -> &TransportContext {
        &self.transport
    }

    pub fn world(&self) -> Communicator {
        self.transport.world()
    }

    /// A fresh message buffer on the world communicator.
    pub fn msgbuf(&self) -> MsgBuf {
        MsgBuf::new(&self.transport)
    }

    pub fn is_active(&self) -> bool {
        !self.exited
    }

    /// Runs `f` during finalization, before connections close.
    pub fn on_exit(&self, f: impl FnOnce() + Send + 'static) {
        self.transport.on_finalize(f);
    }

    /// Finalizes now instead of at scope end. Repeated calls do nothing.
    pub fn exit(&mut self) {
        if self.exited {
            return;
        }
        self.exited = true;
        self.transport.finalize();
        if self.owns_process {
            PROCESS_STATE.store(FINISHED, Ordering::SeqCst);
        }
    }
}

impl Drop for SpmdContext {
    fn drop(&mut self) {
        self.exit();
    }
}
