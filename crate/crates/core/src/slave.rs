//! Master/slave task farm.
//!
//! Rank 0 is the master; every other rank runs [`slave_loop`], an
//! interpreter that receives requests, dispatches them to a handler chosen
//! by the request's selector, and sends the handler's buffer back as the
//! reply. Handlers unpack their arguments from the buffer and leave their
//! results in it:
//!
//! ```
//! use packmp::slave::{HandlerTable, MasterPool, slave_loop};
//! use packmp::spmd::SpmdContext;
//! use packmp::transport::run_in_process;
//! use packmp::Encoding;
//!
//! let table = HandlerTable::<()>::new()
//!     .with("add", |_, args| {
//!         let (x, y): (i32, i32) = (args.take()?, args.take()?);
//!         args.reset().put(&(x + y))?;
//!         Ok(())
//!     })
//!     .unwrap();
//!
//! let sums = run_in_process(3, Encoding::Native, |ctx| {
//!     let spmd = SpmdContext::attach(ctx).unwrap();
//!     if spmd.myid() == 0 {
//!         let mut pool = MasterPool::new(&spmd, &table).unwrap();
//!         let mut req = pool.request("add").unwrap();
//!         req.put(&1i32).unwrap().put(&2i32).unwrap();
//!         pool.exec(req).unwrap();
//!         let (_, mut reply) = pool.get_returnv().unwrap();
//!         Some(reply.take::<i32>().unwrap())
//!     } else {
//!         slave_loop(&spmd, &table, &mut ()).unwrap();
//!         None
//!     }
//! });
//! assert_eq!(sums[0], Some(3));
//! ```
//!
//! Wire formats, all integers big-endian, carried on [`CONTROL_TAG`]:
//!
//! * request: selector `u32` (or [`STOP`]) followed by packed arguments;
//! * reply: status `u8` (0 ok, 1 handler error, 2 unknown selector) followed
//!   by the handler's bytes or a UTF-8 diagnostic.
//!
//! At startup every slave sends the master a digest of its handler names;
//! the master refuses to run if any slave's table differs from its own.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::msgbuf::MsgBuf;
use crate::pack::Buffer;
use crate::spmd::SpmdContext;
use crate::transport::{Communicator, Source, TransportContext};
use crate::typedesc::TypeRegistry;
use crate::{Error, Result};

/// Tag carrying requests, replies and the startup handshake.
pub const CONTROL_TAG: u32 = 1;
/// Selector value that ends a slave's loop.
pub const STOP: u32 = 0xFFFF_FFFF;

const REPLY_OK: u8 = 0;
const REPLY_HANDLER_ERROR: u8 = 1;
const REPLY_UNKNOWN_SELECTOR: u8 = 2;

pub type HandlerResult = std::result::Result<(), Box<dyn std::error::Error + Send + Sync>>;

type Handler<S> = Box<dyn Fn(&mut S, &mut MsgBuf) -> HandlerResult + Send + Sync>;

/// Named handlers over slave state `S`. A handler's position is its selector.
pub struct HandlerTable<S> {
    entries: Vec<(String, Handler<S>)>,
    registry: Option<Arc<TypeRegistry>>,
}

impl<S> Default for HandlerTable<S> {
    fn default() -> Self {
        HandlerTable { entries: Vec::new(), registry: None }
    }
}

impl<S> HandlerTable<S> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with<F>(mut self, name: &str, handler: F) -> Result<Self>
    where
        F: Fn(&mut S, &mut MsgBuf) -> HandlerResult + Send + Sync + 'static,
    {
        self.register(name, handler)?;
        Ok(self)
    }

    pub fn register<F>(&mut self, name: &str, handler: F) -> Result<u32>
    where
        F: Fn(&mut S, &mut MsgBuf) -> HandlerResult + Send + Sync + 'static,
    {
        if self.selector(name).is_some() {
            return Err(Error::DuplicateSelector(name.to_string()));
        }
        if self.entries.len() >= STOP as usize {
            return Err(Error::DuplicateSelector(name.to_string()));
        }
        self.entries.push((name.to_string(), Box::new(handler)));
        Ok(self.entries.len() as u32 - 1)
    }

    /// Registry attached to every argument buffer handed to a handler.
    pub fn with_registry(mut self, registry: Arc<TypeRegistry>) -> Self {
        self.registry = Some(registry);
        self
    }

    pub fn selector(&self, name: &str) -> Option<u32> {
        self.entries.iter().position(|(n, _)| n == name).map(|i| i as u32)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// SHA-256 over the selector names in order.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for (name, _) in &self.entries {
            h.update((name.len() as u32).to_be_bytes());
            h.update(name.as_bytes());
        }
        h.finalize().into()
    }
}

fn reply(ctx: &TransportContext, world: &Communicator, status: u8, body: &[u8]) -> Result<()> {
    let mut frame = Vec::with_capacity(body.len() + 1);
    frame.push(status);
    frame.extend_from_slice(body);
    ctx.send(world, 0, CONTROL_TAG, frame)?;
    Ok(())
}

/// Serves requests from the master until it sends [`STOP`].
///
/// Unknown selectors and failing (or panicking) handlers are reported to the
/// master as error replies; the loop keeps going.
pub fn slave_loop<S>(spmd: &SpmdContext, table: &HandlerTable<S>, state: &mut S) -> Result<()> {
    if spmd.myid() == 0 {
        return Err(Error::Role("rank 0 is the master and cannot run the slave loop".into()));
    }
    let ctx = spmd.transport();
    let world = ctx.world();
    ctx.send(&world, 0, CONTROL_TAG, table.digest().to_vec())?;

    loop {
        let msg = ctx.recv(&world, 0usize, CONTROL_TAG)?;
        let Some(head) = msg.payload.get(..4) else {
            reply(ctx, &world, REPLY_HANDLER_ERROR, b"request shorter than its selector")?;
            continue;
        };
        let selector = u32::from_be_bytes(head.try_into().expect("four bytes"));
        if selector == STOP {
            return Ok(());
        }
        let Some((_, handler)) = table.entries.get(selector as usize) else {
            reply(ctx, &world, REPLY_UNKNOWN_SELECTOR, format!("unknown selector {selector}").as_bytes())?;
            continue;
        };

        let mut args = MsgBuf::new(ctx);
        if let Some(reg) = &table.registry {
            args.set_registry(reg.clone());
        }
        let mut payload = msg.payload;
        payload.drain(..4);
        args.buffer_mut().replace(payload);

        match catch_unwind(AssertUnwindSafe(|| handler(state, &mut args))) {
            Ok(Ok(())) => reply(ctx, &world, REPLY_OK, args.data())?,
            Ok(Err(e)) => reply(ctx, &world, REPLY_HANDLER_ERROR, e.to_string().as_bytes())?,
            Err(panic) => {
                let text = panic
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| panic.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "handler panicked".to_string());
                reply(ctx, &world, REPLY_HANDLER_ERROR, format!("panic: {text}").as_bytes())?;
            }
        }
    }
}

/// The master's view of the slaves: who is idle, who owes a reply.
///
/// Dropping the pool shuts the slaves down.
pub struct MasterPool {
    ctx: TransportContext,
    world: Communicator,
    selectors: Vec<String>,
    registry: Option<Arc<TypeRegistry>>,
    idle: BTreeSet<usize>,
    busy: BTreeSet<usize>,
    stopped: bool,
}

impl MasterPool {
    /// Waits for every slave's handshake and checks their handler tables
    /// against `table`. On a mismatch all slaves are stopped.
    pub fn new<S>(spmd: &SpmdContext, table: &HandlerTable<S>) -> Result<MasterPool> {
        if spmd.myid() != 0 {
            return Err(Error::Role(format!("rank {} is a slave; only rank 0 can be the master", spmd.myid())));
        }
        let ctx = spmd.transport().clone();
        let world = ctx.world();
        let slaves: BTreeSet<usize> = (1..spmd.nprocs()).collect();
        let mut pool = MasterPool {
            ctx,
            world,
            selectors: table.names().map(str::to_string).collect(),
            registry: table.registry.clone(),
            idle: slaves.clone(),
            busy: BTreeSet::new(),
            stopped: false,
        };

        let digest = table.digest();
        let mut mismatch = None;
        for &s in &slaves {
            let hello = pool.ctx.recv(&pool.world, s, CONTROL_TAG)?;
            if hello.payload != digest && mismatch.is_none() {
                mismatch = Some(s);
            }
        }
        if let Some(slave) = mismatch {
            pool.shutdown()?;
            return Err(Error::TableMismatch { slave });
        }
        Ok(pool)
    }

    pub fn nslaves(&self) -> usize {
        self.idle.len() + self.busy.len()
    }

    pub fn idle(&self) -> &BTreeSet<usize> {
        &self.idle
    }

    pub fn busy(&self) -> &BTreeSet<usize> {
        &self.busy
    }

    pub fn outstanding(&self) -> usize {
        self.busy.len()
    }

    pub fn all_idle(&self) -> bool {
        self.busy.is_empty()
    }

    /// A buffer that starts with `selector`, ready for the arguments.
    pub fn request(&self, selector: &str) -> Result<MsgBuf> {
        let index = self
            .selectors
            .iter()
            .position(|n| n == selector)
            .ok_or_else(|| Error::UnknownSelector(selector.to_string()))?;
        Ok(self.raw_request(index as u32))
    }

    /// Like [`request`](Self::request) but with an unchecked selector index.
    pub fn raw_request(&self, selector: u32) -> MsgBuf {
        let mut buf = self.msgbuf();
        buf.buffer_mut().put_raw(&selector.to_be_bytes());
        buf
    }

    fn msgbuf(&self) -> MsgBuf {
        let buf = MsgBuf::new(&self.ctx);
        match &self.registry {
            Some(r) => buf.with_registry(r.clone()),
            None => buf,
        }
    }

    /// Sends `request` to the lowest-numbered idle slave and returns its rank.
    pub fn exec(&mut self, request: MsgBuf) -> Result<usize> {
        if self.stopped {
            return Err(Error::Role("the pool has been shut down".into()));
        }
        let slave = *self.idle.first().ok_or(Error::NoIdleSlave)?;
        if request.size() < 4 {
            return Err(Error::Role("request does not start with a selector".into()));
        }
        self.ctx.send(&self.world, slave, CONTROL_TAG, request.data().to_vec())?;
        self.idle.remove(&slave);
        self.busy.insert(slave);
        Ok(slave)
    }

    /// Blocks for the next reply from any busy slave and marks it idle.
    pub fn get_returnv(&mut self) -> Result<(usize, MsgBuf)> {
        if self.busy.is_empty() {
            return Err(Error::NoOutstanding);
        }
        let msg = loop {
            let m = self.ctx.recv(&self.world, Source::Any, CONTROL_TAG)?;
            if self.busy.contains(&m.source) {
                break m;
            }
            // late handshake or reply from a slave we are not waiting on
        };
        let slave = msg.source;
        self.busy.remove(&slave);
        self.idle.insert(slave);

        let (status, body) = msg.payload.split_first().ok_or_else(|| Error::HandlerError {
            slave,
            diagnostic: "empty reply frame".into(),
        })?;
        let text = || String::from_utf8_lossy(body).into_owned();
        match *status {
            REPLY_OK => {
                let mut buf = self.msgbuf();
                *buf.buffer_mut() = Buffer::from_bytes(self.ctx.encoding(), body.to_vec());
                Ok((slave, buf))
            }
            REPLY_UNKNOWN_SELECTOR => Err(Error::HandlerError { slave, diagnostic: text() }),
            REPLY_HANDLER_ERROR => Err(Error::HandlerError { slave, diagnostic: text() }),
            other => Err(Error::HandlerError { slave, diagnostic: format!("unknown reply status {other}") }),
        }
    }

    /// Runs every job through `selector`, keeping all slaves busy, and
    /// returns the replies in job order.
    ///
    /// `jobs` hold argument bytes packed in the world's encoding. If a job
    /// fails, no further jobs are dispatched; outstanding replies are
    /// collected and the first failure is returned.
    pub fn run_joblist(&mut self, selector: &str, jobs: &[Vec<u8>]) -> Result<Vec<MsgBuf>> {
        if jobs.is_empty() {
            return Ok(Vec::new());
        }
        if self.nslaves() == 0 {
            return Err(Error::NoSlaves);
        }
        let header = self.request(selector)?.data().to_vec();
        let build = |pool: &MasterPool, job: &[u8]| {
            let mut req = pool.msgbuf();
            req.buffer_mut().put_raw(&header);
            req.buffer_mut().put_raw(job);
            req
        };

        let mut replies: Vec<Option<MsgBuf>> = (0..jobs.len()).map(|_| None).collect();
        let mut assigned: BTreeMap<usize, usize> = BTreeMap::new();
        let mut next = 0;
        let mut failure: Option<Error> = None;

        while next < jobs.len() && !self.idle.is_empty() {
            let slave = self.exec(build(self, &jobs[next]))?;
            assigned.insert(slave, next);
            next += 1;
        }
        while !self.all_idle() {
            let outcome = self.get_returnv();
            let slave = match &outcome {
                Ok((s, _)) => *s,
                Err(Error::HandlerError { slave, .. }) => *slave,
                Err(_) => return outcome.map(|_| Vec::new()),
            };
            let job = assigned.remove(&slave).expect("busy slave has a job");
            match outcome {
                Ok((_, buf)) => replies[job] = Some(buf),
                Err(Error::HandlerError { diagnostic, .. }) => {
                    failure.get_or_insert(Error::JobFailed { job, slave, diagnostic });
                }
                Err(_) => unreachable!("handled above"),
            }
            if failure.is_none() && next < jobs.len() {
                let slave = self.exec(build(self, &jobs[next]))?;
                assigned.insert(slave, next);
                next += 1;
            }
        }
        if let Some(e) = failure {
            return Err(e);
        }
        Ok(replies.into_iter().map(|r| r.expect("every job answered")).collect())
    }

    /// Collects outstanding replies, then stops every slave. Idempotent.
    pub fn shutdown(&mut self) -> Result<()> {
        if self.stopped {
            return Ok(());
        }
        while !self.busy.is_empty() {
            match self.get_returnv() {
                Ok(_) | Err(Error::HandlerError { .. }) => {}
                Err(e) => {
                    self.stopped = true;
                    return Err(e);
                }
            }
        }
        self.stopped = true;
        let stop = STOP.to_be_bytes().to_vec();
        for &s in &self.idle {
            self.ctx.send(&self.world, s, CONTROL_TAG, stop.clone())?;
        }
        Ok(())
    }
}

impl Drop for MasterPool {
    fn drop(&mut self) {
        let _ = self.shutdown();
    }
}
