//! A small message-passing runtime: ranks, tagged point-to-point messages,
//! communicators over rank subsets, and root-centric collectives.
//!
//! Two backends sit behind [`TransportContext`]:
//!
//! * in-process, where every rank is a thread sharing one address space, and
//! * a socket mesh, where every rank is an OS process and every pair of
//!   ranks shares one TCP connection, set up through a coordinator
//!   ([`rendezvous::Coordinator`]).
//!
//! Sends are buffered: they return once the message is queued. Messages
//! between one pair of ranks on one communicator arrive in send order.
//! Collective traffic travels as control frames and never matches a
//! user-level [`TransportContext::recv`].

pub mod frame;
pub mod rendezvous;

mod inproc;
mod mailbox;
mod socket;

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use thiserror::Error;

use crate::pack::Encoding;
use mailbox::Mailbox;

pub use inproc::{in_process_world, run_in_process};

/// Largest payload a single message may carry.
pub const MAX_PAYLOAD: usize = i32::MAX as usize;

pub const ENV_RANK: &str = "PACKRUN_RANK";
pub const ENV_NPROCS: &str = "PACKRUN_NPROCS";
pub const ENV_COORD: &str = "PACKRUN_COORD";
/// Set to `1` by the launcher when the world uses the portable encoding.
pub const ENV_HETERO: &str = "PACKRUN_HETERO";
pub const ENV_TIMEOUT: &str = "PACKRUN_TIMEOUT";

pub const DEFAULT_RENDEZVOUS_TIMEOUT: Duration = Duration::from_secs(10);

static PROCESS_INITIALIZED: AtomicBool = AtomicBool::new(false);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("rendezvous timed out after {0} s")]
    RendezvousTimeout(u64),
    #[error("rank {0} registered twice")]
    RankConflict(usize),
    #[error("ranks disagree on the world encoding")]
    EncodingMismatch,
    #[error("ranks disagree on the world size")]
    SizeMismatch,
    #[error("transport already initialized in this process")]
    AlreadyInitialized,
    #[error("cannot send to self")]
    SelfSend,
    #[error("rank {rank} outside communicator of size {size}")]
    InvalidRank { rank: usize, size: usize },
    #[error("root {root} outside communicator of size {size}")]
    InvalidRoot { root: usize, size: usize },
    #[error("transport finalized")]
    Finalized,
    #[error("payload of {0} bytes exceeds the 2^31-1 limit")]
    PayloadTooLarge(usize),
    #[error("expected {expected} segments, found {found}")]
    SegmentCountMismatch { expected: usize, found: usize },
    #[error("communicator subset is empty")]
    EmptySubset,
    #[error("members passed different subsets to comm_create")]
    SubsetMismatch,
    #[error("rank {rank} {}", if *.finalized { "finalized" } else { "disconnected without finalizing" })]
    PeerGone { rank: usize, finalized: bool },
    #[error("invalid world configuration: {0}")]
    Config(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for TransportError {
    fn from(e: std::io::Error) -> Self {
        TransportError::Io(e.to_string())
    }
}

pub type Result<T, E = TransportError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Backend {
    InProcess,
    SocketMesh {
        coordinator: SocketAddr,
        rank: usize,
        timeout: Duration,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorldConfig {
    pub nprocs: usize,
    pub backend: Backend,
    /// `Portable` for heterogeneous worlds.
    pub encoding: Encoding,
}

impl WorldConfig {
    pub fn in_process(nprocs: usize) -> WorldConfig {
        WorldConfig { nprocs, backend: Backend::InProcess, encoding: Encoding::Native }
    }

    pub fn with_encoding(mut self, encoding: Encoding) -> WorldConfig {
        self.encoding = encoding;
        self
    }

    /// Reads the variables set by the launcher for a socket-mesh rank.
    pub fn from_env() -> Result<WorldConfig> {
        let var = |k: &str| std::env::var(k).map_err(|_| TransportError::Config(format!("{k} not set")));
        let parse = |k: &str, v: String| {
            v.parse::<usize>().map_err(|_| TransportError::Config(format!("{k}={v} is not a count")))
        };
        let rank = parse(ENV_RANK, var(ENV_RANK)?)?;
        let nprocs = parse(ENV_NPROCS, var(ENV_NPROCS)?)?;
        let coord = var(ENV_COORD)?;
        let coordinator = coord
            .parse()
            .map_err(|_| TransportError::Config(format!("{ENV_COORD}={coord} is not host:port")))?;
        let timeout = match std::env::var(ENV_TIMEOUT) {
            Ok(v) => Duration::from_secs_f64(
                v.parse().map_err(|_| TransportError::Config(format!("{ENV_TIMEOUT}={v}")))?,
            ),
            Err(_) => DEFAULT_RENDEZVOUS_TIMEOUT,
        };
        let encoding = match std::env::var(ENV_HETERO).as_deref() {
            Ok("1") => Encoding::Portable,
            _ => Encoding::Native,
        };
        Ok(WorldConfig { nprocs, backend: Backend::SocketMesh { coordinator, rank, timeout }, encoding })
    }

    fn check(&self) -> Result<()> {
        if self.nprocs == 0 {
            return Err(TransportError::Config("nprocs must be at least 1".into()));
        }
        if let Backend::SocketMesh { rank, .. } = self.backend {
            if rank >= self.nprocs {
                return Err(TransportError::InvalidRank { rank, size: self.nprocs });
            }
        }
        Ok(())
    }
}

/// Initializes the runtime for this process and returns the contexts it
/// hosts: all ranks for the in-process backend, one for a socket mesh.
///
/// Only one call per process succeeds.
pub fn init(config: &WorldConfig) -> Result<Vec<TransportContext>> {
    config.check()?;
    if PROCESS_INITIALIZED.swap(true, Ordering::SeqCst) {
        return Err(TransportError::AlreadyInitialized);
    }
    match &config.backend {
        Backend::InProcess => Ok(in_process_world(config.nprocs, config.encoding)),
        Backend::SocketMesh { coordinator, rank, timeout } => {
            socket::connect(*coordinator, *rank, config.nprocs, config.encoding, *timeout).map(|c| vec![c])
        }
    }
}

/// Whether [`init`] has been called in this process.
pub fn process_initialized() -> bool {
    PROCESS_INITIALIZED.load(Ordering::SeqCst)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Kind {
    Data = 0,
    Control = 1,
}

/// The unit moved between ranks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Envelope {
    pub src: usize,
    pub dest: usize,
    pub comm_id: u32,
    pub kind: Kind,
    pub tag: u32,
    pub payload: Vec<u8>,
}

/// Control tags for collective traffic.
mod op {
    pub const BARRIER_IN: u32 = 1;
    pub const BARRIER_OUT: u32 = 2;
    pub const BCAST: u32 = 3;
    pub const GATHER: u32 = 4;
    pub const SCATTER: u32 = 5;
    pub const SPLIT_IN: u32 = 6;
    pub const SPLIT_OUT: u32 = 7;
    /// Sent on communicator 0 by a finalizing rank.
    pub const BYE: u32 = u32::MAX;
}

/// An ordered set of world ranks, seen from one member.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Communicator {
    id: u32,
    members: Arc<[usize]>,
    local_rank: usize,
}

impl Communicator {
    pub const WORLD_ID: u32 = 0;

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    /// This process's position in the communicator.
    pub fn rank(&self) -> usize {
        self.local_rank
    }

    /// World ranks of the members, in local-rank order.
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn world_rank(&self, local: usize) -> Option<usize> {
        self.members.get(local).copied()
    }

    pub fn local_rank_of(&self, world: usize) -> Option<usize> {
        self.members.binary_search(&world).ok()
    }

    fn check_rank(&self, rank: usize) -> Result<usize> {
        self.world_rank(rank).ok_or(TransportError::InvalidRank { rank, size: self.size() })
    }

    fn check_root(&self, root: usize) -> Result<usize> {
        self.world_rank(root).ok_or(TransportError::InvalidRoot { root, size: self.size() })
    }
}

/// Result of [`TransportContext::comm_create`] for one caller.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Membership {
    Member(Communicator),
    NotMember,
}

impl Membership {
    pub fn member(self) -> Option<Communicator> {
        match self {
            Membership::Member(c) => Some(c),
            Membership::NotMember => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Any,
    Rank(usize),
}

impl From<usize> for Source {
    fn from(r: usize) -> Source {
        Source::Rank(r)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TagMatch {
    Any,
    Tag(u32),
}

impl From<u32> for TagMatch {
    fn from(t: u32) -> TagMatch {
        TagMatch::Tag(t)
    }
}

/// A received point-to-point message.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Message {
    /// Sender's rank in the communicator the message was received on.
    pub source: usize,
    pub tag: u32,
    pub payload: Vec<u8>,
}

/// Outgoing half of a backend.
pub(crate) trait Outbound: Send + Sync {
    fn deliver(&self, env: Envelope) -> Result<()>;
    /// Tells every peer this rank is finalizing and releases connections.
    fn close(&self, me: usize);
    /// The rank is going away without finalizing.
    fn abandon(&self, _me: usize) {}
}

struct Shared {
    rank: usize,
    size: usize,
    encoding: Encoding,
    world: Communicator,
    mailbox: Arc<Mailbox>,
    out: Box<dyn Outbound>,
    finalizing: AtomicBool,
    finalized: AtomicBool,
    finalize_count: AtomicUsize,
    next_comm_seq: AtomicU32,
    spmd_claimed: AtomicBool,
    on_finalize: Mutex<Vec<Box<dyn FnOnce() + Send>>>,
}

/// One rank's handle on the runtime. Cheap to clone; clones share state.
#[derive(Clone)]
pub struct TransportContext {
    inner: Arc<Shared>,
}

impl std::fmt::Debug for TransportContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TransportContext")
            .field("rank", &self.inner.rank)
            .field("size", &self.inner.size)
            .field("finalized", &self.is_finalized())
            .finish()
    }
}

impl TransportContext {
    pub(crate) fn new(
        rank: usize,
        size: usize,
        encoding: Encoding,
        mailbox: Arc<Mailbox>,
        out: Box<dyn Outbound>,
    ) -> TransportContext {
        let world = Communicator { id: Communicator::WORLD_ID, members: (0..size).collect(), local_rank: rank };
        TransportContext {
            inner: Arc::new(Shared {
                rank,
                size,
                encoding,
                world,
                mailbox,
                out,
                finalizing: AtomicBool::new(false),
                finalized: AtomicBool::new(false),
                finalize_count: AtomicUsize::new(0),
                next_comm_seq: AtomicU32::new(1),
                spmd_claimed: AtomicBool::new(false),
                on_finalize: Mutex::new(Vec::new()),
            }),
        }
    }

    /// World rank of this process.
    pub fn rank(&self) -> usize {
        self.inner.rank
    }

    pub fn size(&self) -> usize {
        self.inner.size
    }

    pub fn encoding(&self) -> Encoding {
        self.inner.encoding
    }

    pub fn world(&self) -> Communicator {
        self.inner.world.clone()
    }

    pub fn is_finalized(&self) -> bool {
        self.inner.finalized.load(Ordering::SeqCst)
    }

    /// How many times finalization actually ran (0 or 1).
    pub fn finalize_count(&self) -> usize {
        self.inner.finalize_count.load(Ordering::SeqCst)
    }

    pub(crate) fn claim_spmd(&self) -> bool {
        !self.inner.spmd_claimed.swap(true, Ordering::SeqCst)
    }

    /// Registers a callback run at the start of [`finalize`](Self::finalize).
    pub fn on_finalize(&self, f: impl FnOnce() + Send + 'static) {
        self.inner.on_finalize.lock().unwrap().push(Box::new(f));
    }

    fn live(&self) -> Result<()> {
        if self.is_finalized() {
            Err(TransportError::Finalized)
        } else {
            Ok(())
        }
    }

    fn post(&self, comm: &Communicator, dest_world: usize, kind: Kind, tag: u32, payload: Vec<u8>) -> Result<()> {
        if payload.len() > MAX_PAYLOAD {
            return Err(TransportError::PayloadTooLarge(payload.len()));
        }
        self.inner.out.deliver(Envelope {
            src: self.rank(),
            dest: dest_world,
            comm_id: comm.id,
            kind,
            tag,
            payload,
        })
    }

    /// Queues `payload` for `dest` (a rank in `comm`).
    pub fn send(&self, comm: &Communicator, dest: usize, tag: u32, payload: Vec<u8>) -> Result<()> {
        self.live()?;
        let dest_world = comm.check_rank(dest)?;
        if dest == comm.local_rank {
            return Err(TransportError::SelfSend);
        }
        self.post(comm, dest_world, Kind::Data, tag, payload)
    }

    /// Blocks for the oldest matching message on `comm`.
    ///
    /// Waiting on a rank that will never send again (it finalized or its
    /// connection dropped) fails with [`TransportError::PeerGone`] instead of
    /// hanging. Other deadlocks are not detected.
    pub fn recv(&self, comm: &Communicator, source: impl Into<Source>, tag: impl Into<TagMatch>) -> Result<Message> {
        self.live()?;
        let (source, tag) = (source.into(), tag.into());
        let sources: Vec<usize> = match source {
            Source::Rank(r) => vec![comm.check_rank(r)?],
            Source::Any => comm.members.iter().copied().filter(|&r| r != self.rank()).collect(),
        };
        let comm_id = comm.id;
        let env = self.inner.mailbox.take(&sources, |e| {
            e.kind == Kind::Data
                && e.comm_id == comm_id
                && sources.contains(&e.src)
                && match tag {
                    TagMatch::Any => true,
                    TagMatch::Tag(t) => e.tag == t,
                }
        })?;
        Ok(Message {
            source: comm.local_rank_of(env.src).expect("sender is a member"),
            tag: env.tag,
            payload: env.payload,
        })
    }

    /// Reports the message [`recv`](Self::recv) would return right now,
    /// without removing it: `(source, tag, payload length)`.
    pub fn probe(
        &self,
        comm: &Communicator,
        source: impl Into<Source>,
        tag: impl Into<TagMatch>,
    ) -> Result<Option<(usize, u32, usize)>> {
        self.live()?;
        let (source, tag) = (source.into(), tag.into());
        let from = match source {
            Source::Rank(r) => Some(comm.check_rank(r)?),
            Source::Any => None,
        };
        let comm_id = comm.id;
        let me = self.rank();
        Ok(self.inner.mailbox.peek(
            |e| {
                e.kind == Kind::Data
                    && e.comm_id == comm_id
                    && e.src != me
                    && from.is_none_or(|r| e.src == r)
                    && match tag {
                        TagMatch::Any => true,
                        TagMatch::Tag(t) => e.tag == t,
                    }
            },
            |e| (comm.local_rank_of(e.src).expect("sender is a member"), e.tag, e.payload.len()),
        ))
    }

    /// Number of arrived messages not yet received, on any communicator.
    pub fn pending(&self) -> usize {
        self.inner.mailbox.len()
    }

    fn send_ctl(&self, comm: &Communicator, dest: usize, op: u32, payload: Vec<u8>) -> Result<()> {
        self.post(comm, comm.members[dest], Kind::Control, op, payload)
    }

    fn recv_ctl(&self, comm: &Communicator, src: usize, op: u32) -> Result<Vec<u8>> {
        let src_world = comm.members[src];
        let comm_id = comm.id;
        let env = self.inner.mailbox.take(&[src_world], |e| {
            e.kind == Kind::Control && e.comm_id == comm_id && e.src == src_world && e.tag == op
        })?;
        Ok(env.payload)
    }

    /// Returns once every member of `comm` has entered the barrier.
    pub fn barrier(&self, comm: &Communicator) -> Result<()> {
        self.live()?;
        let me = comm.local_rank;
        if me == 0 {
            for r in 1..comm.size() {
                self.recv_ctl(comm, r, op::BARRIER_IN)?;
            }
            for r in 1..comm.size() {
                self.send_ctl(comm, r, op::BARRIER_OUT, Vec::new())?;
            }
        } else {
            self.send_ctl(comm, 0, op::BARRIER_IN, Vec::new())?;
            self.recv_ctl(comm, 0, op::BARRIER_OUT)?;
        }
        Ok(())
    }

    /// Every member returns the root's `payload`; other members' payloads are ignored.
    pub fn broadcast(&self, comm: &Communicator, root: usize, payload: Vec<u8>) -> Result<Vec<u8>> {
        self.live()?;
        comm.check_root(root)?;
        if comm.local_rank == root {
            for r in (0..comm.size()).filter(|&r| r != root) {
                self.send_ctl(comm, r, op::BCAST, payload.clone())?;
            }
            Ok(payload)
        } else {
            self.recv_ctl(comm, root, op::BCAST)
        }
    }

    /// The root receives every member's payload in local-rank order, its own included.
    pub fn gather(&self, comm: &Communicator, root: usize, payload: Vec<u8>) -> Result<Option<Vec<Vec<u8>>>> {
        self.live()?;
        comm.check_root(root)?;
        if comm.local_rank == root {
            let mut own = Some(payload);
            let mut out = Vec::with_capacity(comm.size());
            for r in 0..comm.size() {
                if r == root {
                    out.push(own.take().expect("root slot visited once"));
                } else {
                    out.push(self.recv_ctl(comm, r, op::GATHER)?);
                }
            }
            Ok(Some(out))
        } else {
            self.send_ctl(comm, root, op::GATHER, payload)?;
            Ok(None)
        }
    }

    /// Member `i` receives `segments[i]`; only the root's `segments` are read.
    ///
    /// A wrong segment count at the root fails on every member.
    pub fn scatter(&self, comm: &Communicator, root: usize, segments: Vec<Vec<u8>>) -> Result<Vec<u8>> {
        self.live()?;
        comm.check_root(root)?;
        let n = comm.size();
        if comm.local_rank == root {
            if segments.len() != n {
                let mut reason = vec![1u8];
                reason.extend_from_slice(&(segments.len() as u32).to_be_bytes());
                for r in (0..n).filter(|&r| r != root) {
                    self.send_ctl(comm, r, op::SCATTER, reason.clone())?;
                }
                return Err(TransportError::SegmentCountMismatch { expected: n, found: segments.len() });
            }
            let mut mine = Vec::new();
            for (r, seg) in segments.into_iter().enumerate() {
                if r == root {
                    mine = seg;
                } else {
                    let mut framed = Vec::with_capacity(seg.len() + 1);
                    framed.push(0u8);
                    framed.extend_from_slice(&seg);
                    self.send_ctl(comm, r, op::SCATTER, framed)?;
                }
            }
            Ok(mine)
        } else {
            let mut framed = self.recv_ctl(comm, root, op::SCATTER)?;
            match framed.first() {
                Some(0) => {
                    framed.remove(0);
                    Ok(framed)
                }
                Some(1) if framed.len() == 5 => Err(TransportError::SegmentCountMismatch {
                    expected: n,
                    found: u32::from_be_bytes(framed[1..5].try_into().unwrap()) as usize,
                }),
                _ => Err(TransportError::Protocol("malformed scatter frame".into())),
            }
        }
    }

    /// Builds a child communicator from `subset` (local ranks of `parent`).
    ///
    /// Collective over `parent`: every member must call it with the same
    /// subset. Members of the subset get their new communicator, ordered by
    /// parent rank; everyone else gets [`Membership::NotMember`].
    pub fn comm_create(&self, parent: &Communicator, subset: &[usize]) -> Result<Membership> {
        self.live()?;
        if subset.is_empty() {
            return Err(TransportError::EmptySubset);
        }
        let mut ranks = subset.to_vec();
        ranks.sort_unstable();
        ranks.dedup();
        for &r in &ranks {
            parent.check_rank(r)?;
        }
        let encoded: Vec<u8> = ranks.iter().flat_map(|&r| (r as u32).to_be_bytes()).collect();

        let reply = if parent.local_rank == 0 {
            let mut agree = true;
            for r in 1..parent.size() {
                agree &= self.recv_ctl(parent, r, op::SPLIT_IN)? == encoded;
            }
            let mut reply = vec![u8::from(!agree)];
            if agree {
                let seq = self.inner.next_comm_seq.fetch_add(1, Ordering::SeqCst);
                let id = allocate_comm_id(self.rank(), seq)?;
                reply.extend_from_slice(&id.to_be_bytes());
            }
            for r in 1..parent.size() {
                self.send_ctl(parent, r, op::SPLIT_OUT, reply.clone())?;
            }
            reply
        } else {
            self.send_ctl(parent, 0, op::SPLIT_IN, encoded)?;
            self.recv_ctl(parent, 0, op::SPLIT_OUT)?
        };

        let id = match reply.as_slice() {
            [0, a, b, c, d] => u32::from_be_bytes([*a, *b, *c, *d]),
            [1] => return Err(TransportError::SubsetMismatch),
            _ => return Err(TransportError::Protocol("malformed comm_create reply".into())),
        };
        let members: Arc<[usize]> = ranks.iter().map(|&r| parent.members[r]).collect();
        Ok(match ranks.binary_search(&parent.local_rank) {
            Ok(local_rank) => Membership::Member(Communicator { id, members, local_rank }),
            Err(_) => Membership::NotMember,
        })
    }

    /// Tears the runtime down for this rank. Later calls are no-ops; later
    /// operations fail with [`TransportError::Finalized`].
    pub fn finalize(&self) {
        if self.inner.finalizing.swap(true, Ordering::SeqCst) {
            return;
        }
        let hooks = std::mem::take(&mut *self.inner.on_finalize.lock().unwrap());
        for hook in hooks {
            hook();
        }
        self.inner.finalized.store(true, Ordering::SeqCst);
        self.inner.out.close(self.rank());
        self.inner.mailbox.close();
        self.inner.finalize_count.fetch_add(1, Ordering::SeqCst);
    }
}

impl TransportContext {
    pub(crate) fn abandon(&self) {
        if !self.is_finalized() {
            self.inner.out.abandon(self.rank());
        }
    }
}

/// Child communicator ids: the allocating world rank in the high half, a
/// per-rank sequence in the low half. Zero stays reserved for the world.
fn allocate_comm_id(world_rank: usize, seq: u32) -> Result<u32> {
    if world_rank >= 0xffff || seq > 0xffff {
        return Err(TransportError::Config("communicator id space exhausted".into()));
    }
    Ok(((world_rank as u32 + 1) << 16) | seq)
}
