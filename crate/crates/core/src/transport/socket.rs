use std::io::{self, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use super::frame::{self, Registration, TableStatus};
use super::mailbox::{Mailbox, PeerExit};
use super::{op, Envelope, Kind, Outbound, Result, TransportContext, TransportError};
use crate::pack::Encoding;

const RETRY_PAUSE: Duration = Duration::from_millis(20);

struct SocketOut {
    peers: Vec<Option<Mutex<TcpStream>>>,
}

impl SocketOut {
    fn stream(&self, rank: usize) -> Result<&Mutex<TcpStream>> {
        self.peers
            .get(rank)
            .and_then(|p| p.as_ref())
            .ok_or_else(|| TransportError::Protocol(format!("no connection to rank {rank}")))
    }
}

impl Outbound for SocketOut {
    fn deliver(&self, env: Envelope) -> Result<()> {
        let dest = env.dest;
        let bytes = frame::encode_frame(&env);
        let mut s = self.stream(dest)?.lock().unwrap();
        s.write_all(&bytes).map_err(|e| match e.kind() {
            io::ErrorKind::BrokenPipe | io::ErrorKind::ConnectionReset => {
                TransportError::PeerGone { rank: dest, finalized: false }
            }
            _ => e.into(),
        })
    }

    fn close(&self, me: usize) {
        for (rank, peer) in self.peers.iter().enumerate() {
            let Some(peer) = peer else { continue };
            let bye = Envelope { src: me, dest: rank, comm_id: 0, kind: Kind::Control, tag: op::BYE, payload: vec![] };
            let mut s = peer.lock().unwrap();
            // the peer may already be gone; nothing to report at teardown
            let _ = frame::write_frame(&mut *s, &bye);
            let _ = s.flush();
            let _ = s.shutdown(Shutdown::Write);
        }
    }
}

fn remaining(deadline: Instant, timeout: Duration) -> Result<Duration> {
    let now = Instant::now();
    if now >= deadline {
        Err(TransportError::RendezvousTimeout(timeout.as_secs()))
    } else {
        Ok(deadline - now)
    }
}

fn is_timeout(e: &io::Error) -> bool {
    matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut)
}

fn dial(addr: SocketAddr, deadline: Instant, timeout: Duration) -> Result<TcpStream> {
    loop {
        let left = remaining(deadline, timeout)?;
        match TcpStream::connect_timeout(&addr, left) {
            Ok(s) => return Ok(s),
            Err(e) if is_timeout(&e) => return Err(TransportError::RendezvousTimeout(timeout.as_secs())),
            Err(_) => std::thread::sleep(RETRY_PAUSE),
        }
    }
}

/// Registers with the coordinator, then builds the full mesh: every rank
/// dials the ranks above it and accepts the ranks below it.
pub(crate) fn connect(
    coordinator: SocketAddr,
    rank: usize,
    nprocs: usize,
    encoding: Encoding,
    timeout: Duration,
) -> Result<TransportContext> {
    let deadline = Instant::now() + timeout;
    let timed_out = |e: io::Error| {
        if is_timeout(&e) {
            TransportError::RendezvousTimeout(timeout.as_secs())
        } else {
            e.into()
        }
    };

    let mut coord = dial(coordinator, deadline, timeout)?;
    let listener = TcpListener::bind((coord.local_addr()?.ip(), 0))?;
    Registration {
        rank: rank as u32,
        nprocs: nprocs as u32,
        encoding: encoding.as_byte(),
        addr: listener.local_addr()?.to_string(),
    }
    .write(&mut coord)?;
    coord.set_read_timeout(Some(remaining(deadline, timeout)?))?;
    let (status, addrs) = frame::read_table(&mut coord).map_err(timed_out)?;
    match status {
        TableStatus::Ok => {}
        TableStatus::RankConflict => return Err(TransportError::RankConflict(rank)),
        TableStatus::EncodingMismatch => return Err(TransportError::EncodingMismatch),
        TableStatus::SizeMismatch => return Err(TransportError::SizeMismatch),
        TableStatus::Timeout => return Err(TransportError::RendezvousTimeout(timeout.as_secs())),
    }
    drop(coord);
    if addrs.len() != nprocs {
        return Err(TransportError::Protocol(format!("address table has {} entries", addrs.len())));
    }

    let mut peers: Vec<Option<TcpStream>> = (0..nprocs).map(|_| None).collect();
    for (peer, addr) in addrs.iter().enumerate().skip(rank + 1) {
        let addr: SocketAddr = addr
            .parse()
            .map_err(|_| TransportError::Protocol(format!("bad peer address {addr}")))?;
        let mut s = dial(addr, deadline, timeout)?;
        frame::write_hello(&mut s, rank as u32)?;
        peers[peer] = Some(s);
    }

    listener.set_nonblocking(true)?;
    let mut accepted = 0;
    while accepted < rank {
        match listener.accept() {
            Ok((mut s, _)) => {
                s.set_nonblocking(false)?;
                s.set_read_timeout(Some(remaining(deadline, timeout)?))?;
                let peer = frame::read_hello(&mut s).map_err(timed_out)? as usize;
                if peer >= rank || peers[peer].is_some() {
                    return Err(TransportError::Protocol(format!("unexpected hello from rank {peer}")));
                }
                s.set_read_timeout(None)?;
                peers[peer] = Some(s);
                accepted += 1;
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                remaining(deadline, timeout)?;
                std::thread::sleep(Duration::from_millis(2));
            }
            Err(e) => return Err(e.into()),
        }
    }

    let mailbox = Arc::new(Mailbox::default());
    let mut writers = Vec::with_capacity(nprocs);
    for (peer, stream) in peers.into_iter().enumerate() {
        let Some(stream) = stream else {
            writers.push(None);
            continue;
        };
        stream.set_nodelay(true)?;
        let reader = stream.try_clone()?;
        let mb = mailbox.clone();
        std::thread::Builder::new()
            .name(format!("packmp-rx-{peer}"))
            .spawn(move || read_loop(reader, peer, mb))?;
        writers.push(Some(Mutex::new(stream)));
    }

    Ok(TransportContext::new(rank, nprocs, encoding, mailbox, Box::new(SocketOut { peers: writers })))
}

fn read_loop(mut stream: TcpStream, peer: usize, mailbox: Arc<Mailbox>) {
    let mut reader = io::BufReader::with_capacity(64 * 1024, &mut stream);
    loop {
        match frame::read_frame(&mut reader) {
            Ok(Some(env)) if env.kind == Kind::Control && env.comm_id == 0 && env.tag == op::BYE => {
                mailbox.mark_gone(peer, PeerExit::Finalized);
            }
            Ok(Some(env)) if env.src == peer => mailbox.push(env),
            Ok(Some(_)) | Ok(None) | Err(_) => break,
        }
    }
    mailbox.mark_gone(peer, PeerExit::Lost);
}
