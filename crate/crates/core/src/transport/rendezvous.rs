//! The coordinator side of socket-mesh startup.
//!
//! Each rank connects, registers its rank, world size, encoding and the
//! address it listens on; once all ranks are in, every rank receives the full
//! address table and the coordinator is done.

use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use super::frame::{self, Registration, TableStatus};
use super::{Result, TransportError};

pub struct Coordinator {
    listener: TcpListener,
    nprocs: usize,
}

impl Coordinator {
    pub fn bind(addr: impl ToSocketAddrs, nprocs: usize) -> io::Result<Coordinator> {
        Ok(Coordinator { listener: TcpListener::bind(addr)?, nprocs })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn run(self, timeout: Duration) -> Result<Vec<Registration>> {
        self.run_until(timeout, || false)
    }

    /// Runs the rendezvous, giving up at `timeout` or as soon as `abort`
    /// returns true. Registrations are returned in rank order.
    pub fn run_until(self, timeout: Duration, abort: impl Fn() -> bool) -> Result<Vec<Registration>> {
        let deadline = Instant::now() + timeout;
        self.listener.set_nonblocking(true)?;
        let mut joined: Vec<(TcpStream, Registration)> = Vec::with_capacity(self.nprocs);

        let outcome = loop {
            if joined.len() == self.nprocs {
                break Ok(());
            }
            if Instant::now() >= deadline || abort() {
                break Err((TableStatus::Timeout, TransportError::RendezvousTimeout(timeout.as_secs())));
            }
            let mut stream = match self.listener.accept() {
                Ok((s, _)) => s,
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    std::thread::sleep(Duration::from_millis(2));
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            stream.set_nonblocking(false)?;
            stream.set_read_timeout(Some(deadline.saturating_duration_since(Instant::now()).max(Duration::from_millis(1))))?;
            let reg = match Registration::read(&mut stream) {
                Ok(r) => r,
                // a stray or slow connection is not a registration
                Err(_) => continue,
            };
            if reg.nprocs as usize != self.nprocs || reg.rank as usize >= self.nprocs {
                joined.push((stream, reg));
                break Err((TableStatus::SizeMismatch, TransportError::SizeMismatch));
            }
            if joined.iter().any(|(_, r)| r.rank == reg.rank) {
                let rank = reg.rank as usize;
                joined.push((stream, reg));
                break Err((TableStatus::RankConflict, TransportError::RankConflict(rank)));
            }
            if joined.first().is_some_and(|(_, r)| r.encoding != reg.encoding) {
                joined.push((stream, reg));
                break Err((TableStatus::EncodingMismatch, TransportError::EncodingMismatch));
            }
            joined.push((stream, reg));
        };

        match outcome {
            Ok(()) => {
                joined.sort_by_key(|(_, r)| r.rank);
                let addrs: Vec<String> = joined.iter().map(|(_, r)| r.addr.clone()).collect();
                for (s, _) in &mut joined {
                    frame::write_table(s, TableStatus::Ok, &addrs)?;
                }
                Ok(joined.into_iter().map(|(_, r)| r).collect())
            }
            Err((status, err)) => {
                for (s, _) in &mut joined {
                    let _ = frame::write_table(s, status, &[]);
                }
                Err(err)
            }
        }
    }
}
