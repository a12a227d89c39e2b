//! Socket wire formats. All integers are big-endian.
//!
//! Data frame:
//!
//! ```text
//! "MPB1" | version u8 = 1 | kind u8 | src u32 | dest u32 | comm_id u32 | tag u32 | len u32 | payload
//! ```
//!
//! Rendezvous registration (rank -> coordinator):
//!
//! ```text
//! "MPB1" | rank u32 | nprocs u32 | encoding u8 | addr_len u16 | addr
//! ```
//!
//! Address table (coordinator -> rank):
//!
//! ```text
//! status u8 | n u32 | n x (addr_len u16 | addr)
//! ```
//!
//! Mesh hello (dialing rank -> accepting rank): `"MPB1" | rank u32`.

use std::io::{self, Read, Write};

use super::{Envelope, Kind, MAX_PAYLOAD};

pub const MAGIC: [u8; 4] = *b"MPB1";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 26;

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_be_bytes(b))
}

fn read_u16(r: &mut impl Read) -> io::Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_be_bytes(b))
}

fn read_u8(r: &mut impl Read) -> io::Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_magic(r: &mut impl Read) -> io::Result<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if m != MAGIC {
        return Err(invalid(format!("bad magic {m:02x?}")));
    }
    Ok(())
}

fn read_addr(r: &mut impl Read) -> io::Result<String> {
    let len = read_u16(r)? as usize;
    let mut raw = vec![0u8; len];
    r.read_exact(&mut raw)?;
    String::from_utf8(raw).map_err(|_| invalid("address is not UTF-8"))
}

fn put_addr(out: &mut Vec<u8>, addr: &str) {
    out.extend_from_slice(&(addr.len() as u16).to_be_bytes());
    out.extend_from_slice(addr.as_bytes());
}

pub fn encode_frame(env: &Envelope) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + env.payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(env.kind as u8);
    for v in [env.src as u32, env.dest as u32, env.comm_id, env.tag, env.payload.len() as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&env.payload);
    out
}

pub fn write_frame(w: &mut impl Write, env: &Envelope) -> io::Result<()> {
    w.write_all(&encode_frame(env))
}

/// Reads one frame. Returns `Ok(None)` on a clean end of stream before a header.
pub fn read_frame(r: &mut impl Read) -> io::Result<Option<Envelope>> {
    let mut header = [0u8; HEADER_LEN];
    let mut filled = 0;
    while filled < HEADER_LEN {
        match r.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    if header[..4] != MAGIC {
        return Err(invalid(format!("bad magic {:02x?}", &header[..4])));
    }
    if header[4] != VERSION {
        return Err(invalid(format!("unsupported frame version {}", header[4])));
    }
    let kind = match header[5] {
        0 => Kind::Data,
        1 => Kind::Control,
        k => return Err(invalid(format!("unknown frame kind {k}"))),
    };
    let word = |i: usize| u32::from_be_bytes(header[6 + 4 * i..10 + 4 * i].try_into().unwrap());
    let len = word(4) as usize;
    if len > MAX_PAYLOAD {
        return Err(invalid(format!("payload length {len} too large")));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)?;
    Ok(Some(Envelope {
        src: word(0) as usize,
        dest: word(1) as usize,
        comm_id: word(2),
        kind,
        tag: word(3),
        payload,
    }))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Registration {
    pub rank: u32,
    pub nprocs: u32,
    pub encoding: u8,
    pub addr: String,
}

impl Registration {
    pub fn write(&self, w: &mut impl Write) -> io::Result<()> {
        let mut out = Vec::with_capacity(15 + self.addr.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.rank.to_be_bytes());
        out.extend_from_slice(&self.nprocs.to_be_bytes());
        out.push(self.encoding);
        put_addr(&mut out, &self.addr);
        w.write_all(&out)
    }

    pub fn read(r: &mut impl Read) -> io::Result<Registration> {
        read_magic(r)?;
        Ok(Registration {
            rank: read_u32(r)?,
            nprocs: read_u32(r)?,
            encoding: read_u8(r)?,
            addr: read_addr(r)?,
        })
    }
}

/// Rendezvous outcome as sent to every registered rank.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum TableStatus {
    Ok = 0,
    RankConflict = 1,
    EncodingMismatch = 2,
    SizeMismatch = 3,
    Timeout = 4,
}

impl TableStatus {
    fn from_byte(b: u8) -> io::Result<TableStatus> {
        Ok(match b {
            0 => TableStatus::Ok,
            1 => TableStatus::RankConflict,
            2 => TableStatus::EncodingMismatch,
            3 => TableStatus::SizeMismatch,
            4 => TableStatus::Timeout,
            _ => return Err(invalid(format!("unknown table status {b}"))),
        })
    }
}

pub fn write_table(w: &mut impl Write, status: TableStatus, addrs: &[String]) -> io::Result<()> {
    let mut out = vec![status as u8];
    out.extend_from_slice(&(addrs.len() as u32).to_be_bytes());
    for a in addrs {
        put_addr(&mut out, a);
    }
    w.write_all(&out)
}

pub fn read_table(r: &mut impl Read) -> io::Result<(TableStatus, Vec<String>)> {
    let status = TableStatus::from_byte(read_u8(r)?)?;
    let n = read_u32(r)? as usize;
    if n > 1 << 16 {
        return Err(invalid(format!("address table of {n} entries")));
    }
    let addrs = (0..n).map(|_| read_addr(r)).collect::<io::Result<Vec<_>>>()?;
    Ok((status, addrs))
}

pub fn write_hello(w: &mut impl Write, rank: u32) -> io::Result<()> {
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&rank.to_be_bytes());
    w.write_all(&out)
}

pub fn read_hello(r: &mut impl Read) -> io::Result<u32> {
    read_magic(r)?;
    read_u32(r)
}
