//! A pack buffer bound to a communicator.
//!
//! Packing and communication chain in one expression:
//!
//! ```
//! use packmp::msgbuf::MsgBuf;
//! use packmp::transport::{run_in_process, Source};
//! use packmp::Encoding;
//!
//! run_in_process(2, Encoding::Portable, |ctx| {
//!     let mut buf = MsgBuf::new(&ctx);
//!     if ctx.rank() == 0 {
//!         buf.put(&1i32)?.put(&2.5f64)?.send(1)?;
//!     } else {
//!         buf.get(Source::Any)?;
//!         assert_eq!((buf.take::<i32>()?, buf.take::<f64>()?), (1, 2.5));
//!     }
//!     // every rank ends up with the root's values
//!     buf.put(&7u32)?.bcast(0)?;
//!     assert_eq!(buf.take::<u32>()?, 7);
//!     Ok::<_, packmp::Error>(())
//! })
//! .into_iter()
//! .collect::<Result<Vec<_>, _>>()
//! .unwrap();
//! ```

use std::sync::Arc;

use crate::pack::{self, Buffer, DynValue, Pack};
use crate::transport::{Communicator, Source, TagMatch, TransportContext, TransportError};
use crate::typedesc::{FieldKind, TypeRegistry};
use crate::{Error, Result};

/// Tag used by all message-buffer traffic unless overridden.
pub const DEFAULT_TAG: u32 = 0;

pub struct MsgBuf {
    ctx: TransportContext,
    comm: Communicator,
    buffer: Buffer,
    registry: Option<Arc<TypeRegistry>>,
    last_source: Option<usize>,
}

impl MsgBuf {
    /// An empty buffer on the world communicator, in the world's encoding.
    pub fn new(ctx: &TransportContext) -> MsgBuf {
        MsgBuf {
            ctx: ctx.clone(),
            comm: ctx.world(),
            buffer: Buffer::new(ctx.encoding()),
            registry: None,
            last_source: None,
        }
    }

    /// Enables [`put_value`](Self::put_value) / [`take_value`](Self::take_value).
    pub fn with_registry(mut self, registry: Arc<TypeRegistry>) -> MsgBuf {
        self.registry = Some(registry);
        self
    }

    pub fn set_registry(&mut self, registry: Arc<TypeRegistry>) {
        self.registry = Some(registry);
    }

    pub fn registry(&self) -> Option<&Arc<TypeRegistry>> {
        self.registry.as_ref()
    }

    pub fn set_communicator(&mut self, comm: Communicator) -> &mut Self {
        self.comm = comm;
        self
    }

    pub fn communicator(&self) -> &Communicator {
        &self.comm
    }

    pub fn context(&self) -> &TransportContext {
        &self.ctx
    }

    pub fn buffer(&self) -> &Buffer {
        &self.buffer
    }

    pub fn buffer_mut(&mut self) -> &mut Buffer {
        &mut self.buffer
    }

    pub fn data(&self) -> &[u8] {
        self.buffer.data()
    }

    pub fn size(&self) -> usize {
        self.buffer.size()
    }

    /// Sender of the last message taken by [`get`](Self::get).
    pub fn last_source(&self) -> Option<usize> {
        self.last_source
    }

    pub fn reset(&mut self) -> &mut Self {
        self.buffer.reset();
        self
    }

    pub fn put<T: Pack>(&mut self, value: &T) -> Result<&mut Self> {
        self.buffer.put(value)?;
        Ok(self)
    }

    pub fn take<T: Pack>(&mut self) -> Result<T> {
        Ok(self.buffer.take()?)
    }

    fn require_registry(&self) -> Result<Arc<TypeRegistry>> {
        self.registry.clone().ok_or(Error::NoRegistry)
    }

    /// Packs a descriptor-shaped value as `kind`.
    pub fn put_value(&mut self, kind: &FieldKind, value: &DynValue) -> Result<&mut Self> {
        let reg = self.require_registry()?;
        pack::pack(&mut self.buffer, &reg, kind, value)?;
        Ok(self)
    }

    pub fn take_value(&mut self, kind: &FieldKind) -> Result<DynValue> {
        let reg = self.require_registry()?;
        Ok(pack::unpack(&mut self.buffer, &reg, kind)?)
    }

    /// Appends a `u32` big-endian length and the bytes, one scatter segment.
    pub fn put_segment(&mut self, segment: &[u8]) -> Result<&mut Self> {
        let len = u32::try_from(segment.len())
            .ok()
            .filter(|&l| l as usize <= pack::MAX_LENGTH)
            .ok_or(Error::Pack(pack::PackError::LengthOverflow(segment.len())))?;
        self.buffer.put_raw(&len.to_be_bytes());
        self.buffer.put_raw(segment);
        Ok(self)
    }

    /// Sends the buffer to `dest` with the default tag and empties it.
    pub fn send(&mut self, dest: usize) -> Result<&mut Self> {
        self.send_tagged(dest, DEFAULT_TAG)
    }

    pub fn send_tagged(&mut self, dest: usize, tag: u32) -> Result<&mut Self> {
        let payload = self.buffer.data().to_vec();
        self.ctx.send(&self.comm, dest, tag, payload)?;
        self.buffer.reset();
        Ok(self)
    }

    /// Replaces the buffer with the next message from `source` on the default tag.
    pub fn get(&mut self, source: impl Into<Source>) -> Result<&mut Self> {
        self.get_tagged(source, DEFAULT_TAG)
    }

    pub fn get_tagged(&mut self, source: impl Into<Source>, tag: impl Into<TagMatch>) -> Result<&mut Self> {
        let msg = self.ctx.recv(&self.comm, source, tag)?;
        self.buffer.replace(msg.payload);
        self.last_source = Some(msg.source);
        Ok(self)
    }

    /// Every member ends up holding the root's bytes, ready to unpack.
    pub fn bcast(&mut self, root: usize) -> Result<&mut Self> {
        let payload = if self.comm.rank() == root { self.buffer.data().to_vec() } else { Vec::new() };
        let bytes = self.ctx.broadcast(&self.comm, root, payload)?;
        if self.comm.rank() == root {
            self.buffer.rewind();
        } else {
            self.buffer.replace(bytes);
        }
        Ok(self)
    }

    /// The root ends up with every member's bytes concatenated in rank
    /// order; other members are left empty.
    pub fn gather(&mut self, root: usize) -> Result<&mut Self> {
        let payload = self.buffer.data().to_vec();
        match self.ctx.gather(&self.comm, root, payload)? {
            Some(parts) => {
                self.buffer.replace(parts.concat());
            }
            None => {
                self.buffer.reset();
            }
        }
        Ok(self)
    }

    /// The root's buffer holds one length-prefixed segment per member (see
    /// [`put_segment`](Self::put_segment)); member `i` ends up with segment `i`.
    pub fn scatter(&mut self, root: usize) -> Result<&mut Self> {
        let n = self.comm.size();
        if root >= n {
            return Err(TransportError::InvalidRoot { root, size: n }.into());
        }
        let segments = if self.comm.rank() == root {
            match split_segments(self.buffer.data()) {
                Some(segs) => segs,
                None => {
                    // fail the other members too rather than leave them waiting
                    let _ = self.ctx.scatter(&self.comm, root, Vec::new());
                    return Err(Error::MalformedSegmentTable);
                }
            }
        } else {
            Vec::new()
        };
        let mine = self.ctx.scatter(&self.comm, root, segments)?;
        self.buffer.replace(mine);
        Ok(self)
    }
}

/// Splits a scatter segment table; `None` unless the bytes parse exactly.
pub fn split_segments(mut bytes: &[u8]) -> Option<Vec<Vec<u8>>> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        let len = u32::from_be_bytes(bytes.get(..4)?.try_into().ok()?) as usize;
        let seg = bytes.get(4..4 + len)?;
        out.push(seg.to_vec());
        bytes = &bytes[4 + len..];
    }
    Some(out)
}
