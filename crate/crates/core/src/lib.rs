//! Descriptor-driven serialization and message passing.
//!
//! Compound values are described by [`typedesc`] descriptors, packed into
//! [`pack::Buffer`]s, and exchanged between ranks through a [`transport`]
//! runtime. [`msgbuf::MsgBuf`] combines a buffer with a communicator so that
//! packing and communication chain in one expression:
//!
//! ```ignore
//! buf.put(&a)?.put(&b)?.send(1)?;        // rank 0
//! let (a, b): (i32, f64) = (buf.get(Source::Any)?.take()?, buf.take()?);  // rank 1
//! ```
//!
//! [`spmd`] ties runtime teardown to scope exit and [`slave`] implements a
//! master/slave task farm on top.

pub mod msgbuf;
pub mod pack;
pub mod slave;
pub mod spmd;
pub mod transport;
pub mod typedesc;

mod error;

pub use error::Error;
pub use pack::{Buffer, DynValue, Encoding, Pack, PackError};
pub use typedesc::{FieldKind, TypeDescriptor, TypeRegistry};

pub type Result<T, E = Error> = std::result::Result<T, E>;
