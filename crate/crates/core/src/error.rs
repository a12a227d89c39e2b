use thiserror::Error;

use crate::pack::PackError;
use crate::transport::TransportError;
use crate::typedesc::{IdlError, ValidationError};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Idl(#[from] IdlError),
    #[error("invalid type registry: {}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    Validation(Vec<ValidationError>),
    #[error(transparent)]
    Pack(#[from] PackError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("scatter buffer is not a table of length-prefixed segments")]
    MalformedSegmentTable,
    #[error("a runtime scope is already active in this process")]
    AlreadyActive,
    #[error("the runtime must be entered from within main")]
    OutsideMain,
    #[error("selector `{0}` registered twice")]
    DuplicateSelector(String),
    #[error("unknown selector `{0}`")]
    UnknownSelector(String),
    #[error("slave {slave} was started with a different handler table")]
    TableMismatch { slave: usize },
    #[error("no idle slave")]
    NoIdleSlave,
    #[error("no outstanding requests")]
    NoOutstanding,
    #[error("the world has no slaves")]
    NoSlaves,
    #[error("slave {slave}: {diagnostic}")]
    HandlerError { slave: usize, diagnostic: String },
    #[error("job {job} failed on slave {slave}: {diagnostic}")]
    JobFailed { job: usize, slave: usize, diagnostic: String },
    #[error("{0}")]
    Role(String),
    #[error("no type registry attached to the message buffer")]
    NoRegistry,
}
