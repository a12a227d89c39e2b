//! Launcher, IDL compiler, benchmark and demos for `packmp`.

pub mod bench;
pub mod demo;
pub mod idlc;
pub mod launch;
pub mod programs;
